#include "avatar/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace avatar::kernels {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRow = Eigen::Map<RowMat>;
using CMapRow = Eigen::Map<const RowMat>;

bool is_pointwise(const ConvDims& d) {
  return d.kh == 1 && d.kw == 1 && d.sh == 1 && d.sw == 1 && d.ph == 0 && d.pw == 0;
}

// cols[(c*kh+i)*kw+j, oy*wout+ox]
// Output columns [lo, hi) whose input column ox*s - p + j lies inside [0, w).
inline void valid_range(int wo, int s, int p, int j, int w, int& lo, int& hi) {
  lo = std::max(0, (p - j + s - 1) / s);
  hi = std::min(wo, (w - 1 + p - j) / s + 1);
  if (p - j < 0) lo = 0;
  if (w - 1 + p - j < 0) hi = 0;
  if (hi < lo) hi = lo;
}

void im2col(const ConvDims& d, const double* x, double* cols) {
  const int ho = d.hout(), wo = d.wout();
  for (int c = 0; c < d.cin; ++c) {
    const double* xc = x + static_cast<std::ptrdiff_t>(c) * d.h * d.w;
    for (int i = 0; i < d.kh; ++i) {
      for (int j = 0; j < d.kw; ++j) {
        double* row = cols + static_cast<std::ptrdiff_t>((c * d.kh + i) * d.kw + j) * ho * wo;
        int lo, hi;
        valid_range(wo, d.sw, d.pw, j, d.w, lo, hi);
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * d.sh - d.ph + i;
          double* dst = row + oy * wo;
          if (iy < 0 || iy >= d.h) {
            std::fill(dst, dst + wo, 0.0);
            continue;
          }
          const double* src = xc + iy * d.w - d.pw + j;
          std::fill(dst, dst + lo, 0.0);
          if (d.sw == 1) {
            std::copy(src + lo, src + hi, dst + lo);
          } else {
            for (int ox = lo; ox < hi; ++ox) dst[ox] = src[ox * d.sw];
          }
          std::fill(dst + hi, dst + wo, 0.0);
        }
      }
    }
  }
}

void col2im_add(const ConvDims& d, const double* cols, double* dx) {
  const int ho = d.hout(), wo = d.wout();
  for (int c = 0; c < d.cin; ++c) {
    double* xc = dx + static_cast<std::ptrdiff_t>(c) * d.h * d.w;
    for (int i = 0; i < d.kh; ++i) {
      for (int j = 0; j < d.kw; ++j) {
        const double* row = cols + static_cast<std::ptrdiff_t>((c * d.kh + i) * d.kw + j) * ho * wo;
        int lo, hi;
        valid_range(wo, d.sw, d.pw, j, d.w, lo, hi);
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * d.sh - d.ph + i;
          if (iy < 0 || iy >= d.h) continue;
          double* dst = xc + iy * d.w - d.pw + j;
          const double* src = row + oy * wo;
          if (d.sw == 1) {
            for (int ox = lo; ox < hi; ++ox) dst[ox] += src[ox];
          } else {
            for (int ox = lo; ox < hi; ++ox) dst[ox * d.sw] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void gemm(int m, int n, int k, std::span<const double> a, bool trans_a, std::span<const double> b,
          bool trans_b, std::span<double> c, bool accumulate) {
  MapRow C(c.data(), m, n);
  if (!accumulate) C.setZero();
  if (!trans_a && !trans_b) {
    C.noalias() += CMapRow(a.data(), m, k) * CMapRow(b.data(), k, n);
  } else if (trans_a && !trans_b) {
    C.noalias() += CMapRow(a.data(), k, m).transpose() * CMapRow(b.data(), k, n);
  } else if (!trans_a && trans_b) {
    C.noalias() += CMapRow(a.data(), m, k) * CMapRow(b.data(), n, k).transpose();
  } else {
    C.noalias() += CMapRow(a.data(), k, m).transpose() * CMapRow(b.data(), n, k).transpose();
  }
}

void conv2d_forward(const ConvDims& d, std::span<const double> x, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> y) {
  const int ho = d.hout(), wo = d.wout();
  const std::ptrdiff_t in_sz = static_cast<std::ptrdiff_t>(d.cin) * d.h * d.w;
  const std::ptrdiff_t out_sz = static_cast<std::ptrdiff_t>(d.cout) * ho * wo;
  const bool pointwise = is_pointwise(d);
#pragma omp parallel
  {
    std::vector<double> cols(pointwise ? 0 : static_cast<std::size_t>(d.patch()) * ho * wo);
#pragma omp for schedule(static)
    for (int b = 0; b < d.n; ++b) {
      const double* xb = x.data() + b * in_sz;
      if (!pointwise) im2col(d, xb, cols.data());
      const double* src = pointwise ? xb : cols.data();
      MapRow Y(y.data() + b * out_sz, d.cout, ho * wo);
      Y.noalias() = CMapRow(weight.data(), d.cout, d.patch()) * CMapRow(src, d.patch(), ho * wo);
      if (!bias.empty()) Y.colwise() += Eigen::Map<const Eigen::VectorXd>(bias.data(), d.cout);
    }
  }
}

void conv2d_backward(const ConvDims& d, std::span<const double> x, std::span<const double> weight,
                     std::span<const double> dy, std::span<double> dx, std::span<double> dweight,
                     std::span<double> dbias) {
  const int ho = d.hout(), wo = d.wout();
  const std::ptrdiff_t in_sz = static_cast<std::ptrdiff_t>(d.cin) * d.h * d.w;
  const std::ptrdiff_t out_sz = static_cast<std::ptrdiff_t>(d.cout) * ho * wo;
  const std::ptrdiff_t wsz = static_cast<std::ptrdiff_t>(d.cout) * d.patch();
  const bool pointwise = is_pointwise(d);
  const bool want_w = !dweight.empty();
  // Per-item weight gradients, reduced afterwards in item order so the
  // result does not depend on the thread count.
  std::vector<double> dw_items(want_w ? static_cast<std::size_t>(wsz) * d.n : 0);
#pragma omp parallel
  {
    std::vector<double> cols(static_cast<std::size_t>(d.patch()) * ho * wo);
#pragma omp for schedule(static)
    for (int b = 0; b < d.n; ++b) {
      const double* xb = x.data() + b * in_sz;
      CMapRow DY(dy.data() + b * out_sz, d.cout, ho * wo);
      if (want_w) {
        const double* src = xb;
        if (!pointwise) {
          im2col(d, xb, cols.data());
          src = cols.data();
        }
        MapRow(dw_items.data() + b * wsz, d.cout, d.patch()).noalias() =
            DY * CMapRow(src, d.patch(), ho * wo).transpose();
      }
      if (!dx.empty()) {
        if (pointwise) {
          MapRow(dx.data() + b * in_sz, d.cin, d.h * d.w).noalias() +=
              CMapRow(weight.data(), d.cout, d.patch()).transpose() * DY;
        } else {
          MapRow(cols.data(), d.patch(), ho * wo).noalias() =
              CMapRow(weight.data(), d.cout, d.patch()).transpose() * DY;
          col2im_add(d, cols.data(), dx.data() + b * in_sz);
        }
      }
    }
  }
  if (want_w) {
    for (int b = 0; b < d.n; ++b)
      for (std::ptrdiff_t i = 0; i < wsz; ++i) dweight[i] += dw_items[b * wsz + i];
  }
  if (!dbias.empty()) {
    for (int b = 0; b < d.n; ++b)
      for (int o = 0; o < d.cout; ++o) {
        const double* row = dy.data() + b * out_sz + static_cast<std::ptrdiff_t>(o) * ho * wo;
        double s = 0.0;
        for (int p = 0; p < ho * wo; ++p) s += row[p];
        dbias[o] += s;
      }
  }
}

namespace reference {

void gemm(int m, int n, int k, std::span<const double> a, bool trans_a, std::span<const double> b,
          bool trans_b, std::span<double> c, bool accumulate) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double s = accumulate ? c[i * n + j] : 0.0;
      for (int p = 0; p < k; ++p) {
        const double av = trans_a ? a[p * m + i] : a[i * k + p];
        const double bv = trans_b ? b[j * k + p] : b[p * n + j];
        s += av * bv;
      }
      c[i * n + j] = s;
    }
}

void conv2d_forward(const ConvDims& d, std::span<const double> x, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> y) {
  const int ho = d.hout(), wo = d.wout();
  for (int b = 0; b < d.n; ++b)
    for (int o = 0; o < d.cout; ++o)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          double s = bias.empty() ? 0.0 : bias[o];
          for (int c = 0; c < d.cin; ++c)
            for (int i = 0; i < d.kh; ++i)
              for (int j = 0; j < d.kw; ++j) {
                const int iy = oy * d.sh - d.ph + i, ix = ox * d.sw - d.pw + j;
                if (iy < 0 || iy >= d.h || ix < 0 || ix >= d.w) continue;
                s += weight[((o * d.cin + c) * d.kh + i) * d.kw + j] *
                     x[((static_cast<std::ptrdiff_t>(b) * d.cin + c) * d.h + iy) * d.w + ix];
              }
          y[((static_cast<std::ptrdiff_t>(b) * d.cout + o) * ho + oy) * wo + ox] = s;
        }
}

void conv2d_backward(const ConvDims& d, std::span<const double> x, std::span<const double> weight,
                     std::span<const double> dy, std::span<double> dx, std::span<double> dweight,
                     std::span<double> dbias) {
  const int ho = d.hout(), wo = d.wout();
  for (int b = 0; b < d.n; ++b)
    for (int o = 0; o < d.cout; ++o)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          const double g = dy[((static_cast<std::ptrdiff_t>(b) * d.cout + o) * ho + oy) * wo + ox];
          if (!dbias.empty()) dbias[o] += g;
          for (int c = 0; c < d.cin; ++c)
            for (int i = 0; i < d.kh; ++i)
              for (int j = 0; j < d.kw; ++j) {
                const int iy = oy * d.sh - d.ph + i, ix = ox * d.sw - d.pw + j;
                if (iy < 0 || iy >= d.h || ix < 0 || ix >= d.w) continue;
                const std::ptrdiff_t xi = ((static_cast<std::ptrdiff_t>(b) * d.cin + c) * d.h + iy) * d.w + ix;
                const std::ptrdiff_t wi = ((o * d.cin + c) * d.kh + i) * d.kw + j;
                if (!dweight.empty()) dweight[wi] += g * x[xi];
                if (!dx.empty()) dx[xi] += g * weight[wi];
              }
        }
}

}  // namespace reference

}  // namespace avatar::kernels
