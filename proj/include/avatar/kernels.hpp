#pragma once

// Compute kernels behind the autodiff ops. Every kernel has an OpenMP/GEMM
// implementation (namespace kernels) and a plain serial loop implementation
// (namespace kernels::reference) that the tests compare against.

#include <span>

namespace avatar::kernels {

struct ConvDims {
  int n = 1;
  int cin = 1, h = 1, w = 1;
  int cout = 1;
  int kh = 1, kw = 1;
  int sh = 1, sw = 1;
  int ph = 0, pw = 0;

  int hout() const { return (h + 2 * ph - kh) / sh + 1; }
  int wout() const { return (w + 2 * pw - kw) / sw + 1; }
  int patch() const { return cin * kh * kw; }
};

/// y[n,cout,hout,wout] = conv(x, w) + b. `bias` may be empty.
void conv2d_forward(const ConvDims& d, std::span<const double> x, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> y);

/// Accumulates into dx, dweight, dbias; any of them may be empty to skip.
void conv2d_backward(const ConvDims& d, std::span<const double> x, std::span<const double> weight,
                     std::span<const double> dy, std::span<double> dx, std::span<double> dweight,
                     std::span<double> dbias);

/// C[m,n] (+)= A[m,k] * B[k,n]; transposes apply to the stored row-major operands.
void gemm(int m, int n, int k, std::span<const double> a, bool trans_a, std::span<const double> b,
          bool trans_b, std::span<double> c, bool accumulate);

namespace reference {

void conv2d_forward(const ConvDims& d, std::span<const double> x, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> y);
void conv2d_backward(const ConvDims& d, std::span<const double> x, std::span<const double> weight,
                     std::span<const double> dy, std::span<double> dx, std::span<double> dweight,
                     std::span<double> dbias);
void gemm(int m, int n, int k, std::span<const double> a, bool trans_a, std::span<const double> b,
          bool trans_b, std::span<double> c, bool accumulate);

}  // namespace reference

int max_threads();

}  // namespace avatar::kernels
