#include <doctest.h>

#include <random>
#include <vector>

#include "avatar/kernels.hpp"

using namespace avatar::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> d;
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("parallel conv matches the serial reference") {
  std::mt19937_64 rng(7);
  const ConvDims configs[] = {
      {.n = 3, .cin = 4, .h = 9, .w = 7, .cout = 5, .kh = 3, .kw = 3, .sh = 1, .sw = 1, .ph = 1, .pw = 1},
      {.n = 2, .cin = 3, .h = 8, .w = 8, .cout = 6, .kh = 3, .kw = 3, .sh = 2, .sw = 2, .ph = 1, .pw = 1},
      {.n = 2, .cin = 5, .h = 4, .w = 6, .cout = 2, .kh = 1, .kw = 1},
      {.n = 4, .cin = 3, .h = 1, .w = 11, .cout = 4, .kh = 1, .kw = 3, .sh = 1, .sw = 2, .ph = 0, .pw = 1},
  };
  for (const auto& d : configs) {
    const std::size_t xs = static_cast<std::size_t>(d.n) * d.cin * d.h * d.w;
    const std::size_t ys = static_cast<std::size_t>(d.n) * d.cout * d.hout() * d.wout();
    const std::size_t ws = static_cast<std::size_t>(d.cout) * d.patch();
    auto x = random_vec(xs, rng);
    auto w = random_vec(ws, rng);
    auto b = random_vec(d.cout, rng);
    auto dy = random_vec(ys, rng);
    std::vector<double> y1(ys), y2(ys);
    conv2d_forward(d, x, w, b, y1);
    reference::conv2d_forward(d, x, w, b, y2);
    CHECK(max_diff(y1, y2) < 1e-12);

    std::vector<double> dx1(xs), dx2(xs), dw1(ws), dw2(ws), db1(d.cout), db2(d.cout);
    conv2d_backward(d, x, w, dy, dx1, dw1, db1);
    reference::conv2d_backward(d, x, w, dy, dx2, dw2, db2);
    CHECK(max_diff(dx1, dx2) < 1e-11);
    CHECK(max_diff(dw1, dw2) < 1e-11);
    CHECK(max_diff(db1, db2) < 1e-11);
  }
}

TEST_CASE("gemm variants match the serial reference") {
  std::mt19937_64 rng(8);
  const int m = 5, n = 7, k = 4;
  auto a = random_vec(m * k, rng);
  auto b = random_vec(k * n, rng);
  for (bool ta : {false, true})
    for (bool tb : {false, true})
      for (bool acc : {false, true}) {
        std::vector<double> c1(m * n, 1.0), c2(m * n, 1.0);
        gemm(m, n, k, a, ta, b, tb, c1, acc);
        reference::gemm(m, n, k, a, ta, b, tb, c2, acc);
        CHECK(max_diff(c1, c2) < 1e-12);
      }
}

TEST_CASE("conv backward is independent of thread count") {
  std::mt19937_64 rng(9);
  ConvDims d{.n = 6, .cin = 3, .h = 6, .w = 6, .cout = 4, .kh = 3, .kw = 3, .sh = 1, .sw = 1, .ph = 1, .pw = 1};
  auto x = random_vec(6 * 3 * 36, rng);
  auto w = random_vec(4 * 27, rng);
  auto dy = random_vec(6 * 4 * 36, rng);
  std::vector<double> dw1(w.size()), dw2(w.size());
  conv2d_backward(d, x, w, dy, {}, dw1, {});
  conv2d_backward(d, x, w, dy, {}, dw2, {});
  CHECK(dw1 == dw2);
}
