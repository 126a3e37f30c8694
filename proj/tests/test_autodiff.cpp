#include <doctest.h>

#include <random>

#include "avatar/autodiff.hpp"
#include "avatar/nn.hpp"
#include "gradcheck.hpp"

using namespace avatar;
using avatar::testing::gradcheck;

namespace {

nn::Rng rng(1234);

ad::Var leaf(Shape s, double std = 1.0) { return ad::Var(nn::randn(std::move(s), std, rng), true); }

// Contract the output against fixed random weights so every element matters.
ad::Var probe_loss(const ad::Var& y) {
  std::normal_distribution<double> d;
  Tensor w(y.shape());
  std::mt19937_64 local(static_cast<std::uint64_t>(y.numel()) * 7919u);
  for (auto& v : w.vec()) v = d(local);
  return ad::sum(ad::mul(y, ad::constant(w)));
}

void check(const std::function<ad::Var(const ad::Var&)>& op, Shape s, double tol = 1e-6, double std = 1.0) {
  auto x = leaf(std::move(s), std);
  auto r = gradcheck([&] { return probe_loss(op(x)); }, x);
  CHECK(r.max_rel_err < tol);
}

}  // namespace

TEST_CASE("unary op gradients match finite differences") {
  check([](const ad::Var& x) { return ad::tanh(x); }, {3, 4});
  check([](const ad::Var& x) { return ad::sigmoid(x); }, {3, 4});
  check([](const ad::Var& x) { return ad::silu(x); }, {3, 4});
  check([](const ad::Var& x) { return ad::exp(x); }, {5});
  check([](const ad::Var& x) { return ad::square(x); }, {5});
  check([](const ad::Var& x) { return ad::scale(x, -2.5); }, {5});
  check([](const ad::Var& x) { return ad::log(ad::add_scalar(ad::square(x), 1.0)); }, {6});
  check([](const ad::Var& x) { return ad::sqrt(ad::add_scalar(ad::square(x), 0.5)); }, {6});
  check([](const ad::Var& x) { return ad::leaky_relu(x, 0.2); }, {6});
}

TEST_CASE("broadcasting binary ops") {
  auto a = leaf({2, 3, 4});
  auto b = leaf({3, 1});
  auto f = [&] { return probe_loss(ad::div(ad::mul(ad::add(a, b), ad::sub(a, b)), ad::add_scalar(ad::square(b), 1.0))); };
  CHECK(gradcheck(f, a).max_rel_err < 1e-6);
  CHECK(gradcheck(f, b).max_rel_err < 1e-6);
  auto c = ad::add(a, b);
  CHECK(c.shape() == Shape{2, 3, 4});
  CHECK(c.value()[5] == doctest::Approx(a.value()[5] + b.value()[1]));
}

TEST_CASE("reductions, reshaping and concat") {
  check([](const ad::Var& x) { return ad::sum_axis(x, 1, false); }, {2, 3, 4});
  check([](const ad::Var& x) { return ad::sum_axis(x, -1, true); }, {2, 3, 4});
  check([](const ad::Var& x) { return ad::transpose_last(x); }, {2, 3, 4});
  check([](const ad::Var& x) { return ad::slice(x, 2, 1, 2); }, {2, 3, 4});
  check([](const ad::Var& x) { return ad::concat({x, ad::scale(x, 2.0), ad::slice(x, 1, 0, 1)}, 1); }, {2, 3, 4});
  check([](const ad::Var& x) { return ad::reshape(ad::mean(ad::square(x)), {1}); }, {7});
  check([](const ad::Var& x) { return ad::reshape(ad::l2_norm(x), {1}); }, {7});
  check([](const ad::Var& x) { return ad::softmax(x); }, {3, 5});
}

TEST_CASE("matmul, plain and batched") {
  auto a = leaf({3, 4});
  auto b = leaf({4, 2});
  auto f = [&] { return probe_loss(ad::matmul(a, b)); };
  CHECK(gradcheck(f, a).max_rel_err < 1e-6);
  CHECK(gradcheck(f, b).max_rel_err < 1e-6);
  auto p = leaf({2, 3, 4});
  auto q = leaf({2, 4, 5});
  auto g = [&] { return probe_loss(ad::matmul(p, q)); };
  CHECK(gradcheck(g, p).max_rel_err < 1e-6);
  CHECK(gradcheck(g, q).max_rel_err < 1e-6);
}

TEST_CASE("convolutions and resampling") {
  auto x = leaf({2, 3, 6, 6});
  auto w = leaf({4, 3, 3, 3});
  auto bias = leaf({4});
  for (int stride : {1, 2}) {
    auto f = [&] { return probe_loss(ad::conv2d(x, w, bias, stride, 1)); };
    CHECK(gradcheck(f, x).max_rel_err < 1e-6);
    CHECK(gradcheck(f, w).max_rel_err < 1e-6);
    CHECK(gradcheck(f, bias).max_rel_err < 1e-6);
  }
  auto x1 = leaf({2, 3, 9});
  auto w1 = leaf({5, 3, 3});
  auto b1 = leaf({5});
  auto f1 = [&] { return probe_loss(ad::conv1d(x1, w1, b1, 2, 1)); };
  CHECK(gradcheck(f1, x1).max_rel_err < 1e-6);
  CHECK(gradcheck(f1, w1).max_rel_err < 1e-6);
  CHECK(gradcheck(f1, b1).max_rel_err < 1e-6);
  auto w11 = leaf({4, 3, 1, 1});
  auto f11 = [&] { return probe_loss(ad::conv2d(x, w11, ad::Var(), 1, 0)); };
  CHECK(gradcheck(f11, x).max_rel_err < 1e-5);
  CHECK(gradcheck(f11, w11).max_rel_err < 1e-6);

  check([](const ad::Var& v) { return ad::upsample_nearest(v, 2); }, {2, 2, 3, 3});
  check([](const ad::Var& v) { return ad::upsample_nearest(v, 2); }, {2, 2, 5});
  check([](const ad::Var& v) { return ad::avg_pool(v, 2); }, {2, 2, 4, 4});
  check([](const ad::Var& v) { return ad::avg_pool(v, 3); }, {1, 2, 9});
}

TEST_CASE("group norm normalizes and differentiates") {
  check([](const ad::Var& v) { return ad::group_norm(v, 2); }, {2, 4, 5}, 1e-5);
  auto x = leaf({1, 4, 8}, 3.0);
  auto y = ad::group_norm(x, 2);
  double m = 0.0, s2 = 0.0;
  for (int i = 0; i < 16; ++i) m += y.value()[i];
  for (int i = 0; i < 16; ++i) s2 += y.value()[i] * y.value()[i];
  CHECK(m / 16 == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(s2 / 16 == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("gradients accumulate across shared subexpressions") {
  auto x = leaf({3});
  auto y = ad::sum(ad::mul(x, x));  // d/dx = 2x via two edges
  ad::backward(y);
  for (int i = 0; i < 3; ++i) CHECK(x.grad()[i] == doctest::Approx(2.0 * x.value()[i]));
}

TEST_CASE("no-grad guard records nothing") {
  auto x = leaf({3});
  ad::NoGradGuard guard;
  auto y = ad::sum(ad::square(x));
  CHECK_FALSE(y.requires_grad());
  CHECK(y.node()->inputs.empty());
}

TEST_CASE("adam decreases a quadratic") {
  nn::ParamSet ps;
  auto p = ps.add("p", Tensor({4}, 3.0));
  nn::Adam opt(ps, {.lr = 0.1});
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 100; ++i) {
    ps.zero_grad();
    auto loss = ad::sum(ad::square(p));
    if (i == 0) first = loss.item();
    last = loss.item();
    ad::backward(loss);
    opt.step();
  }
  CHECK(last < 0.01 * first);
}
