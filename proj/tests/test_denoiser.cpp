#include <doctest.h>

#include <random>

#include "avatar/denoiser.hpp"
#include "avatar/latent_space.hpp"
#include "gradcheck.hpp"

using namespace avatar;

namespace {

Tensor random_tensor(Shape s, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  Tensor t(std::move(s));
  for (auto& v : t.vec()) v = n(rng);
  return t;
}

DenoiserConfig tiny() {
  DenoiserConfig c;
  c.base_channels = 8;
  c.channel_mult = {1, 2};
  c.attention_heads = 1;
  c.head_channels = 4;
  c.cond_dim = 6;
  c.spade_dim = 4;
  return c;
}

}  // namespace

TEST_CASE("toy denoiser shape contract and parameter budget") {
  const int L = static_cast<int>(LatentLayout::toy().total());
  Denoiser d(DenoiserConfig::toy(), L);
  CHECK(d.params().scalar_count() < 2'000'000);
  auto z = random_tensor({3, L}, 1);
  auto c = random_tensor({3, 32, 2, 2}, 2);
  auto eps = d.forward(ad::constant(z), {0, 500, 999}, ad::constant(c));
  CHECK(eps.shape() == Shape{3, L});
  CHECK(eps.value().all_finite());

  CHECK_THROWS_AS(d.forward(ad::constant(random_tensor({1, L + 1}, 3)), {1}, ad::constant(random_tensor({1, 32, 2, 2}, 4))),
                  std::invalid_argument);
  CHECK_THROWS_AS(d.forward(ad::constant(z), {1, 2, 3}, ad::constant(random_tensor({3, 32, 3, 3}, 4))),
                  std::invalid_argument);
}

TEST_CASE("batched and single predictions agree, items are independent") {
  Denoiser d(tiny(), 13);
  auto z = random_tensor({2, 13}, 5);
  auto c = random_tensor({2, 6, 2, 2}, 6);
  auto both = d.forward(ad::constant(z), {10, 40}, ad::constant(c)).value();
  for (int i = 0; i < 2; ++i) {
    ConditionTensor ci{Tensor({6, 2, 2}, std::vector<double>(c.vec().begin() + 24 * i, c.vec().begin() + 24 * (i + 1))),
                       false};
    auto one = d.predict_eps(std::span<const double>(z.data() + 13 * i, 13), i == 0 ? 10 : 40, ci);
    for (int k = 0; k < 13; ++k) CHECK(one[k] == doctest::Approx(both[13 * i + k]).epsilon(1e-12));
  }
}

TEST_CASE("condition and timestep both change the output") {
  Denoiser d(tiny(), 16);
  auto z = random_tensor({16}, 7);
  auto base = d.predict_eps(z.span(), 5, ConditionTensor::null(6, 2));
  ConditionTensor c{random_tensor({6, 2, 2}, 8), false};
  CHECK(d.predict_eps(z.span(), 5, c) != base);
  CHECK(d.predict_eps(z.span(), 6, ConditionTensor::null(6, 2)) != base);
  CHECK(d.predict_eps(z.span(), 5, ConditionTensor::null(6, 2)) == base);
}

TEST_CASE("paper condition concatenates 1408 channels and projects to 1048") {
  auto enc = IdentityEncoderConfig::paper();
  auto dc = DenoiserConfig::paper();
  ConditionBuilder b(enc, dc.cond_dim, dc.cond_side, 1);
  CHECK(b.concat_channels() == 1408);
  CHECK(enc.grid(2) == 28);
  CHECK(enc.grid(4) == 7);
  CHECK(enc.grid(4) == dc.cond_side);
}

TEST_CASE("toy condition builder resamples, broadcasts and projects") {
  auto enc = IdentityEncoderConfig::toy();
  ConditionBuilder b(enc, 32, 2, 1);
  IdentityEmbedding e{Tensor({64}, 0.0), Tensor({16, 8, 8}, 0.0), Tensor({32, 4, 4}, 0.0), Tensor({64, 2, 2}, 0.0)};
  auto zero = b.build(e);
  CHECK(zero.null_flag);
  CHECK(zero.grid.shape() == Shape{32, 2, 2});
  for (double v : zero.grid.vec()) CHECK(v == 0.0);

  // shuffling pixels inside one pooling cell changes nothing
  e.C2 = random_tensor({16, 8, 8}, 9);
  auto a = b.build(e);
  CHECK_FALSE(a.null_flag);
  IdentityEmbedding e2 = e;
  for (int c = 0; c < 16; ++c)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) std::swap(e2.C2[(c * 8 + y) * 8 + x], e2.C2[(c * 8 + 3 - y) * 8 + 3 - x]);
  auto a2 = b.build(e2);
  for (std::int64_t i = 0; i < a.grid.numel(); ++i) CHECK(a.grid[i] == doctest::Approx(a2.grid[i]).epsilon(1e-12));

  // V is spatially broadcast
  IdentityEmbedding ev{random_tensor({64}, 10), Tensor({16, 8, 8}, 0.0), Tensor({32, 4, 4}, 0.0), Tensor({64, 2, 2}, 0.0)};
  auto v = b.build(ev);
  for (int ch = 0; ch < 32; ++ch)
    for (int k = 1; k < 4; ++k) CHECK(v.grid[ch * 4 + k] == doctest::Approx(v.grid[ch * 4]).epsilon(1e-12));

  e.V = Tensor({63}, 0.0);
  CHECK_THROWS_AS(b.build(e), std::invalid_argument);
}

TEST_CASE("parameter and input gradients match finite differences") {
  Denoiser d(tiny(), 11);
  ad::Var z(random_tensor({2, 11}, 11), true);
  auto c = ad::constant(random_tensor({2, 6, 2, 2}, 12));
  auto w = ad::constant(random_tensor({2, 11}, 13));
  auto f = [&] { return ad::sum(ad::mul(d.forward(z, {3, 77}, c), w)); };

  CHECK(avatar::testing::gradcheck(f, z, {}, 1e-6, 1e-8).max_rel_err <= 1e-4);
  std::mt19937_64 rng(4);
  const auto& items = d.params().items();
  double worst = 0.0;
  for (int probe = 0; probe < 12; ++probe) {
    auto p = items[rng() % items.size()].second;
    const auto i = static_cast<std::int64_t>(rng() % p.numel());
    worst = std::max(worst, avatar::testing::gradcheck(f, p, {i}, 1e-6, 1e-8).max_rel_err);
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("archive round trip and timestep embedding") {
  Denoiser d(tiny(), 9);
  auto back = Denoiser::from_archive(d.to_archive());
  auto z = random_tensor({9}, 14);
  ConditionTensor c{random_tensor({6, 2, 2}, 15), false};
  CHECK(back.predict_eps(z.span(), 12, c) == d.predict_eps(z.span(), 12, c));
  CHECK(back.params().checksum() == d.params().checksum());

  auto e = timestep_embedding({0, 7}, 8);
  for (int i = 0; i < 4; ++i) {
    CHECK(e[i] == 1.0);
    CHECK(e[4 + i] == 0.0);
  }
  CHECK(e[8] == doctest::Approx(std::cos(7.0)));
}
