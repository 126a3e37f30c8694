#include <doctest.h>

#include <random>

#include "avatar/latent_space.hpp"
#include "avatar/texture_codec.hpp"
#include "gradcheck.hpp"

using namespace avatar;

namespace {

ReflectanceTriplet stripes(int size, double freq, double base) {
  auto t = ReflectanceTriplet::constant(size, base, 0.4);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        t.diffuse[(c * size + y) * size + x] = base + 0.25 * std::sin(freq * x + c);
        t.specular[(c * size + y) * size + x] = 0.4 + 0.2 * std::cos(freq * y);
      }
  return t;
}

CodecConfig tiny() {
  CodecConfig c;
  c.resolution = 16;
  c.downsample_factor = 4;
  c.channel_mult = {1, 1, 2};
  c.base_channels = 4;
  c.attention_resolution = 4;
  return c;
}

}  // namespace

TEST_CASE("toy encode/decode shape contract") {
  TextureCodec codec(CodecConfig::toy());
  auto x = stripes(64, 0.3, 0.5);
  auto z = codec.encode(x);
  CHECK(z.shape() == Shape{1, 8, 8});
  CHECK(static_cast<std::size_t>(z.numel()) == LatentLayout::toy().tex_len);
  CHECK(codec.encode(x).vec() == z.vec());

  auto y = codec.decode(z);
  CHECK(y.diffuse.shape() == Shape{3, 64, 64});
  CHECK(y.normals.shape() == Shape{3, 64, 64});
  y.validate();

  auto zero = codec.decode(Tensor({1, 8, 8}, 0.0));
  CHECK(zero.diffuse.all_finite());
  zero.validate();

  CHECK_THROWS_AS(codec.encode(ReflectanceTriplet::constant(32, 0.5, 0.5)), std::invalid_argument);
  CHECK_THROWS_AS(codec.decode(Tensor({1, 4, 4}, 0.0)), std::invalid_argument);
}

TEST_CASE("preset arithmetic") {
  auto p = CodecConfig::paper();
  p.validate();
  CHECK(p.latent_side() == 64);
  CHECK(p.latent_side() * p.latent_side() * p.latent_channels == 4096);
  CHECK(CodecConfig::toy().latent_side() == 8);
  auto bad = CodecConfig::toy();
  bad.resolution = 60;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = CodecConfig::toy();
  bad.downsample_factor = 4;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("discriminator branches take 6 and 3 channels") {
  BranchedDiscriminator d(8, 1);
  CHECK(d.branch_in_channels(0) == 6);
  CHECK(d.branch_in_channels(1) == 3);
  CHECK(d.params().get("d.b1a.weight").shape() == Shape{8, 6, 4, 4});
  CHECK(d.params().get("d.b2a.weight").shape() == Shape{8, 3, 4, 4});
  auto out = d(ad::constant(Tensor({2, 9, 16, 16}, 0.3)));
  CHECK(out.shape() == Shape{2, 1, 4, 4});
}

TEST_CASE("reconstruction gradient w.r.t. decoder parameters matches finite differences") {
  TextureCodec codec(tiny());
  auto x = ad::constant(stack_triplets({stripes(16, 0.7, 0.45)}));
  auto f = [&] { return ad::mean(ad::abs(ad::sub(codec.decode(codec.encode(x)), x))); };
  auto dec = codec.decoder_params();
  REQUIRE(dec.size() > 10);
  std::mt19937_64 rng(3);
  double worst = 0.0;
  for (int probe = 0; probe < 10; ++probe) {
    auto p = dec[rng() % dec.size()];
    const std::int64_t i = static_cast<std::int64_t>(rng() % p.numel());
    auto r = avatar::testing::gradcheck(f, p, {i}, 1e-6, 1e-8);
    worst = std::max(worst, r.max_rel_err);
  }
  CHECK(worst <= 1e-3);
}

TEST_CASE("disabling the adversarial term leaves reconstruction plus perceptual") {
  TextureCodec codec(tiny());
  IdentityEncoderConfig ec;
  ec.input_size = 16;
  IdentityEncoder enc(ec);
  AeTrainConfig cfg;
  cfg.adversarial = false;
  cfg.batch_size = 2;
  AeTrainer tr(codec, enc, cfg);
  auto l = tr.step({stripes(16, 0.5, 0.4), stripes(16, 0.9, 0.6)});
  CHECK(l.adversarial == 0.0);
  CHECK(l.discriminator == 0.0);
  CHECK(l.total == l.reconstruction + l.perceptual);
}

TEST_CASE("training on a constant batch lowers the reconstruction loss") {
  TextureCodec codec(tiny());
  IdentityEncoderConfig ec;
  ec.input_size = 16;
  IdentityEncoder enc(ec);
  AeTrainConfig cfg;
  cfg.adversarial_start = 25;
  AeTrainer tr(codec, enc, cfg);
  std::vector<ReflectanceTriplet> batch(2, ReflectanceTriplet::constant(16, 0.7, 0.2));
  const auto dchk = codec.params().checksum();
  double first = 0.0, last = 0.0;
  for (int s = 0; s < 50; ++s) {
    auto l = tr.step(batch);
    if (s == 0) first = l.reconstruction;
    last = l.reconstruction;
  }
  CHECK(codec.params().checksum() != dchk);
  CHECK(last < 0.75 * first);
}

TEST_CASE("archive round trip and latent scale calibration") {
  TextureCodec codec(tiny());
  std::vector<ReflectanceTriplet> xs{stripes(16, 0.3, 0.4), stripes(16, 0.8, 0.6), stripes(16, 1.3, 0.5)};
  codec.calibrate_scale(xs);
  double s = 0.0, s2 = 0.0;
  int n = 0;
  for (const auto& x : xs) {
    const Tensor z = codec.encode(x);
    for (double v : z.vec()) {
      s += v;
      s2 += v * v;
      ++n;
    }
  }
  CHECK(std::sqrt(s2 / n - (s / n) * (s / n)) == doctest::Approx(1.0).epsilon(1e-9));

  auto back = TextureCodec::from_archive(codec.to_archive());
  CHECK(back.latent_scale() == codec.latent_scale());
  CHECK(back.encode(xs[1]).vec() == codec.encode(xs[1]).vec());
  CHECK(back.decode(codec.encode(xs[0])) == codec.decode(codec.encode(xs[0])));
}
