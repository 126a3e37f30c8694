#include <doctest.h>

#include <random>

#include "avatar/identity_encoder.hpp"
#include "gradcheck.hpp"

using namespace avatar;

namespace {

// Smooth random image: a few coloured Gaussian blobs on a grey field.
Tensor blob_image(int size, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor img({3, size, size}, 0.3);
  for (int b = 0; b < 5; ++b) {
    const double cx = u(rng) * size, cy = u(rng) * size, r = (0.1 + 0.2 * u(rng)) * size;
    const double col[3] = {u(rng), u(rng), u(rng)};
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const double k = std::exp(-((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (2 * r * r));
          double& v = img[(c * size + y) * size + x];
          v = std::clamp(v + 0.6 * k * (col[c] - 0.5), 0.0, 1.0);
        }
  }
  return img;
}

IdentityEmbedding with_v(std::vector<double> v) {
  IdentityEmbedding e;
  e.V = Tensor::from(v);
  return e;
}

double mean_offdiag_cos(const IdentityEncoder& enc, const std::vector<Tensor>& imgs) {
  double s = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < imgs.size(); ++i)
    for (std::size_t j = i + 1; j < imgs.size(); ++j, ++n)
      s += cosine_similarity(enc.embed(imgs[i]).V, enc.embed(imgs[j]).V);
  return s / n;
}

}  // namespace

TEST_CASE("embedding is deterministic with toy shapes") {
  IdentityEncoder enc(IdentityEncoderConfig::toy());
  auto img = blob_image(32, 1);
  auto a = enc.embed(img), b = enc.embed(img);
  CHECK(a.V.vec() == b.V.vec());
  CHECK(a.C2.shape() == Shape{16, 8, 8});
  CHECK(a.C3.shape() == Shape{32, 4, 4});
  CHECK(a.C4.shape() == Shape{64, 2, 2});
  CHECK(a.V.shape() == Shape{64});
  CHECK(a.V.all_finite());
  IdentityEncoder enc2(IdentityEncoderConfig::toy());
  CHECK(enc2.embed(img).V.vec() == a.V.vec());
  CHECK_THROWS_AS(enc.embed(Tensor({3, 16, 16})), std::invalid_argument);
}

TEST_CASE("paper preset activation shapes") {
  IdentityEncoder enc(IdentityEncoderConfig::paper());
  auto e = enc.embed(Tensor({3, 112, 112}, 0.4));
  CHECK(e.C2.shape() == Shape{128, 28, 28});
  CHECK(e.C3.shape() == Shape{256, 14, 14});
  CHECK(e.C4.shape() == Shape{512, 7, 7});
  CHECK(e.V.shape() == Shape{512});
}

TEST_CASE("cosine distance cases") {
  auto a = with_v({1.0, -2.0, 0.5});
  CHECK(cosine_distance(a, a) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(cosine_distance(a, with_v({-1.0, 2.0, -0.5})) == doctest::Approx(2.0));
  CHECK(cosine_distance(a, with_v({3.5, -7.0, 1.75})) == doctest::Approx(0.0).scale(1.0).epsilon(1e-15));
  auto b = with_v({0.3, 0.1, -0.9});
  CHECK(cosine_distance(a, b) == cosine_distance(b, a));
  CHECK_THROWS_AS(cosine_distance(a, with_v({0, 0, 0})), std::invalid_argument);
}

TEST_CASE("perceptual distance normalization") {
  IdentityEncoder enc(IdentityEncoderConfig::toy());
  auto a = enc.embed(blob_image(32, 2));
  CHECK(perceptual_distance(a, a) == 0.0);
  auto b = a;
  const double delta = 0.25;
  b.C3[5] += delta;
  CHECK(perceptual_distance(a, b) == doctest::Approx(delta * delta / a.C3.numel()).epsilon(1e-12));
  CHECK(perceptual_distance(a, b, PerceptualNorm::L2) == doctest::Approx(delta / a.C3.numel()).epsilon(1e-12));
  auto c = enc.embed(blob_image(32, 3));
  CHECK(perceptual_distance(a, c) == perceptual_distance(c, a));
  CHECK(perceptual_distance(a, c) > 0.0);
}

TEST_CASE("differentiable forms agree with the value forms") {
  IdentityEncoder enc(IdentityEncoderConfig::toy());
  auto img1 = blob_image(32, 4), img2 = blob_image(32, 5);
  auto target = enc.embed(img2);
  ad::Var x(img1, true);
  auto e = enc.embed(x);
  auto ref = enc.embed(img1);
  CHECK(cosine_distance(e.V, target.V).item() == doctest::Approx(cosine_distance(ref, target)).epsilon(1e-12));
  CHECK(perceptual_distance(e, target).item() == doctest::Approx(perceptual_distance(ref, target)).epsilon(1e-12));
  CHECK(perceptual_distance(e, target, PerceptualNorm::L2).item() ==
        doctest::Approx(perceptual_distance(ref, target, PerceptualNorm::L2)).epsilon(1e-12));
}

TEST_CASE("gradient of V[0] w.r.t. pixels matches finite differences") {
  IdentityEncoder enc(IdentityEncoderConfig::toy());
  ad::Var x(blob_image(32, 6), true);
  auto f = [&] { return ad::slice(ad::reshape(enc.embed(x).V, {64}), 0, 0, 1); };
  auto r = avatar::testing::gradcheck([&] { return ad::sum(f()); }, x, {0, 100, 555, 1023, 2047, 3000});
  CHECK(r.max_rel_err <= 1e-3);
  auto g = avatar::testing::gradcheck([&] { return cosine_distance(enc.embed(x).V, enc.embed(blob_image(32, 9)).V); },
                                      x, {17, 400, 1800});
  CHECK(g.max_rel_err <= 1e-3);
}

TEST_CASE("calibration decorrelates unrelated images and round trips") {
  IdentityEncoder enc(IdentityEncoderConfig::toy());
  std::vector<Tensor> ref, held;
  for (unsigned s = 0; s < 64; ++s) ref.push_back(blob_image(32, 100 + s));
  for (unsigned s = 0; s < 12; ++s) held.push_back(blob_image(32, 500 + s));
  const double before = mean_offdiag_cos(enc, held);
  enc.calibrate(ref);
  const double after = mean_offdiag_cos(enc, held);
  MESSAGE("mean pairwise cosine before " << before << ", after " << after);
  CHECK(after < before);
  CHECK(std::abs(after) < 0.3);

  auto back = IdentityEncoder::from_archive(enc.to_archive());
  CHECK(back.calibrated());
  CHECK(back.embed(held[0]).V.vec() == enc.embed(held[0]).V.vec());
}
