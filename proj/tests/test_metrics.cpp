#include <doctest.h>

#include <cmath>
#include <random>

#include "avatar/dataset.hpp"
#include "avatar/metrics.hpp"
#include "ssim_reference.hpp"

using namespace avatar;

namespace {

Tensor random_image(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor t(s);
  for (auto& v : t.vec()) v = u(rng);
  return t;
}


}  // namespace

TEST_CASE("identical inputs reach the extremal metric values") {
  const Tensor a = random_image({3, 24, 24}, 1);
  CHECK(mse(a, a) == 0.0);
  CHECK(std::isinf(psnr(a, a)));
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-15));
  nlohmann::json j = MapMetric{0.0, psnr(a, a), 1.0};
  CHECK(j["psnr"] == "inf");
}

TEST_CASE("a constant 0.1 offset gives 20 dB") {
  Tensor gt = random_image({3, 16, 16}, 2);
  for (auto& v : gt.vec()) v *= 0.9;
  Tensor p = gt;
  for (auto& v : p.vec()) v += 0.1;
  CHECK(mse(p, gt) == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(psnr(p, gt) == doctest::Approx(20.0).epsilon(1e-10));
  CHECK(mse(p, gt) == mse(gt, p));
}

TEST_CASE("ssim agrees with a direct windowed reference") {
  for (std::uint64_t seed : {3u, 4u, 5u}) {
    const Tensor a = random_image({2, 20, 23}, seed), b = random_image({2, 20, 23}, seed + 10);
    Tensor c0 = a;  // correlated pair as well
    for (std::int64_t i = 0; i < c0.numel(); ++i) c0[i] = 0.7 * a[i] + 0.3 * b[i];
    const Tensor& c = c0;
    for (const Tensor* o : {&b, &c}) {
      double ref = 0.0;
      for (int ch = 0; ch < 2; ++ch) ref += avatar::testing::reference_ssim_plane(a.data() + ch * 460, o->data() + ch * 460, 20, 23) / 2;
      CHECK(std::abs(ssim(a, *o) - ref) <= 1e-6);
      CHECK(ssim(a, *o) == doctest::Approx(ssim(*o, a)).epsilon(1e-12));
      CHECK(ssim(a, *o) <= 1.0);
      CHECK(ssim(a, *o) >= -1.0);
    }
  }
  CHECK_THROWS_AS(ssim(Tensor({3, 8, 8}), Tensor({3, 8, 8})), std::invalid_argument);
  CHECK_THROWS_AS(mse(Tensor({3, 8, 8}), Tensor({3, 8, 9})), std::invalid_argument);
}

TEST_CASE("map metrics per map and mean") {
  ReflectanceTriplet gt{random_image({3, 16, 16}, 6), random_image({3, 16, 16}, 7), random_image({3, 16, 16}, 8)};
  auto pred = gt;
  for (auto& v : pred.specular.vec()) v = std::min(1.0, v + 0.05);
  const auto r = map_metrics(pred, gt);
  CHECK(r.diffuse.mse == 0.0);
  CHECK(r.normals.ssim == doctest::Approx(1.0));
  CHECK(r.specular.mse > 0.0);
  CHECK(r.mean.mse == doctest::Approx(r.specular.mse / 3));
  ReflectanceTriplet small{Tensor({3, 12, 12}), Tensor({3, 12, 12}), Tensor({3, 12, 12})};
  CHECK_THROWS_AS(map_metrics(small, gt), std::invalid_argument);
}

TEST_CASE("summary statistics and separability") {
  const auto s = summarize({1.0, 2.0, 3.0, 4.0});
  CHECK(s.mean == 2.5);
  CHECK(s.stddev == doctest::Approx(std::sqrt(5.0 / 3.0)));
  const auto sep = separability({1.0, 1.0}, {0.2, -0.1});
  CHECK(sep.mean_same == 1.0);
  CHECK(sep.gap == doctest::Approx(0.95));
  CHECK_THROWS_AS(separability({}, {0.1}), std::invalid_argument);

  // random embeddings are nearly orthogonal on average
  const int d = 64;
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g;
  std::vector<double> diff;
  for (int k = 0; k < 400; ++k) {
    Tensor a({d}), b({d});
    for (auto& v : a.vec()) v = g(rng);
    for (auto& v : b.vec()) v = g(rng);
    diff.push_back(cosine_similarity(a, b));
  }
  CHECK(std::abs(summarize(diff).mean) <= 3.0 / std::sqrt(d));
}

TEST_CASE("identity preservation on ground-truth avatars") {
  const auto cfg = ModelConfig::toy();
  DatasetConfig dc;
  dc.count = 6;
  const auto data = generate_dataset(dc, cfg.layout, cfg.build_basis(), cfg.encoder);
  std::vector<Tensor> renders, targets;
  for (const auto& s : data.samples) {
    renders.push_back(render(s.mesh(data.basis), s.maps, Illumination::from_vector(s.ill), s.pose, dc.render_size).image);
    targets.push_back(s.image);
  }
  const auto matched = identity_preservation(data.encoder, renders, targets);
  for (double v : matched) CHECK(v >= 0.999);
  std::vector<Tensor> shuffled(targets.begin() + 1, targets.end());
  shuffled.push_back(targets.front());
  CHECK(summarize(identity_preservation(data.encoder, renders, shuffled)).mean < summarize(matched).mean);
  CHECK_THROWS_AS(identity_preservation(data.encoder, renders, {}), std::invalid_argument);
}

TEST_CASE("ablation and sweep drivers") {
  const auto cfg = ModelConfig::toy();
  DatasetConfig dc;
  dc.count = 2;
  const auto data = generate_dataset(dc, cfg.layout, cfg.build_basis(), cfg.encoder);
  const AvatarModel model(cfg, TextureCodec(cfg.codec), data.encoder, data.basis);
  std::vector<EvalTarget> targets{{data.samples[0].image, std::nullopt}};
  GuidanceConfig g;
  g.steps = 3;
  g.scale = 1.0;

  const auto arms = run_ablation(model, targets, standard_arms(), g, 5);
  REQUIRE(arms.size() == 4);
  CHECK(arms[0].name == "Label Only");
  CHECK(arms[3].name == "Guidance");
  for (const auto& a : arms) {
    CHECK(a.similarity.size() == 1);
    CHECK(std::abs(a.stats.mean) <= 1.0);
  }
  CHECK(ablation_csv(arms).find("\"CFG (w=9)\"") != std::string::npos);

  const auto rows = guidance_scale_sweep(model, targets, {0.0, 1.0}, g, 5);
  REQUIRE(rows.size() == 2);
  // scale 0 is the unguided conditional arm
  CHECK(rows[0].similarity.mean == arms[0].stats.mean);
  const auto csv = sweep_csv(rows);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  CHECK_THROWS_AS(guidance_scale_sweep(model, targets, {}, g, 5), std::invalid_argument);
}
