#include <doctest.h>

#include <random>
#include <sstream>

#include "avatar/training.hpp"

using namespace avatar;

namespace {

struct Fixture {
  ModelConfig cfg = ModelConfig::toy();
  Dataset data;
  AvatarModel model;

  Fixture()
      : data(make_data()),
        model(cfg, TextureCodec(cfg.codec), data.encoder, data.basis) {}

  Dataset make_data() {
    DatasetConfig dc;
    dc.count = 8;
    return generate_dataset(dc, cfg.layout, cfg.build_basis(), cfg.encoder);
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

}  // namespace

TEST_CASE("noise loss is the mean absolute difference") {
  std::vector<double> a{0.5, -1.0, 2.0, 0.25};
  CHECK(noise_loss(a, a) == 0.0);
  std::vector<double> b = a;
  for (auto& v : b) v += -0.3;
  CHECK(noise_loss(a, b) == doctest::Approx(0.3).epsilon(1e-15));

  std::mt19937_64 rng(2);
  std::normal_distribution<double> n;
  Tensor x({50}), y({50});
  for (auto& v : x.vec()) v = n(rng);
  for (auto& v : y.vec()) v = n(rng);
  double ref = 0.0;
  for (int i = 0; i < 50; ++i) ref += std::abs(x[i] - y[i]);
  ref /= 50;
  CHECK(noise_loss(x.span(), y.span()) == doctest::Approx(ref).epsilon(1e-14));
  CHECK(noise_loss(ad::constant(x), ad::constant(y)).item() == doctest::Approx(ref).epsilon(1e-14));
  CHECK_THROWS_AS(noise_loss(a, std::vector<double>(3)), std::invalid_argument);
}

TEST_CASE("a perfect reconstruction has zero auxiliary losses") {
  auto& f = fixture();
  const auto& s = f.data.samples[3];
  const Mesh gt = s.mesh(f.data.basis);
  Tensor flat({gt.vertices.rows() * 3});
  for (Eigen::Index v = 0; v < gt.vertices.rows(); ++v)
    for (int a = 0; a < 3; ++a) flat[3 * v + a] = gt.vertices(v, a);
  auto l = avatar_losses(f.data.encoder, ad::constant(s.image), ad::constant(flat), s, f.data.basis);
  CHECK(l.verts.item() == 0.0);
  CHECK(l.id.item() <= 1e-6);
  CHECK(l.per.item() == 0.0);
  CHECK(vertex_l1_distance(gt, gt) == 0.0);
}

TEST_CASE("perturbing any shape coefficient raises the vertex loss") {
  auto& f = fixture();
  const auto& s = f.data.samples[0];
  const auto& b = f.data.basis;
  auto loss_for = [&](std::vector<double> zid, std::vector<double> zex) {
    auto v = decode_vertices(ad::constant(Tensor::from(zid)), ad::constant(Tensor::from(zex)), b);
    return avatar_losses(f.data.encoder, ad::constant(s.image), v, s, b).verts.item();
  };
  CHECK(loss_for(s.shape_id, s.shape_expr) <= 1e-12);
  for (int k = 0; k < b.n_id(); ++k) {
    auto z = s.shape_id;
    z[k] += 0.2;
    CHECK(loss_for(z, s.shape_expr) > 1e-6);
  }
  for (int k = 0; k < b.n_expr(); ++k) {
    auto z = s.shape_expr;
    z[k] -= 0.2;
    CHECK(loss_for(s.shape_id, z) > 1e-6);
  }
}

TEST_CASE("condition dropout rate") {
  nn::Rng rng(123);
  auto d = condition_dropout(10000, 0.1, rng);
  const double rate = std::count(d.begin(), d.end(), true) / 10000.0;
  CHECK(rate >= 0.09);
  CHECK(rate <= 0.11);
  auto all = condition_dropout(50, 1.0, rng);
  CHECK(std::count(all.begin(), all.end(), true) == 50);
  auto none = condition_dropout(50, 0.0, rng);
  CHECK(std::count(none.begin(), none.end(), true) == 0);
  CHECK_THROWS_AS(condition_dropout(1, 1.5, rng), std::invalid_argument);
}

TEST_CASE("trainer bookkeeping, dropout boundary and frozen codec") {
  auto& f = fixture();
  LdmTrainConfig cfg;
  cfg.batch_size = 4;
  cfg.aux_batch = 2;
  cfg.p_uncond = 1.0;
  LdmTrainer tr(f.model, f.data, cfg);
  const auto codec_sum = f.model.codec().params().checksum();
  const auto den_sum = f.model.denoiser().params().checksum();
  auto r = tr.step({0, 1, 2, 3});
  CHECK(r.null_items == 4);
  for (bool b : r.null_flags) CHECK(b);
  CHECK(r.total == r.noise + cfg.w_id * r.id + cfg.w_per * r.per + cfg.w_verts * r.verts);
  CHECK(r.total >= 0.0);
  CHECK(r.id > 0.0);
  CHECK(r.verts > 0.0);
  CHECK(f.model.codec().params().checksum() == codec_sum);
  CHECK(f.model.denoiser().params().checksum() != den_sum);

  std::ostringstream log;
  tr.write_log_line(log, r);
  CHECK(log.str().rfind("1 ", 0) == 0);

  // ground-truth latents come from the frozen codec
  const auto& z = tr.latent(2);
  CHECK(z.size() == f.cfg.layout.total());
  CHECK(std::vector<double>(z.shape_id().begin(), z.shape_id().end()) == f.data.samples[2].shape_id);
}

TEST_CASE("noise loss falls during a short run without auxiliary terms") {
  auto& f = fixture();
  LdmTrainConfig cfg;
  cfg.batch_size = 8;
  cfg.aux_batch = 0;
  LdmTrainer tr(f.model, f.data, cfg);
  double first = 0.0, last = 0.0;
  for (int s = 0; s < 60; ++s) {
    auto r = tr.step_random();
    if (s < 10) first += r.noise / 10;
    if (s >= 50) last += r.noise / 10;
  }
  MESSAGE("first " << first << " last " << last);
  CHECK(last < 0.9 * first);
}

TEST_CASE("building a model does not freeze the caller's codec") {
  auto& f = fixture();
  TextureCodec codec(f.cfg.codec);
  AeTrainConfig ac;
  ac.batch_size = 2;
  ac.adversarial = false;
  AeTrainer ae(codec, f.data.encoder, ac);
  const AvatarModel m(f.cfg, codec, f.data.encoder, f.data.basis);
  const auto before = codec.params().checksum();
  ae.step({f.data.samples[0].maps, f.data.samples[1].maps});
  CHECK(codec.params().checksum() != before);
  CHECK(m.codec().params().checksum() == before);
  CHECK(m.codec().latent_scale() == codec.latent_scale());
}
