#include "avatar/identity_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace avatar {

namespace {

constexpr double kTanhGain = 1.6;

void check_image(const Tensor& t, int size) {
  if (t.ndim() != 3 || t.dim(0) != 3 || t.dim(1) != size || t.dim(2) != size)
    throw std::invalid_argument("identity encoder: expected [3," + std::to_string(size) + "," + std::to_string(size) +
                                "] image, got " + shape_str(t.shape()));
}

Tensor drop_batch(const Tensor& t) {
  Shape s(t.shape().begin() + 1, t.shape().end());
  return t.reshaped(s);
}

}  // namespace

IdentityEncoderConfig IdentityEncoderConfig::toy() { return {}; }

IdentityEncoderConfig IdentityEncoderConfig::paper() {
  IdentityEncoderConfig c;
  c.input_size = 112;
  c.stem_channels = 64;
  c.c2 = 128;
  c.c3 = 256;
  c.c4 = 512;
  c.v_dim = 512;
  return c;
}

void to_json(nlohmann::json& j, const IdentityEncoderConfig& c) {
  j = {{"input_size", c.input_size}, {"stem_channels", c.stem_channels}, {"c2", c.c2}, {"c3", c.c3},
       {"c4", c.c4}, {"v_dim", c.v_dim}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, IdentityEncoderConfig& c) {
  c.input_size = j.at("input_size");
  c.stem_channels = j.at("stem_channels");
  c.c2 = j.at("c2");
  c.c3 = j.at("c3");
  c.c4 = j.at("c4");
  c.v_dim = j.at("v_dim");
  c.seed = j.at("seed");
}

IdentityEncoder::IdentityEncoder(IdentityEncoderConfig cfg) : cfg_(cfg) {
  if (cfg.input_size % 16 != 0 || cfg.input_size < 16)
    throw std::invalid_argument("identity encoder: input size must be a positive multiple of 16");
  nn::Rng rng(cfg.seed);
  stem_ = nn::Conv2d(params_, "stem", 3, cfg.stem_channels, 3, 2, 1, rng, kTanhGain);
  conv2_ = nn::Conv2d(params_, "c2", cfg.stem_channels, cfg.c2, 3, 2, 1, rng, kTanhGain);
  conv3_ = nn::Conv2d(params_, "c3", cfg.c2, cfg.c3, 3, 2, 1, rng, kTanhGain);
  conv4_ = nn::Conv2d(params_, "c4", cfg.c3, cfg.c4, 3, 2, 1, rng, kTanhGain);
  params_.set_trainable(false);
  const std::int64_t feat = static_cast<std::int64_t>(cfg.c4) * cfg.grid(4) * cfg.grid(4);
  readout_ = nn::randn({feat, cfg.v_dim}, 1.0 / std::sqrt(static_cast<double>(feat)), rng);
  center_ = Tensor({1, feat}, 0.0);
  inv_scale_ = Tensor({1, feat}, 1.0);
}

ad::Var IdentityEncoder::stages(const ad::Var& x, std::vector<ad::Var>* grids) const {
  auto h = ad::tanh(stem_(ad::add_scalar(x, -0.5)));
  auto c2 = ad::tanh(conv2_(h));
  auto c3 = ad::tanh(conv3_(c2));
  auto c4 = ad::tanh(conv4_(c3));
  if (grids) *grids = {c2, c3, c4};
  return c4;
}

EmbeddingVars IdentityEncoder::embed(const ad::Var& images) const {
  ad::Var x = images;
  if (x.value().ndim() == 3) x = ad::reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)});
  if (x.value().ndim() != 4 || x.dim(1) != 3 || x.dim(2) != cfg_.input_size || x.dim(3) != cfg_.input_size)
    throw std::invalid_argument("identity encoder: expected [N,3," + std::to_string(cfg_.input_size) + "," +
                                std::to_string(cfg_.input_size) + "] images, got " + shape_str(x.shape()));
  std::vector<ad::Var> g;
  stages(x, &g);
  const std::int64_t n = x.dim(0);
  auto flat = ad::reshape(g[2], {n, center_.numel()});
  auto standardized = ad::mul(ad::sub(flat, ad::constant(center_)), ad::constant(inv_scale_));
  return {ad::matmul(standardized, ad::constant(readout_)), g[0], g[1], g[2]};
}

std::vector<ad::Var> IdentityEncoder::features(const ad::Var& images) const {
  std::vector<ad::Var> g;
  stages(images, &g);
  return g;
}

IdentityEmbedding IdentityEncoder::embed(const Tensor& image) const {
  check_image(image, cfg_.input_size);
  ad::NoGradGuard ng;
  auto e = embed(ad::constant(image));
  return {drop_batch(e.V.value()), drop_batch(e.C2.value()), drop_batch(e.C3.value()), drop_batch(e.C4.value())};
}

void IdentityEncoder::calibrate(const std::vector<Tensor>& images) {
  if (images.size() < 2) throw std::invalid_argument("identity encoder: calibration needs at least 2 images");
  ad::NoGradGuard ng;
  const std::int64_t feat = center_.numel();
  std::vector<double> sum(feat, 0.0), sum2(feat, 0.0);
  for (const auto& img : images) {
    check_image(img, cfg_.input_size);
    const Tensor c4 = stages(ad::constant(img.reshaped({1, 3, cfg_.input_size, cfg_.input_size})), nullptr).value();
    for (std::int64_t i = 0; i < feat; ++i) {
      sum[i] += c4[i];
      sum2[i] += c4[i] * c4[i];
    }
  }
  const double n = static_cast<double>(images.size());
  for (std::int64_t i = 0; i < feat; ++i) {
    const double mu = sum[i] / n;
    const double var = std::max(0.0, sum2[i] / n - mu * mu);
    center_[i] = mu;
    inv_scale_[i] = 1.0 / std::sqrt(var + 1e-4);
  }
  calibrated_ = true;
}

io::Archive IdentityEncoder::to_archive() const {
  io::Archive a;
  a.meta = {{"kind", "identity_encoder"}, {"config", cfg_}, {"calibrated", calibrated_}};
  for (const auto& [name, v] : params_.items()) a.arrays.emplace_back(name, v.value());
  a.arrays.emplace_back("readout", readout_);
  a.arrays.emplace_back("center", center_);
  a.arrays.emplace_back("inv_scale", inv_scale_);
  return a;
}

IdentityEncoder IdentityEncoder::from_archive(const io::Archive& a) {
  if (a.meta.value("kind", "") != "identity_encoder") throw io::FormatError("archive is not an identity encoder");
  IdentityEncoder enc(a.meta.at("config").get<IdentityEncoderConfig>());
  std::vector<std::pair<std::string, Tensor>> vals;
  for (const auto& [name, _] : enc.params_.items()) vals.emplace_back(name, a.at(name));
  enc.params_.assign_from(vals);
  enc.readout_ = a.at("readout");
  enc.center_ = a.at("center");
  enc.inv_scale_ = a.at("inv_scale");
  enc.calibrated_ = a.meta.value("calibrated", false);
  return enc;
}

double cosine_similarity(const Tensor& v1, const Tensor& v2) {
  if (v1.numel() != v2.numel()) throw std::invalid_argument("cosine: length mismatch");
  double d = 0.0, n1 = 0.0, n2 = 0.0;
  for (std::int64_t i = 0; i < v1.numel(); ++i) {
    d += v1[i] * v2[i];
    n1 += v1[i] * v1[i];
    n2 += v2[i] * v2[i];
  }
  if (n1 == 0.0 || n2 == 0.0) throw std::invalid_argument("cosine: zero identity vector");
  return std::clamp(d / std::sqrt(n1 * n2), -1.0, 1.0);
}

double cosine_distance(const IdentityEmbedding& a, const IdentityEmbedding& b) {
  return 1.0 - cosine_similarity(a.V, b.V);
}

double perceptual_distance(const IdentityEmbedding& a, const IdentityEmbedding& b, PerceptualNorm norm) {
  double total = 0.0;
  for (auto [x, y] : {std::pair{&a.C2, &b.C2}, std::pair{&a.C3, &b.C3}, std::pair{&a.C4, &b.C4}}) {
    if (x->shape() != y->shape()) throw std::invalid_argument("perceptual_distance: layer shape mismatch");
    double s = 0.0;
    for (std::int64_t i = 0; i < x->numel(); ++i) s += ((*x)[i] - (*y)[i]) * ((*x)[i] - (*y)[i]);
    total += (norm == PerceptualNorm::SquaredL2 ? s : std::sqrt(s)) / static_cast<double>(x->numel());
  }
  return total;
}

ad::Var cosine_distance(const ad::Var& v, const Tensor& target) {
  if (v.numel() != target.numel()) throw std::invalid_argument("cosine: length mismatch");
  auto flat = ad::reshape(v, {v.numel()});
  double tn = 0.0;
  for (double x : target.vec()) tn += x * x;
  if (tn == 0.0) throw std::invalid_argument("cosine: zero target vector");
  auto t = ad::constant(target.reshaped({target.numel()}));
  auto cos = ad::div(ad::dot(flat, t), ad::scale(ad::l2_norm(flat, 1e-24), std::sqrt(tn)));
  return ad::add_scalar(ad::neg(cos), 1.0);
}

ad::Var perceptual_distance(const EmbeddingVars& e, const IdentityEmbedding& target, PerceptualNorm norm) {
  ad::Var total;
  for (auto [x, y] : {std::pair{&e.C2, &target.C2}, std::pair{&e.C3, &target.C3}, std::pair{&e.C4, &target.C4}}) {
    if (x->numel() != y->numel()) throw std::invalid_argument("perceptual_distance: layer shape mismatch");
    auto d = ad::sub(ad::reshape(*x, {x->numel()}), ad::constant(y->reshaped({y->numel()})));
    ad::Var term = norm == PerceptualNorm::SquaredL2 ? ad::sum(ad::square(d)) : ad::l2_norm(d, 1e-24);
    term = ad::scale(term, 1.0 / static_cast<double>(x->numel()));
    total = total.defined() ? ad::add(total, term) : term;
  }
  return total;
}

}  // namespace avatar
