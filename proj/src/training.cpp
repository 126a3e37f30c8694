#include "avatar/training.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>
#include <stdexcept>

namespace avatar {

LdmTrainConfig LdmTrainConfig::toy() {
  LdmTrainConfig c;
  c.aux_every = 4;
  return c;
}

LdmTrainConfig LdmTrainConfig::paper() {
  LdmTrainConfig c;
  c.lr = 3.2e-5;
  c.batch_size = 16;
  return c;
}

void to_json(nlohmann::json& j, const LdmTrainConfig& c) {
  j = {{"lr", c.lr},
       {"batch_size", c.batch_size},
       {"p_uncond", c.p_uncond},
       {"w_id", c.w_id},
       {"w_per", c.w_per},
       {"w_verts", c.w_verts},
       {"aux_batch", c.aux_batch},
       {"aux_every", c.aux_every},
       {"aux_alpha_weight", c.aux_alpha_weight},
       {"grad_clip", c.grad_clip},
       {"optimizer", c.optimizer},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, LdmTrainConfig& c) {
  c.lr = j.at("lr");
  c.batch_size = j.at("batch_size");
  c.p_uncond = j.at("p_uncond");
  c.w_id = j.at("w_id");
  c.w_per = j.at("w_per");
  c.w_verts = j.at("w_verts");
  c.aux_batch = j.at("aux_batch");
  c.aux_every = j.at("aux_every");
  c.aux_alpha_weight = j.at("aux_alpha_weight");
  c.grad_clip = j.at("grad_clip");
  c.optimizer = j.at("optimizer");
  c.seed = j.at("seed");
}

double noise_loss(std::span<const double> eps_true, std::span<const double> eps_hat) {
  if (eps_true.size() != eps_hat.size()) throw std::invalid_argument("noise_loss: length mismatch");
  if (eps_true.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < eps_true.size(); ++i) s += std::abs(eps_true[i] - eps_hat[i]);
  return s / static_cast<double>(eps_true.size());
}

ad::Var noise_loss(const ad::Var& eps_true, const ad::Var& eps_hat) {
  if (eps_true.numel() != eps_hat.numel()) throw std::invalid_argument("noise_loss: length mismatch");
  return ad::mean(ad::abs(ad::sub(eps_true, eps_hat)));
}

AuxLosses avatar_losses(const IdentityEncoder& enc, const ad::Var& image, const ad::Var& vertices,
                        const DatasetSample& sample, const ShapeBasis& basis) {
  const auto e = enc.embed(image);
  AuxLosses out;
  out.id = cosine_distance(e.V, sample.embedding.V);
  out.per = perceptual_distance(e, sample.embedding);
  const Mesh gt = sample.mesh(basis);
  Tensor flat({gt.vertices.rows() * 3});
  for (Eigen::Index v = 0; v < gt.vertices.rows(); ++v)
    for (int a = 0; a < 3; ++a) flat[3 * v + a] = gt.vertices(v, a);
  if (vertices.numel() != flat.numel()) throw std::invalid_argument("avatar_losses: vertex count mismatch");
  out.verts = ad::scale(ad::sum(ad::abs(ad::sub(vertices, ad::constant(flat)))),
                        1.0 / static_cast<double>(gt.vertices.rows()));
  return out;
}

AuxLosses auxiliary_losses(const AvatarModel& model, const ad::Var& z0, const DatasetSample& sample, const Pose& pose) {
  const auto d = model.decode(z0);
  bool degenerate = false;
  auto image = model.render(d, pose, &degenerate);
  if (degenerate) throw std::runtime_error("auxiliary losses: sample " + std::to_string(sample.index) + " rendered nothing");
  return avatar_losses(model.encoder(), image, decode_vertices(d.shape_id, d.shape_expr, model.basis()), sample,
                       model.basis());
}

std::vector<bool> condition_dropout(int n, double p, nn::Rng& rng) {
  if (p < 0.0 || p > 1.0) throw std::invalid_argument("condition dropout: p must lie in [0,1]");
  std::bernoulli_distribution b(p);
  std::vector<bool> out(n);
  for (int i = 0; i < n; ++i) out[i] = b(rng);
  return out;
}

LdmTrainer::LdmTrainer(AvatarModel& model, const Dataset& data, LdmTrainConfig cfg)
    : model_(&model),
      data_(&data),
      cfg_(std::move(cfg)),
      opt_(model.denoiser().params(), {.lr = cfg_.lr}),
      rng_(cfg_.seed) {
  if (cfg_.optimizer != "adam") throw std::invalid_argument("ldm trainer: only the adam optimizer is available");
  if (data.samples.empty()) throw std::invalid_argument("ldm trainer: empty dataset");
  if (cfg_.aux_every < 1) throw std::invalid_argument("ldm trainer: aux_every must be >= 1");
  if (!(data.layout == model.layout())) throw std::invalid_argument("ldm trainer: dataset layout differs from the model");
  for (const auto& s : data.samples) {
    latents_.push_back(model.encode_avatar(s.maps, s.shape_id, s.shape_expr, s.ill));
    poses_.push_back(s.pose);
    conds_.push_back(model.condition(s.embedding));
  }
}

LdmStepReport LdmTrainer::step(const std::vector<int>& batch) {
  const auto& sched = model_->schedule();
  const int n = static_cast<int>(batch.size());
  const auto L = static_cast<std::int64_t>(model_->layout().total());
  if (n == 0) throw std::invalid_argument("ldm trainer: empty batch");

  LdmStepReport rep;
  rep.null_flags = condition_dropout(n, cfg_.p_uncond, rng_);
  std::uniform_int_distribution<int> tdist(0, sched.T() - 1);
  std::normal_distribution<double> gauss;
  Tensor zt({n, L}), eps({n, L});
  std::vector<ConditionTensor> conds;
  std::vector<int> ts(n);
  for (int i = 0; i < n; ++i) {
    const int idx = batch[i];
    ts[i] = tdist(rng_);
    std::vector<double> e(L);
    for (auto& v : e) v = gauss(rng_);
    const auto x = q_sample(latents_.at(idx).values(), ts[i], e, sched);
    std::copy(x.begin(), x.end(), zt.data() + i * L);
    std::copy(e.begin(), e.end(), eps.data() + i * L);
    conds.push_back(rep.null_flags[i] ? model_->null_condition() : conds_.at(idx));
    rep.null_items += rep.null_flags[i] ? 1 : 0;
  }

  auto& params = model_->denoiser().params();
  params.zero_grad();
  auto eps_hat = model_->denoiser().forward(ad::constant(zt), ts, ad::constant(stack_conditions(conds)));
  auto l_noise = noise_loss(ad::constant(eps), eps_hat);

  const int k = step_ % cfg_.aux_every == 0 ? std::min(cfg_.aux_batch, n) : 0;
  ad::Var l_id = ad::constant(Tensor::scalar(0.0)), l_per = l_id, l_verts = l_id;
  if (k > 0) {
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng_);
    for (int j = 0; j < k; ++j) {
      const int i = order[j];
      const double ab = sched.alpha_bar(ts[i]);
      Tensor zi({L});
      for (std::int64_t c = 0; c < L; ++c) zi[c] = zt[i * L + c] / std::sqrt(ab);
      auto row = ad::reshape(ad::slice(eps_hat, 0, i, 1), {L});
      auto z0 = ad::add(ad::constant(zi), ad::scale(row, -std::sqrt(1.0 - ab) / std::sqrt(ab)));
      const auto& sample = data_->samples.at(batch[i]);
      auto aux = auxiliary_losses(*model_, z0, sample, poses_.at(batch[i]));
      const double w = (cfg_.aux_alpha_weight ? ab : 1.0) / k;
      l_id = ad::add(l_id, ad::scale(aux.id, w));
      l_per = ad::add(l_per, ad::scale(aux.per, w));
      l_verts = ad::add(l_verts, ad::scale(aux.verts, w));
    }
  }

  auto total = ad::add(ad::add(ad::add(l_noise, ad::scale(l_id, cfg_.w_id)), ad::scale(l_per, cfg_.w_per)),
                       ad::scale(l_verts, cfg_.w_verts));
  rep.noise = l_noise.item();
  rep.id = l_id.item();
  rep.per = l_per.item();
  rep.verts = l_verts.item();
  rep.total = total.item();
  if (!std::isfinite(rep.total))
    throw NumericalError("ldm trainer: non-finite loss at step " + std::to_string(step_));
  ad::backward(total);
  if (cfg_.grad_clip > 0.0) nn::clip_grad_norm(params, cfg_.grad_clip);
  opt_.step();
  ++step_;
  return rep;
}

LdmStepReport LdmTrainer::step_random(const std::vector<int>& pool) {
  std::vector<int> all = pool;
  if (all.empty())
    for (std::size_t i = 0; i < data_->samples.size(); ++i) all.push_back(static_cast<int>(i));
  std::uniform_int_distribution<std::size_t> pick(0, all.size() - 1);
  std::vector<int> batch(cfg_.batch_size);
  for (auto& b : batch) b = all[pick(rng_)];
  return step(batch);
}

void LdmTrainer::write_log_line(std::ostream& os, const LdmStepReport& r) const {
  os << step_ << ' ' << r.noise << ' ' << r.id << ' ' << r.per << ' ' << r.verts << ' ' << r.total << '\n';
}

std::vector<AeLosses> train_codec(AeTrainer& trainer, TextureCodec& codec, const Dataset& data,
                                  const std::vector<int>& pool, int steps, nn::Rng& rng, std::ostream* log,
                                  int log_every) {
  std::vector<ReflectanceTriplet> maps;
  if (pool.empty())
    for (const auto& s : data.samples) maps.push_back(s.maps);
  else
    for (int i : pool) maps.push_back(data.samples.at(i).maps);
  if (maps.empty()) throw std::invalid_argument("train_codec: no training samples");
  std::uniform_int_distribution<std::size_t> pick(0, maps.size() - 1);
  if (log && trainer.steps() == 0) *log << "step reconstruction perceptual adversarial discriminator total\n";
  std::vector<AeLosses> out;
  out.reserve(steps);
  const int batch = trainer.config().batch_size;
  for (int s = 0; s < steps; ++s) {
    std::vector<ReflectanceTriplet> b;
    for (int k = 0; k < batch; ++k) b.push_back(maps[pick(rng)]);
    out.push_back(trainer.step(b));
    const auto& l = out.back();
    if (log && (s % log_every == 0 || s == steps - 1))
      *log << trainer.steps() << ' ' << l.reconstruction << ' ' << l.perceptual << ' ' << l.adversarial << ' '
           << l.discriminator << ' ' << l.total << std::endl;
  }
  codec.calibrate_scale(maps);
  return out;
}

std::vector<AeLosses> train_codec(TextureCodec& codec, const Dataset& data, const std::vector<int>& pool,
                                  const AeTrainConfig& cfg, int steps, std::ostream* log, int log_every) {
  AeTrainer trainer(codec, data.encoder, cfg);
  nn::Rng rng(cfg.seed ^ 0x5eedULL);
  return train_codec(trainer, codec, data, pool, steps, rng, log, log_every);
}

std::vector<LdmStepReport> train_denoiser(LdmTrainer& trainer, const std::vector<int>& pool, int steps,
                                          std::ostream* log, int log_every) {
  if (log && trainer.steps() == 0) *log << "step noise id per verts total\n";
  std::vector<LdmStepReport> out;
  out.reserve(steps);
  for (int s = 0; s < steps; ++s) {
    out.push_back(trainer.step_random(pool));
    if (log && (s % log_every == 0 || s == steps - 1)) {
      trainer.write_log_line(*log, out.back());
      log->flush();
    }
  }
  return out;
}

}  // namespace avatar
