#include "avatar/sampling.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace avatar {

namespace {

// Known-region noise for completion comes from its own stream so the main
// trajectory matches plain sampling draw for draw.
constexpr std::uint64_t kCompletionStream = 0xC0FFEEull;

std::vector<double> draw_normal(std::size_t n, nn::Rng& rng) {
  std::normal_distribution<double> g;
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

Tensor row_tensor(std::span<const double> z) {
  Tensor t({static_cast<std::int64_t>(z.size())});
  std::copy(z.begin(), z.end(), t.data());
  return t;
}

}  // namespace

void GuidanceConfig::validate() const {
  if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0 || scale < 0)
    throw std::invalid_argument("guidance: weights and scale must be non-negative");
  if (steps < 1) throw std::invalid_argument("guidance: need at least one step");
  if (eta < 0 || eta > 1) throw std::invalid_argument("guidance: eta must lie in [0,1]");
}

GuidanceConfig GuidanceConfig::paper() { return {}; }

GuidanceConfig GuidanceConfig::toy() {
  GuidanceConfig c;
  c.lambda1 = 1.0;
  c.lambda2 = 0.1;
  c.lambda3 = 1.0;
  c.scale = 50.0;
  return c;
}

void to_json(nlohmann::json& j, const GuidanceConfig& c) {
  j = {{"lambda1", c.lambda1}, {"lambda2", c.lambda2}, {"lambda3", c.lambda3},
       {"scale", c.scale},     {"steps", c.steps},     {"eta", c.eta},
       {"cfg_scale", c.cfg_scale}, {"ancestral", c.ancestral}};
}

void from_json(const nlohmann::json& j, GuidanceConfig& c) {
  c.lambda1 = j.at("lambda1");
  c.lambda2 = j.at("lambda2");
  c.lambda3 = j.at("lambda3");
  c.scale = j.at("scale");
  c.steps = j.at("steps");
  c.eta = j.at("eta");
  c.cfg_scale = j.at("cfg_scale");
  c.ancestral = j.at("ancestral");
}

std::vector<int> timestep_schedule(int T, int steps) {
  if (steps < 1 || steps > T) throw std::invalid_argument("timestep schedule: need 1 <= steps <= T");
  std::vector<int> ts(steps);
  for (int k = 0; k < steps; ++k)
    ts[k] = T - 1 - static_cast<int>(std::llround(static_cast<double>(k) * T / steps));
  return ts;
}

double ddim_sigma(int t, int t_prev, double eta, const NoiseSchedule& s) {
  const double ab = s.alpha_bar(t), abp = t_prev < 0 ? 1.0 : s.alpha_bar(t_prev);
  if (eta == 0.0) return 0.0;
  return eta * std::sqrt((1.0 - abp) / (1.0 - ab)) * std::sqrt(1.0 - ab / abp);
}

std::vector<double> ddim_step(std::span<const double> z_t, std::span<const double> eps_hat, int t, int t_prev,
                              double eta, const NoiseSchedule& s, std::span<const double> noise) {
  s.check_step(t);
  if (t_prev >= t || t_prev < -1) throw std::invalid_argument("ddim_step: need -1 <= t_prev < t");
  if (z_t.size() != eps_hat.size()) throw std::invalid_argument("ddim_step: length mismatch");
  const double sigma = ddim_sigma(t, t_prev, eta, s);
  if (sigma > 0.0 && noise.size() != z_t.size()) throw std::invalid_argument("ddim_step: eta > 0 needs noise");
  const double abp = t_prev < 0 ? 1.0 : s.alpha_bar(t_prev);
  const auto z0 = estimate_z0(z_t, eps_hat, t, s);
  const double ce = std::sqrt(std::max(0.0, 1.0 - abp - sigma * sigma));
  std::vector<double> out(z_t.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::sqrt(abp) * z0[i] + ce * eps_hat[i];
    if (sigma > 0.0) out[i] += sigma * noise[i];
  }
  return out;
}

std::vector<double> cfg_eps(std::span<const double> eps_cond, std::span<const double> eps_uncond, double w) {
  if (eps_cond.size() != eps_uncond.size()) throw std::invalid_argument("cfg_eps: length mismatch");
  std::vector<double> out(eps_cond.size());
  if (w == 1.0) {
    std::copy(eps_cond.begin(), eps_cond.end(), out.begin());
    return out;
  }
  if (w == 0.0) {
    std::copy(eps_uncond.begin(), eps_uncond.end(), out.begin());
    return out;
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = eps_uncond[i] + w * (eps_cond[i] - eps_uncond[i]);
  return out;
}

ad::Var predict_eps(const AvatarModel& m, const ad::Var& z, int t, const ConditionTensor& cond, double w) {
  const auto L = static_cast<std::int64_t>(m.layout().total());
  auto zb = ad::reshape(z, {1, L});
  const auto& den = m.denoiser();
  if (w == 1.0) return ad::reshape(den.forward(zb, {t}, ad::constant(stack_conditions({cond}))), {L});
  if (w == 0.0) return ad::reshape(den.forward(zb, {t}, ad::constant(stack_conditions({m.null_condition()}))), {L});
  auto both = den.forward(ad::concat({zb, zb}, 0), {t, t}, ad::constant(stack_conditions({cond, m.null_condition()})));
  auto ec = ad::reshape(ad::slice(both, 0, 0, 1), {L});
  auto eu = ad::reshape(ad::slice(both, 0, 1, 1), {L});
  return ad::add(eu, ad::scale(ad::sub(ec, eu), w));
}

GuidanceTarget make_target(const AvatarModel& m, const Tensor& image, std::optional<Tensor> landmarks) {
  const int S = m.config().render_size;
  if (image.shape() != Shape{3, S, S})
    throw std::invalid_argument("guidance target: image must be " + shape_str({3, S, S}) + ", got " +
                                shape_str(image.shape()));
  return {image, m.encoder().embed(image), std::move(landmarks)};
}

ad::Var guidance_loss(const IdentityEncoder& enc, const ad::Var& image, const ad::Var& landmarks_pred,
                      const GuidanceTarget& target, const GuidanceConfig& cfg, GuidanceTerms* terms) {
  if (image.shape() != target.image.shape()) throw std::invalid_argument("guidance: image sizes differ");
  const auto e = enc.embed(image);
  auto g_cos = cosine_distance(e.V, target.embedding.V);
  auto g_per = perceptual_distance(e, target.embedding, PerceptualNorm::SquaredL2);
  auto g_mse = ad::l2_norm(ad::sub(ad::reshape(image, {image.numel()}),
                                   ad::constant(target.image.reshaped({target.image.numel()}))),
                           1e-24);
  ad::Var g_lan = ad::constant(Tensor::scalar(0.0));
  if (target.landmarks) {
    if (landmarks_pred.numel() != target.landmarks->numel())
      throw std::invalid_argument("guidance: landmark counts differ");
    g_lan = ad::l2_norm(ad::sub(ad::reshape(landmarks_pred, {landmarks_pred.numel()}), ad::constant(*target.landmarks)),
                        1e-24);
  }
  auto g = ad::add(ad::add(ad::add(g_cos, ad::scale(g_per, cfg.lambda1)), ad::scale(g_mse, cfg.lambda2)),
                   ad::scale(g_lan, cfg.lambda3));
  if (terms) *terms = {g_cos.item(), g_per.item(), g_mse.item(), g_lan.item(), g.item()};
  return g;
}

ad::Var guidance_objective(const AvatarModel& m, const ad::Var& z_t, int t, const ConditionTensor& cond,
                           const GuidanceTarget& target, const Pose& pose, const GuidanceConfig& cfg,
                           const Raster* raster, GuidanceTerms* terms, bool* degenerate) {
  const auto& s = m.schedule();
  const double ab = s.alpha_bar(t);
  auto eps = predict_eps(m, z_t, t, cond, cfg.cfg_scale);
  auto z0 = ad::scale(ad::sub(z_t, ad::scale(eps, std::sqrt(1.0 - ab))), 1.0 / std::sqrt(ab));
  const auto d = m.decode(z0);
  const Raster r = raster ? *raster : m.raster_for(d, pose);
  if (degenerate) *degenerate = r.covered() == 0;
  auto image = m.render(d, r);
  return guidance_loss(m.encoder(), image, m.landmarks(d, pose), target, cfg, terms);
}

AvatarLatent sample_latent(const AvatarModel& m, const ConditionTensor& cond, const GuidanceConfig& cfg,
                           std::uint64_t seed, const GuidanceTarget* target, const Pose* pose, const StepHook& hook,
                           SampleTrace* trace) {
  cfg.validate();
  const auto& s = m.schedule();
  const auto L = m.layout().total();
  const bool guided = target && cfg.scale > 0.0;
  if (guided && !pose) throw std::invalid_argument("sampling: guidance needs a pose");
  nn::Rng rng(seed);
  std::vector<double> z = draw_normal(L, rng);
  const auto ts = timestep_schedule(s.T(), cfg.steps);

  for (std::size_t k = 0; k < ts.size(); ++k) {
    const int t = ts[k];
    const int t_prev = k + 1 < ts.size() ? ts[k + 1] : -1;
    std::vector<double> eps, grad;
    if (guided) {
      ad::Var zv(row_tensor(z), true);
      bool degenerate = false;
      GuidanceTerms terms;
      auto g = guidance_objective(m, zv, t, cond, *target, *pose, cfg, nullptr, &terms, &degenerate);
      {
        ad::NoGradGuard ng;
        eps = predict_eps(m, ad::constant(row_tensor(z)), t, cond, cfg.cfg_scale).value().vec();
      }
      if (trace) trace->guidance.push_back(terms.total);
      if (degenerate) {
        if (trace) trace->warnings.push_back("step " + std::to_string(k) + ": render covered no pixels, gradient skipped");
      } else {
        ad::backward(g);
        grad = zv.grad().vec();
        for (double v : grad)
          if (!std::isfinite(v)) throw NumericalError("guided sampling: non-finite gradient at step " + std::to_string(k));
      }
    } else {
      ad::NoGradGuard ng;
      eps = predict_eps(m, ad::constant(row_tensor(z)), t, cond, cfg.cfg_scale).value().vec();
    }

    if (cfg.ancestral) {
      const auto z0 = estimate_z0(z, eps, t, s);
      const auto ps = posterior_stats(z, z0, t, t_prev, s);
      std::vector<double> next = ps.mean;
      if (!grad.empty())
        for (std::size_t i = 0; i < L; ++i) next[i] -= cfg.scale * ps.variance * grad[i];
      if (ps.variance > 0.0) {
        const auto n = draw_normal(L, rng);
        for (std::size_t i = 0; i < L; ++i) next[i] += std::sqrt(ps.variance) * n[i];
      }
      z = std::move(next);
    } else {
      const double sigma = ddim_sigma(t, t_prev, cfg.eta, s);
      std::vector<double> noise;
      if (sigma > 0.0) noise = draw_normal(L, rng);
      std::vector<double> next = ddim_step(z, eps, t, t_prev, cfg.eta, s, noise);
      if (!grad.empty()) {
        const double var = s.posterior_var(t);
        for (std::size_t i = 0; i < L; ++i) next[i] -= cfg.scale * var * grad[i];
      }
      z = std::move(next);
    }
    if (hook) hook(t_prev, z);
  }
  return AvatarLatent(m.layout(), std::move(z));
}

std::vector<AvatarLatent> sample_unconditional(const AvatarModel& m, int n, std::uint64_t seed, int steps) {
  GuidanceConfig cfg;
  cfg.steps = steps;
  cfg.scale = 0.0;
  std::vector<AvatarLatent> out;
  for (int i = 0; i < n; ++i) out.push_back(sample_latent(m, m.null_condition(), cfg, seed + static_cast<std::uint64_t>(i)));
  return out;
}

GuidedResult guided_sample(const AvatarModel& m, const Tensor& image, const GuidanceConfig& cfg, std::uint64_t seed,
                           std::optional<Tensor> landmarks) {
  const auto target = make_target(m, image, std::move(landmarks));
  const auto est = estimate_pose(image, m.basis());
  GuidedResult r{AvatarLatent(), est.pose, est.singular, {}};
  if (est.singular) r.trace.warnings.push_back("pose estimate was singular; using the identity pose");
  r.latent = sample_latent(m, m.condition(target.embedding), cfg, seed, &target, &r.pose, {}, &r.trace);
  return r;
}

std::vector<bool> latent_mask(const Tensor& mask, const LatentLayout& layout) {
  const auto R = mask.dim(mask.ndim() - 1);
  if (mask.dim(mask.ndim() - 2) != R || R % static_cast<std::int64_t>(layout.tex_grid.w) != 0)
    throw std::invalid_argument("latent_mask: mask must be square and divisible by the latent grid");
  const std::int64_t h = static_cast<std::int64_t>(layout.tex_grid.h), w = static_cast<std::int64_t>(layout.tex_grid.w);
  const std::int64_t f = R / w;
  std::vector<bool> out(layout.tex_len, false);
  for (std::int64_t by = 0; by < h; ++by)
    for (std::int64_t bx = 0; bx < w; ++bx) {
      bool known = true;
      for (std::int64_t y = by * f; y < (by + 1) * f && known; ++y)
        for (std::int64_t x = bx * f; x < (bx + 1) * f; ++x)
          if (mask[y * R + x] < 0.5) {
            known = false;
            break;
          }
      for (std::size_t c = 0; c < layout.tex_grid.c; ++c) out[(c * h + by) * w + bx] = known;
    }
  return out;
}

ReflectanceTriplet complete_texture(const AvatarModel& m, const ReflectanceTriplet& partial, const Tensor& mask,
                                    const ConditionTensor& cond, const GuidanceConfig& cfg, std::uint64_t seed) {
  partial.validate();
  const auto R = partial.height();
  if (mask.numel() != static_cast<std::int64_t>(R) * R) throw std::invalid_argument("complete_texture: mask size differs");
  bool all = true, none = true;
  for (double v : mask.vec()) {
    if (v != 0.0 && v != 1.0) throw std::invalid_argument("complete_texture: mask must be binary");
    all = all && v == 1.0;
    none = none && v == 0.0;
  }
  if (all) return m.codec().decode(m.codec().encode(partial));

  GuidanceConfig plain = cfg;
  plain.scale = 0.0;
  StepHook hook;
  if (!none) {
    const auto known = latent_mask(mask.reshaped({R, R}), m.layout());
    const Tensor zk = m.codec().encode(partial);
    auto side = std::make_shared<nn::Rng>(seed ^ kCompletionStream);
    const auto& s = m.schedule();
    hook = [known, zk, side, &s](int t_prev, std::vector<double>& z) {
      const auto n = draw_normal(known.size(), *side);
      const double ab = t_prev < 0 ? 1.0 : s.alpha_bar(t_prev);
      for (std::size_t i = 0; i < known.size(); ++i)
        if (known[i]) z[i] = std::sqrt(ab) * zk[static_cast<std::int64_t>(i)] + std::sqrt(1.0 - ab) * n[i];
    };
  }
  const auto z = sample_latent(m, cond, plain, seed, nullptr, nullptr, hook);
  return m.decode(z).maps;
}

}  // namespace avatar
