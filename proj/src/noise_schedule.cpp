#include "avatar/noise_schedule.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace avatar {

NoiseSchedule NoiseSchedule::build_linear(int T, double beta_start, double beta_end) {
  if (T < 1) throw std::invalid_argument("noise schedule: T must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw std::invalid_argument("noise schedule: need 0 < beta_start <= beta_end < 1");
  std::vector<double> betas(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(t) / (T - 1);
    betas[t] = beta_start + (beta_end - beta_start) * frac;
  }
  return NoiseSchedule(std::move(betas));
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
  if (betas.empty()) throw std::invalid_argument("noise schedule: no steps");
  for (double b : betas)
    if (!(b >= 0.0 && b < 1.0)) throw std::invalid_argument("noise schedule: beta outside [0,1)");
  return NoiseSchedule(std::move(betas));
}

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : beta_(std::move(betas)) {
  const std::size_t n = beta_.size();
  alpha_.resize(n);
  alpha_bar_.resize(n);
  posterior_var_.resize(n);
  double prod = 1.0;
  for (std::size_t t = 0; t < n; ++t) {
    alpha_[t] = 1.0 - beta_[t];
    prod *= alpha_[t];
    alpha_bar_[t] = prod;
  }
  for (std::size_t t = 0; t < n; ++t) {
    const double ab_prev = t == 0 ? 1.0 : alpha_bar_[t - 1];
    const double denom = 1.0 - alpha_bar_[t];
    posterior_var_[t] = denom > 0.0 ? beta_[t] * (1.0 - ab_prev) / denom : 0.0;
  }
}

void NoiseSchedule::check_step(int t) const {
  if (t < 0 || t >= T())
    throw std::out_of_range("diffusion step " + std::to_string(t) + " outside [0, " + std::to_string(T()) + ")");
}

std::vector<double> q_sample(std::span<const double> z0, int t, std::span<const double> eps, const NoiseSchedule& s) {
  s.check_step(t);
  if (z0.size() != eps.size()) throw std::invalid_argument("q_sample: noise length differs from latent length");
  const double a = std::sqrt(s.alpha_bar(t));
  const double b = std::sqrt(1.0 - s.alpha_bar(t));
  std::vector<double> out(z0.size());
  for (std::size_t i = 0; i < z0.size(); ++i) out[i] = a * z0[i] + b * eps[i];
  return out;
}

std::vector<double> estimate_z0(std::span<const double> z_t, std::span<const double> eps_hat, int t,
                                const NoiseSchedule& s) {
  s.check_step(t);
  if (z_t.size() != eps_hat.size()) throw std::invalid_argument("estimate_z0: length mismatch");
  const double a = std::sqrt(s.alpha_bar(t));
  const double b = std::sqrt(1.0 - s.alpha_bar(t));
  std::vector<double> out(z_t.size());
  for (std::size_t i = 0; i < z_t.size(); ++i) out[i] = (z_t[i] - b * eps_hat[i]) / a;
  return out;
}

PosteriorStats posterior_stats(std::span<const double> z_t, std::span<const double> z0_hat, int t,
                               const NoiseSchedule& s) {
  return posterior_stats(z_t, z0_hat, t, t - 1, s);
}

PosteriorStats posterior_stats(std::span<const double> z_t, std::span<const double> z0_hat, int t, int t_prev,
                               const NoiseSchedule& s) {
  s.check_step(t);
  if (t_prev >= t || t_prev < -1) throw std::invalid_argument("posterior_stats: need -1 <= t_prev < t");
  if (z_t.size() != z0_hat.size()) throw std::invalid_argument("posterior_stats: length mismatch");
  const double ab = s.alpha_bar(t);
  const double ab_prev = t_prev < 0 ? 1.0 : s.alpha_bar(t_prev);
  PosteriorStats out;
  out.mean.resize(z_t.size());
  const double denom = 1.0 - ab;
  if (denom <= 0.0) {
    // Noise-free step: nothing to denoise.
    for (std::size_t i = 0; i < z_t.size(); ++i) out.mean[i] = z0_hat[i];
    return out;
  }
  const double step_beta = 1.0 - ab / ab_prev;
  const double c0 = std::sqrt(ab_prev) * step_beta / denom;
  const double ct = std::sqrt(ab / ab_prev) * (1.0 - ab_prev) / denom;
  for (std::size_t i = 0; i < z_t.size(); ++i) out.mean[i] = c0 * z0_hat[i] + ct * z_t[i];
  out.variance = step_beta * (1.0 - ab_prev) / denom;
  return out;
}

}  // namespace avatar
