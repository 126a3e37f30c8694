#pragma once

#include <span>
#include <vector>

namespace avatar {

/// Diffusion coefficient tables indexed by step t in [0, T).
class NoiseSchedule {
 public:
  /// beta linear in t from beta_start to beta_end inclusive.
  static NoiseSchedule build_linear(int T, double beta_start, double beta_end);
  /// Arbitrary betas in [0, 1); used for degenerate test schedules.
  static NoiseSchedule from_betas(std::vector<double> betas);

  int T() const { return static_cast<int>(beta_.size()); }
  double beta(int t) const { return beta_.at(t); }
  double alpha(int t) const { return alpha_.at(t); }
  double alpha_bar(int t) const { return alpha_bar_.at(t); }
  /// alpha_bar at t-1, with alpha_bar(-1) = 1.
  double alpha_bar_prev(int t) const { return t <= 0 ? 1.0 : alpha_bar_.at(t - 1); }
  double posterior_var(int t) const { return posterior_var_.at(t); }

  const std::vector<double>& betas() const { return beta_; }
  const std::vector<double>& alpha_bars() const { return alpha_bar_; }

  void check_step(int t) const;

 private:
  explicit NoiseSchedule(std::vector<double> betas);
  std::vector<double> beta_, alpha_, alpha_bar_, posterior_var_;
};

/// z_t = sqrt(ab_t) z0 + sqrt(1 - ab_t) eps
std::vector<double> q_sample(std::span<const double> z0, int t, std::span<const double> eps, const NoiseSchedule& s);

/// (z_t - sqrt(1 - ab_t) eps_hat) / sqrt(ab_t)
std::vector<double> estimate_z0(std::span<const double> z_t, std::span<const double> eps_hat, int t,
                                const NoiseSchedule& s);

struct PosteriorStats {
  std::vector<double> mean;
  double variance = 0.0;
};

/// Gaussian q(z_{t-1} | z_t, z0_hat) on the full schedule.
PosteriorStats posterior_stats(std::span<const double> z_t, std::span<const double> z0_hat, int t,
                               const NoiseSchedule& s);

/// Same posterior between two arbitrary steps t > t_prev (t_prev = -1 means the clean sample),
/// i.e. on the respaced schedule used by strided samplers.
PosteriorStats posterior_stats(std::span<const double> z_t, std::span<const double> z0_hat, int t, int t_prev,
                               const NoiseSchedule& s);

}  // namespace avatar
