#pragma once
// Reverse diffusion over the packed latent: DDIM / ancestral steps,
// classifier-free guidance, identity guidance through the renderer and
// masked texture completion.
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "avatar/model.hpp"

namespace avatar {

struct GuidanceConfig {
  double lambda1 = 50.0;  // perceptual identity
  double lambda2 = 10.0;  // image L2
  double lambda3 = 200.0; // landmarks
  double scale = 90.0;    // s
  int steps = 50;
  double eta = 0.0;
  double cfg_scale = 1.0;  // w; 1 means plain conditional
  bool ancestral = false;

  void validate() const;
  static GuidanceConfig paper();
  static GuidanceConfig toy();
};

void to_json(nlohmann::json& j, const GuidanceConfig& c);
void from_json(const nlohmann::json& j, GuidanceConfig& c);

/// Descending steps t_0 = T-1 > ... with uniform stride T/steps; the step
/// after the last one is -1 (the clean sample).
std::vector<int> timestep_schedule(int T, int steps);

/// DDIM update from t to t_prev (-1 = clean). `noise` is required when eta > 0.
std::vector<double> ddim_step(std::span<const double> z_t, std::span<const double> eps_hat, int t, int t_prev,
                              double eta, const NoiseSchedule& s, std::span<const double> noise = {});
/// Standard deviation of the fresh noise injected by ddim_step.
double ddim_sigma(int t, int t_prev, double eta, const NoiseSchedule& s);

std::vector<double> cfg_eps(std::span<const double> eps_cond, std::span<const double> eps_uncond, double w);

/// Differentiable eps prediction for one latent z [L]; w != 1 mixes in the
/// null-condition branch.
ad::Var predict_eps(const AvatarModel& m, const ad::Var& z, int t, const ConditionTensor& cond, double w);

/// What the guidance compares against: the target image, its cached
/// embedding and (optionally) observed 2-D landmarks.
struct GuidanceTarget {
  Tensor image;
  IdentityEmbedding embedding;
  std::optional<Tensor> landmarks;  // [2L]
};

GuidanceTarget make_target(const AvatarModel& m, const Tensor& image, std::optional<Tensor> landmarks = std::nullopt);

struct GuidanceTerms {
  double id_cos = 0.0, id_per = 0.0, mse = 0.0, lan = 0.0, total = 0.0;
};

/// G = G_cos + l1 G_per + l2 G_mse + l3 G_lan. G_per uses squared L2 per
/// layer over its volume; G_mse and G_lan are plain L2 norms. The landmark
/// term is zero when the target carries no landmarks.
ad::Var guidance_loss(const IdentityEncoder& enc, const ad::Var& image, const ad::Var& landmarks_pred,
                      const GuidanceTarget& target, const GuidanceConfig& cfg, GuidanceTerms* terms = nullptr);

/// G as a function of z_t: predict eps, estimate z0, decode, render, score.
/// A non-null `raster` pins visibility (used for finite-difference checks).
ad::Var guidance_objective(const AvatarModel& m, const ad::Var& z_t, int t, const ConditionTensor& cond,
                           const GuidanceTarget& target, const Pose& pose, const GuidanceConfig& cfg,
                           const Raster* raster = nullptr, GuidanceTerms* terms = nullptr,
                           bool* degenerate = nullptr);

struct SampleTrace {
  std::vector<double> guidance;  // G per step (empty when unguided)
  std::vector<std::string> warnings;
};

/// Called after every step with the step just reached (-1 = clean) and the latent.
using StepHook = std::function<void(int t_prev, std::vector<double>& z)>;

/// Conditional (or, with a null condition, unconditional) sampling. With a
/// target and scale > 0 the mean is corrected by -s * Sigma * grad G.
AvatarLatent sample_latent(const AvatarModel& m, const ConditionTensor& cond, const GuidanceConfig& cfg,
                           std::uint64_t seed, const GuidanceTarget* target = nullptr, const Pose* pose = nullptr,
                           const StepHook& hook = {}, SampleTrace* trace = nullptr);

std::vector<AvatarLatent> sample_unconditional(const AvatarModel& m, int n, std::uint64_t seed, int steps);

struct GuidedResult {
  AvatarLatent latent;
  Pose pose;
  bool pose_singular = false;
  SampleTrace trace;
};

/// Fitting from a single image: embed, estimate pose once, then guided sampling.
GuidedResult guided_sample(const AvatarModel& m, const Tensor& image, const GuidanceConfig& cfg, std::uint64_t seed,
                           std::optional<Tensor> landmarks = std::nullopt);

/// mask [R,R] (or [1,R,R]) with 1 on known pixels. Known latent blocks are
/// re-imposed after every step at the matching noise level.
ReflectanceTriplet complete_texture(const AvatarModel& m, const ReflectanceTriplet& partial, const Tensor& mask,
                                    const ConditionTensor& cond, const GuidanceConfig& cfg, std::uint64_t seed);

/// Texture-latent entries whose f x f pixel block is entirely known.
std::vector<bool> latent_mask(const Tensor& mask, const LatentLayout& layout);

}  // namespace avatar
