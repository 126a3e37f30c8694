#pragma once
// Phase-2 training: noise loss on the packed latent plus identity, perceptual
// and vertex losses on the decoded estimate of z0, with condition dropout.
#include <iosfwd>
#include <vector>

#include <json.hpp>

#include "avatar/dataset.hpp"
#include "avatar/model.hpp"

namespace avatar {

struct LdmTrainConfig {
  double lr = 1e-3;
  int batch_size = 16;
  double p_uncond = 0.1;
  double w_id = 1.0, w_per = 1.0, w_verts = 1.0;
  int aux_batch = 4;        // items per step that get the decoded-avatar losses (0 disables them)
  int aux_every = 1;        // auxiliary terms on every k-th step
  bool aux_alpha_weight = true;  // scale each item's auxiliary terms by alpha_bar_t
  double grad_clip = 1.0;
  std::string optimizer = "adam";
  std::uint64_t seed = 17;

  static LdmTrainConfig toy();
  static LdmTrainConfig paper();
};

void to_json(nlohmann::json& j, const LdmTrainConfig& c);
void from_json(const nlohmann::json& j, LdmTrainConfig& c);

/// Mean absolute difference.
double noise_loss(std::span<const double> eps_true, std::span<const double> eps_hat);
ad::Var noise_loss(const ad::Var& eps_true, const ad::Var& eps_hat);

struct AuxLosses {
  ad::Var id, per, verts;
};

/// Losses of a rendered image and vertex vector [3V] against a sample.
AuxLosses avatar_losses(const IdentityEncoder& enc, const ad::Var& image, const ad::Var& vertices,
                        const DatasetSample& sample, const ShapeBasis& basis);

/// Decodes z0 [L], renders it under `pose` and scores it against the sample.
AuxLosses auxiliary_losses(const AvatarModel& model, const ad::Var& z0, const DatasetSample& sample, const Pose& pose);

/// One Bernoulli(p) draw per item: true means the condition is nulled.
std::vector<bool> condition_dropout(int n, double p, nn::Rng& rng);

struct LdmStepReport {
  double noise = 0.0, id = 0.0, per = 0.0, verts = 0.0;
  double total = 0.0;
  int null_items = 0;
  std::vector<bool> null_flags;
};

class LdmTrainer {
 public:
  /// Ground-truth latents and poses for every sample are computed up front.
  LdmTrainer(AvatarModel& model, const Dataset& data, LdmTrainConfig cfg);

  /// One optimizer step on the given sample indices; throws on a non-finite loss.
  LdmStepReport step(const std::vector<int>& batch);
  /// Draws a batch uniformly from `pool` (all samples when empty) and steps.
  LdmStepReport step_random(const std::vector<int>& pool = {});

  const AvatarLatent& latent(int index) const { return latents_.at(index); }
  const Pose& pose(int index) const { return poses_.at(index); }
  std::int64_t steps() const { return step_; }
  /// "step noise id per verts total" lines.
  void write_log_line(std::ostream& os, const LdmStepReport& r) const;

 private:
  AvatarModel* model_;
  const Dataset* data_;
  LdmTrainConfig cfg_;
  nn::Adam opt_;
  nn::Rng rng_;
  std::vector<AvatarLatent> latents_;
  std::vector<Pose> poses_;
  std::vector<ConditionTensor> conds_;
  std::int64_t step_ = 0;
};

/// Phase-1 loop: `steps` batches drawn with replacement from `pool` (all
/// samples when empty), then the latent scale is calibrated on the pool.
/// Every log_every-th step goes to `log` as "step rec per adv disc total".
std::vector<AeLosses> train_codec(TextureCodec& codec, const Dataset& data, const std::vector<int>& pool,
                                  const AeTrainConfig& cfg, int steps, std::ostream* log = nullptr,
                                  int log_every = 10);
/// Continues an existing trainer of `codec`; batches come from `rng`.
std::vector<AeLosses> train_codec(AeTrainer& trainer, TextureCodec& codec, const Dataset& data,
                                  const std::vector<int>& pool, int steps, nn::Rng& rng, std::ostream* log = nullptr,
                                  int log_every = 10);

/// `steps` calls of step_random(pool), logged like train_codec.
std::vector<LdmStepReport> train_denoiser(LdmTrainer& trainer, const std::vector<int>& pool, int steps,
                                          std::ostream* log = nullptr, int log_every = 10);

}  // namespace avatar
