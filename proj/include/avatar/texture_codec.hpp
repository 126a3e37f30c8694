#pragma once
// Branched autoencoder between a reflectance triplet and the texture latent
// grid. Each map gets its own input convolution and first downsampling layer
// (summed afterwards) and its own last upsampling layer and output head.
#include <vector>

#include <json.hpp>

#include "avatar/identity_encoder.hpp"
#include "avatar/io.hpp"
#include "avatar/nn.hpp"
#include "avatar/reflectance.hpp"

namespace avatar {

struct CodecConfig {
  int resolution = 64;
  int downsample_factor = 8;
  int latent_channels = 1;
  int base_channels = 16;
  std::vector<int> channel_mult{1, 2, 2, 4};  // one entry per resolution level
  int res_blocks = 1;
  int attention_resolution = 8;
  int attention_heads = 1;
  std::uint64_t seed = 7;

  int latent_side() const { return resolution / downsample_factor; }
  /// Throws std::invalid_argument unless the levels realize the factor.
  void validate() const;
  static CodecConfig toy();
  static CodecConfig paper();
};

void to_json(nlohmann::json& j, const CodecConfig& c);
void from_json(const nlohmann::json& j, CodecConfig& c);

class TextureCodec {
 public:
  explicit TextureCodec(CodecConfig cfg);

  const CodecConfig& config() const { return cfg_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }

  /// maps [N,9,R,R] -> latent [N,c,h,w], multiplied by latent_scale.
  ad::Var encode(const ad::Var& maps) const;
  /// latent [N,c,h,w] (scaled) -> maps [N,9,R,R] in (0,1).
  ad::Var decode(const ad::Var& latent) const;

  /// Single-sample conveniences without graph recording; the grid is [c,h,w].
  Tensor encode(const ReflectanceTriplet& x) const;
  ReflectanceTriplet decode(const Tensor& grid) const;

  /// Decoder parameter subset (for gradient probes and freezing checks).
  std::vector<ad::Var> decoder_params() const;

  double latent_scale() const { return latent_scale_; }
  void set_latent_scale(double s) { latent_scale_ = s; }
  /// Sets latent_scale so encoded training maps have unit standard deviation.
  void calibrate_scale(const std::vector<ReflectanceTriplet>& samples);

  io::Archive to_archive() const;
  static TextureCodec from_archive(const io::Archive& a);

 private:
  struct ResBlock {
    nn::GroupNorm n1, n2;
    nn::Conv2d c1, c2, skip;
    bool has_skip = false;
    ad::Var operator()(const ad::Var& x) const;
  };
  struct Level {
    std::vector<ResBlock> blocks;
    std::vector<nn::SelfAttention> attn;
    nn::Conv2d resample;
    bool has_resample = false;
  };
  struct Head {
    nn::Conv2d conv_in, down;       // encoder branch
    nn::Conv2d up, conv_out;        // decoder branch
    nn::GroupNorm norm;
  };

  ResBlock make_block(const std::string& name, int cin, int cout, nn::Rng& rng);
  ad::Var attend(const nn::SelfAttention& a, const ad::Var& x) const;

  CodecConfig cfg_;
  nn::ParamSet params_;
  std::size_t decoder_first_param_ = 0;
  Head heads_[3];
  std::vector<Level> enc_levels_, dec_levels_;
  ResBlock enc_mid1_, enc_mid2_, dec_mid1_, dec_mid2_;
  nn::SelfAttention enc_mid_attn_, dec_mid_attn_;
  nn::GroupNorm enc_norm_out_;
  nn::Conv2d enc_out_, dec_in_;
  double latent_scale_ = 1.0;
};

/// Patch discriminator with a diffuse+specular branch (6 channels) and a
/// normals branch (3 channels) feeding a shared final convolution.
class BranchedDiscriminator {
 public:
  BranchedDiscriminator(int base_channels, std::uint64_t seed);
  /// maps [N,9,R,R] -> patch logits [N,1,R/4,R/4]
  ad::Var operator()(const ad::Var& maps) const;
  nn::ParamSet& params() { return params_; }
  int branch_in_channels(int branch) const { return branch == 0 ? 6 : 3; }

 private:
  nn::ParamSet params_;
  nn::Conv2d b1a_, b1b_, b2a_, b2b_, shared_;
};

struct AeTrainConfig {
  double lr = 2e-3;
  int batch_size = 8;
  double perceptual_weight = 1.0;
  double adversarial_weight = 0.1;
  int adversarial_start = 100;  // generator adversarial term enabled from this step
  bool adversarial = true;
  std::uint64_t seed = 3;
};

void to_json(nlohmann::json& j, const AeTrainConfig& c);
void from_json(const nlohmann::json& j, AeTrainConfig& c);

struct AeLosses {
  double reconstruction = 0.0;
  double perceptual = 0.0;
  double adversarial = 0.0;  // generator term, already weighted
  double discriminator = 0.0;
  double total = 0.0;
};

/// Phase-1 trainer: L1 reconstruction + identity-feature perceptual loss +
/// hinge adversarial loss from the branched discriminator.
class AeTrainer {
 public:
  AeTrainer(TextureCodec& codec, const IdentityEncoder& perceptual, AeTrainConfig cfg);
  /// One optimizer step on `batch`; throws std::runtime_error on a non-finite loss.
  AeLosses step(const std::vector<ReflectanceTriplet>& batch);
  /// Loss terms without updating anything.
  AeLosses evaluate(const std::vector<ReflectanceTriplet>& batch) const;
  std::int64_t steps() const { return step_; }
  const AeTrainConfig& config() const { return cfg_; }
  const BranchedDiscriminator& discriminator() const { return disc_; }

 private:
  ad::Var perceptual_loss(const ad::Var& recon, const ad::Var& target) const;

  TextureCodec* codec_;
  const IdentityEncoder* percep_;
  AeTrainConfig cfg_;
  BranchedDiscriminator disc_;
  nn::Adam opt_g_, opt_d_;
  std::int64_t step_ = 0;
};

/// [N,9,R,R] tensor from triplets and back.
Tensor stack_triplets(const std::vector<ReflectanceTriplet>& xs);
ReflectanceTriplet triplet_at(const Tensor& stacked, std::int64_t n);

}  // namespace avatar
