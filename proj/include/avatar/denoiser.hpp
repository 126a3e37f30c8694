#pragma once
// 1-D UNet epsilon-predictor over the packed avatar latent, conditioned on
// identity grids through SPADE normalization.
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "avatar/identity_encoder.hpp"
#include "avatar/io.hpp"
#include "avatar/nn.hpp"

namespace avatar {

struct DenoiserConfig {
  int base_channels = 32;
  std::vector<int> channel_mult{1, 2, 4};
  int depth_per_level = 1;
  int attention_heads = 2;
  int head_channels = 16;
  int cond_dim = 32;
  int spade_dim = 16;
  int cond_side = 2;  // s: side of the conditioning grid
  std::uint64_t seed = 11;

  void validate() const;
  static DenoiserConfig toy();
  static DenoiserConfig paper();
};

void to_json(nlohmann::json& j, const DenoiserConfig& c);
void from_json(const nlohmann::json& j, DenoiserConfig& c);

struct ConditionTensor {
  Tensor grid;  // [cond_dim, s, s]
  bool null_flag = true;

  static ConditionTensor null(int cond_dim, int side);
};

/// Resamples C2..C4 to s x s, broadcasts V, concatenates channel-wise and
/// applies a fixed seeded projection to cond_dim channels.
class ConditionBuilder {
 public:
  ConditionBuilder(const IdentityEncoderConfig& enc, int cond_dim, int side, std::uint64_t seed);
  int concat_channels() const { return concat_; }
  int cond_dim() const { return cond_dim_; }
  int side() const { return side_; }
  ConditionTensor build(const IdentityEmbedding& e) const;

 private:
  int concat_, cond_dim_, side_;
  Eigen::MatrixXd proj_;  // [cond_dim, concat]
};

class Denoiser {
 public:
  explicit Denoiser(DenoiserConfig cfg, int latent_length);

  const DenoiserConfig& config() const { return cfg_; }
  int latent_length() const { return length_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }

  /// z [N,L], t per item, cond [N,cond_dim,s,s] -> eps_hat [N,L].
  ad::Var forward(const ad::Var& z, const std::vector<int>& t, const ad::Var& cond) const;
  /// Single latent, no graph.
  std::vector<double> predict_eps(std::span<const double> z, int t, const ConditionTensor& cond) const;

  io::Archive to_archive() const;
  static Denoiser from_archive(const io::Archive& a);

 private:
  struct Spade {
    nn::Conv1d shared, gamma, beta;
    int groups = 1;
    ad::Var operator()(const ad::Var& x, const ad::Var& c) const;
  };
  struct ResBlock {
    Spade s1, s2;
    nn::Conv1d c1, c2, skip;
    nn::Linear temb;
    bool has_skip = false;
  };
  struct Level {
    std::vector<ResBlock> blocks;
    std::vector<nn::SelfAttention> attn;
    nn::Conv1d resample;
    bool has_resample = false;
  };

  ResBlock make_block(const std::string& name, int cin, int cout, nn::Rng& rng);
  Spade make_spade(const std::string& name, int channels, nn::Rng& rng);
  ad::Var run_block(const ResBlock& b, const ad::Var& x, const ad::Var& temb, const ad::Var& c) const;
  ad::Var cond_at(const ad::Var& cond_seq, std::int64_t len) const;

  DenoiserConfig cfg_;
  int length_, padded_;
  nn::ParamSet params_;
  nn::Linear t1_, t2_;
  nn::Conv1d conv_in_, conv_out_;
  nn::GroupNorm norm_out_;
  std::vector<Level> down_, up_;
  ResBlock mid1_, mid2_;
  nn::SelfAttention mid_attn_;
};

/// [N,cond_dim,s,s] batch of condition grids.
Tensor stack_conditions(const std::vector<ConditionTensor>& cs);

/// Sinusoidal embedding [N, dim] of integer steps.
Tensor timestep_embedding(const std::vector<int>& t, int dim);

}  // namespace avatar
