#pragma once
// Frozen random-weight CNN standing in for a face recognizer. Four stride-2
// tanh conv stages yield the activation grids C2..C4; V is a fixed linear
// readout of the standardized C4 grid.
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "avatar/io.hpp"
#include "avatar/nn.hpp"

namespace avatar {

struct IdentityEncoderConfig {
  int input_size = 32;
  int stem_channels = 8;
  int c2 = 16, c3 = 32, c4 = 64;
  int v_dim = 64;
  std::uint64_t seed = 1234;

  int grid(int stage) const { return input_size >> stage; }  // stage 2 -> C2 side
  static IdentityEncoderConfig toy();
  static IdentityEncoderConfig paper();
};

void to_json(nlohmann::json& j, const IdentityEncoderConfig& c);
void from_json(const nlohmann::json& j, IdentityEncoderConfig& c);

struct IdentityEmbedding {
  Tensor V;   // [v_dim]
  Tensor C2;  // [c2, s2, s2]
  Tensor C3;
  Tensor C4;
};

/// Differentiable embedding of a batch: V [N,v_dim], C* [N,c,s,s].
struct EmbeddingVars {
  ad::Var V, C2, C3, C4;
};

enum class PerceptualNorm { SquaredL2, L2 };

class IdentityEncoder {
 public:
  explicit IdentityEncoder(IdentityEncoderConfig cfg);

  const IdentityEncoderConfig& config() const { return cfg_; }

  /// image [3,S,S] at the configured input size, values in [0,1].
  IdentityEmbedding embed(const Tensor& image) const;
  /// images [N,3,S,S] (or [3,S,S]); differentiable w.r.t. the images.
  EmbeddingVars embed(const ad::Var& images) const;
  /// Intermediate grids only, for the texture perceptual loss.
  std::vector<ad::Var> features(const ad::Var& images) const;

  /// Sets the C4 standardization from reference images so unrelated faces
  /// are near-orthogonal in V.
  void calibrate(const std::vector<Tensor>& images);
  bool calibrated() const { return calibrated_; }

  io::Archive to_archive() const;
  static IdentityEncoder from_archive(const io::Archive& a);

 private:
  ad::Var stages(const ad::Var& x, std::vector<ad::Var>* grids) const;

  IdentityEncoderConfig cfg_;
  nn::ParamSet params_;
  nn::Conv2d stem_, conv2_, conv3_, conv4_;
  Tensor readout_;  // [c4*s4*s4, v_dim]
  Tensor center_, inv_scale_;
  bool calibrated_ = false;
};

/// 1 - <V1,V2>/(|V1||V2|); throws on a zero vector.
double cosine_distance(const IdentityEmbedding& a, const IdentityEmbedding& b);
double cosine_similarity(const Tensor& v1, const Tensor& v2);
/// Sum over C2..C4 of the per-layer distance divided by the layer volume.
double perceptual_distance(const IdentityEmbedding& a, const IdentityEmbedding& b,
                           PerceptualNorm norm = PerceptualNorm::SquaredL2);

/// Differentiable forms: v is [d] or [1,d]; returns a scalar.
ad::Var cosine_distance(const ad::Var& v, const Tensor& target);
ad::Var perceptual_distance(const EmbeddingVars& e, const IdentityEmbedding& target,
                            PerceptualNorm norm = PerceptualNorm::SquaredL2);

}  // namespace avatar
