#pragma once
// Everything a trained avatar generator needs at inference: codec, identity
// encoder, shape basis, denoiser, noise schedule and the condition builder.
#include <filesystem>
#include <string>

#include <json.hpp>

#include "avatar/denoiser.hpp"
#include "avatar/latent_space.hpp"
#include "avatar/noise_schedule.hpp"
#include "avatar/renderer.hpp"
#include "avatar/shape_model.hpp"
#include "avatar/texture_codec.hpp"

namespace avatar {

struct ScheduleConfig {
  int T = 1000;
  double beta_start = 0.0015;
  double beta_end = 0.0195;
  NoiseSchedule build() const { return NoiseSchedule::build_linear(T, beta_start, beta_end); }
};

void to_json(nlohmann::json& j, const ScheduleConfig& c);
void from_json(const nlohmann::json& j, ScheduleConfig& c);

struct ModelConfig {
  std::string preset = "toy";
  LatentLayout layout = LatentLayout::toy();
  CodecConfig codec = CodecConfig::toy();
  IdentityEncoderConfig encoder = IdentityEncoderConfig::toy();
  DenoiserConfig denoiser = DenoiserConfig::toy();
  ScheduleConfig schedule;
  int basis_vertices = 256;
  int landmarks = 68;
  std::uint64_t basis_seed = 11;
  std::uint64_t condition_seed = 13;
  int render_size = 32;

  /// Cross-checks the sub-configs (latent grid vs codec, render size vs encoder, ...).
  void validate() const;
  ShapeBasis build_basis() const;
  static ModelConfig toy();
  static ModelConfig paper();
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Differentiable pieces of a decoded latent.
struct DecodedVars {
  ad::Var diffuse, specular, normals;  // [3,R,R]
  ad::Var shape_id, shape_expr, ill;   // [n]
};

struct Avatar {
  ReflectanceTriplet maps;
  Mesh mesh;
  Illumination ill;
};

class AvatarModel {
 public:
  AvatarModel(ModelConfig cfg, TextureCodec codec, IdentityEncoder encoder, ShapeBasis basis);

  const ModelConfig& config() const { return cfg_; }
  const LatentLayout& layout() const { return cfg_.layout; }
  const TextureCodec& codec() const { return codec_; }
  TextureCodec& codec() { return codec_; }
  const IdentityEncoder& encoder() const { return encoder_; }
  const ShapeBasis& basis() const { return basis_; }
  const Denoiser& denoiser() const { return denoiser_; }
  Denoiser& denoiser() { return denoiser_; }
  const NoiseSchedule& schedule() const { return schedule_; }

  ConditionTensor condition(const IdentityEmbedding& e) const { return conditions_.build(e); }
  ConditionTensor null_condition() const;

  /// Packs encode(maps), shape coefficients and illumination.
  AvatarLatent encode_avatar(const ReflectanceTriplet& maps, std::span<const double> shape_id,
                             std::span<const double> shape_expr, std::span<const double> ill) const;

  /// z0 is [L] (or [1,L]).
  DecodedVars decode(const ad::Var& z0) const;
  /// Image [3,S,S]; visibility comes from the current shape values and stays fixed.
  ad::Var render(const DecodedVars& d, const Pose& pose, bool* degenerate = nullptr) const;
  /// Same with visibility supplied by the caller.
  ad::Var render(const DecodedVars& d, const Raster& raster) const;
  Raster raster_for(const DecodedVars& d, const Pose& pose) const;
  /// Projected 2-D landmarks [2L] of the decoded shape.
  ad::Var landmarks(const DecodedVars& d, const Pose& pose) const;

  Avatar decode(const AvatarLatent& z) const;
  Tensor render(const AvatarLatent& z, const Pose& pose) const;

  void save(const std::filesystem::path& dir) const;
  /// Throws io::FormatError naming the missing file.
  static AvatarModel load(const std::filesystem::path& dir);

 private:
  ModelConfig cfg_;
  TextureCodec codec_;
  IdentityEncoder encoder_;
  ShapeBasis basis_;
  Denoiser denoiser_;
  NoiseSchedule schedule_;
  ConditionBuilder conditions_;
};

/// Flattened landmark positions of a mesh projected under `pose`, [2L].
Tensor observed_landmarks(const Mesh& mesh, const ShapeBasis& basis, const Pose& pose);

}  // namespace avatar
