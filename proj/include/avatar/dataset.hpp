#pragma once
// Procedural labeled avatars: image, reflectance triplet, shape coefficients,
// illumination, pose and identity embedding per sample.
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "avatar/identity_encoder.hpp"
#include "avatar/latent_space.hpp"
#include "avatar/reflectance.hpp"
#include "avatar/renderer.hpp"
#include "avatar/shape_model.hpp"

namespace avatar {

inline constexpr int kDatasetVersion = 1;

struct DatasetConfig {
  int count = 32;
  int samples_per_identity = 1;
  int map_resolution = 64;
  int render_size = 32;
  std::uint64_t seed = 5;

  static DatasetConfig toy();
  static DatasetConfig paper();
};

void to_json(nlohmann::json& j, const DatasetConfig& c);
void from_json(const nlohmann::json& j, DatasetConfig& c);

struct DatasetSample {
  int index = 0;
  int identity = 0;
  Tensor image;  // [3,S,S]
  ReflectanceTriplet maps;
  std::vector<double> shape_id, shape_expr;
  std::vector<double> ill;  // 9 values
  Pose pose;
  IdentityEmbedding embedding;

  Mesh mesh(const ShapeBasis& basis) const { return decode_shape(shape_id, shape_expr, basis); }
};

struct Dataset {
  DatasetConfig config;
  LatentLayout layout;
  ShapeBasis basis;
  IdentityEncoder encoder;  // calibrated on the clean renders; defines identity
  std::vector<DatasetSample> samples;

  std::size_t size() const { return samples.size(); }
};

/// Per-identity base colour + band-limited noise + a feature layout shared
/// by every identity. Values are on the 16-bit grid.
ReflectanceTriplet procedural_maps(int identity, std::uint64_t seed, int resolution);

/// Pure function of its arguments.
Dataset generate_dataset(const DatasetConfig& cfg, const LatentLayout& layout, const ShapeBasis& basis,
                         const IdentityEncoderConfig& encoder);

/// Directory with manifest.json, basis/encoder archives and one
/// subdirectory per sample (16-bit PNG maps, .npy arrays).
void save_dataset(const Dataset& d, const std::filesystem::path& dir);
/// Throws io::FormatError on version mismatch or a damaged sample (naming its index).
Dataset load_dataset(const std::filesystem::path& dir);

/// SHA-1 over every sample array in order.
std::string dataset_checksum(const Dataset& d);

struct DatasetSplit {
  std::vector<int> train, validation;
};
/// Stable split by a hash of the sample index.
DatasetSplit split_dataset(const Dataset& d, double validation_fraction);

/// Rounds every entry to the nearest k/65535 in [0,1].
void quantize16(Tensor& t);

}  // namespace avatar
