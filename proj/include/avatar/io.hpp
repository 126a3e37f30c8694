#pragma once
// File formats: .npy arrays, 8/16-bit PNG rasters, the versioned parameter
// archive used for checkpoints and bases, and content hashing.
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "avatar/tensor.hpp"

namespace avatar::io {

namespace fs = std::filesystem;

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Writes little-endian float64 in the numpy v1.0 format.
void save_npy(const fs::path& path, const Tensor& t);
/// Reads <f8, <f4, <i8, <i4, |u1 and <u2 arrays (C order) into doubles.
Tensor load_npy(const fs::path& path);

/// `img` is [C,H,W] with C in {1,3} and values in [0,1]; values are clamped
/// and rounded to the nearest code.
void write_png(const fs::path& path, const Tensor& img, int bit_depth = 8);
/// Returns [C,H,W] in [0,1]; grey and RGB images, alpha dropped.
Tensor read_png(const fs::path& path);

std::string sha1_hex(const void* data, std::size_t n);
std::string sha1_hex(const std::string& s);
/// Hash of the file bytes prefixed like a git blob ("blob <size>\0").
std::string git_blob_hash(const fs::path& path);

inline constexpr int kArchiveVersion = 1;

struct Archive {
  nlohmann::json meta;
  std::vector<std::pair<std::string, Tensor>> arrays;

  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;
};

void save_archive(const fs::path& path, const Archive& a);
/// Throws FormatError on bad magic, version mismatch or truncation.
Archive load_archive(const fs::path& path);

std::string read_text(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);

}  // namespace avatar::io
