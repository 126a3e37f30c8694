#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace avatar {

struct GridShape {
  std::size_t h = 0, w = 0, c = 0;
  std::size_t size() const { return h * w * c; }
  bool operator==(const GridShape&) const = default;
};

/// Sizes of the packed avatar latent, stored in the order tex | shape_id | shape_expr | ill.
struct LatentLayout {
  std::size_t tex_len = 0;
  std::size_t shape_id_len = 0;
  std::size_t shape_expr_len = 0;
  std::size_t ill_len = 0;
  GridShape tex_grid;

  std::size_t total() const { return tex_len + shape_id_len + shape_expr_len + ill_len; }
  std::size_t tex_offset() const { return 0; }
  std::size_t shape_id_offset() const { return tex_len; }
  std::size_t shape_expr_offset() const { return tex_len + shape_id_len; }
  std::size_t ill_offset() const { return tex_len + shape_id_len + shape_expr_len; }

  /// Throws std::invalid_argument when tex_grid does not factor tex_len.
  void validate() const;

  static LatentLayout paper();
  static LatentLayout toy();

  bool operator==(const LatentLayout&) const = default;
};

void to_json(nlohmann::json& j, const LatentLayout& l);
void from_json(const nlohmann::json& j, LatentLayout& l);

struct LatentParts {
  std::vector<double> tex;
  std::vector<double> shape_id;
  std::vector<double> shape_expr;
  std::vector<double> ill;
};

class AvatarLatent {
 public:
  AvatarLatent() = default;
  /// Wraps a flat vector; throws if the length or any entry is invalid.
  AvatarLatent(LatentLayout layout, std::vector<double> values);

  const LatentLayout& layout() const { return layout_; }
  const std::vector<double>& values() const { return values_; }
  std::size_t size() const { return values_.size(); }

  std::span<const double> tex() const { return slice(layout_.tex_offset(), layout_.tex_len); }
  std::span<const double> shape_id() const { return slice(layout_.shape_id_offset(), layout_.shape_id_len); }
  std::span<const double> shape_expr() const { return slice(layout_.shape_expr_offset(), layout_.shape_expr_len); }
  std::span<const double> ill() const { return slice(layout_.ill_offset(), layout_.ill_len); }

  bool operator==(const AvatarLatent&) const = default;

 private:
  std::span<const double> slice(std::size_t off, std::size_t len) const {
    return std::span<const double>(values_).subspan(off, len);
  }
  LatentLayout layout_;
  std::vector<double> values_;
};

/// `tex` is the texture grid flattened channel-major ([c,h,w] row-major).
AvatarLatent pack(std::span<const double> tex, std::span<const double> shape_id, std::span<const double> shape_expr,
                  std::span<const double> ill, const LatentLayout& layout);
LatentParts unpack(const AvatarLatent& z);

}  // namespace avatar
