#pragma once

#include <stdexcept>
#include <string>

#include "avatar/tensor.hpp"

namespace avatar {

/// Diffuse albedo, specular albedo and normals, each [3,H,W] in [0,1].
/// Normals are stored as (n + 1) / 2.
struct ReflectanceTriplet {
  Tensor diffuse;
  Tensor specular;
  Tensor normals;

  std::int64_t height() const { return diffuse.dim(1); }
  std::int64_t width() const { return diffuse.dim(2); }

  /// Throws std::invalid_argument on mismatched shapes or out-of-range values.
  void validate() const;
  /// [9,H,W]: diffuse | specular | normals.
  Tensor stacked() const;
  static ReflectanceTriplet from_stacked(const Tensor& t);
  /// Uniform maps with flat normals facing +z.
  static ReflectanceTriplet constant(int size, double diffuse, double specular);
  bool operator==(const ReflectanceTriplet& o) const {
    return diffuse.vec() == o.diffuse.vec() && specular.vec() == o.specular.vec() && normals.vec() == o.normals.vec() &&
           diffuse.shape() == o.diffuse.shape();
  }
};

}  // namespace avatar
