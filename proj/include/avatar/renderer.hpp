#pragma once
// Orthographic rasterizer and multi-map shader. Visibility is computed once per
// render and held fixed; the shading op is differentiable w.r.t. the three
// texture maps and the 9 illumination values.
#include <array>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "avatar/autodiff.hpp"
#include "avatar/reflectance.hpp"
#include "avatar/shape_model.hpp"

namespace avatar {

inline constexpr double kSpecularExponent = 8.0;

struct Illumination {
  std::array<double, 3> ambient{0.0, 0.0, 0.0};
  std::array<double, 3> light{0.0, 0.0, 0.0};
  std::array<double, 3> direction{0.0, 0.0, 1.0};

  Illumination() = default;
  /// Normalizes the direction; a zero direction becomes +z.
  Illumination(std::array<double, 3> ambient, std::array<double, 3> light, std::array<double, 3> direction);
  /// ambient(3) | light(3) | direction(3)
  static Illumination from_vector(std::span<const double> v);
  std::array<double, 9> to_vector() const;
};

struct Pose {
  std::array<double, 3> rotation{0.0, 0.0, 0.0};  // x, y, z Euler angles (radians)
  std::array<double, 3> translation{0.0, 0.0, 0.0};
  double scale = 1.0;

  /// R = Rz * Ry * Rx
  Eigen::Matrix3d rotation_matrix() const;
  Eigen::Vector3d apply(const Eigen::Vector3d& p) const;
};

/// Per-pixel visibility of a posed mesh.
struct Raster {
  int size = 0;
  std::vector<int> face;  // -1 where uncovered
  std::vector<Eigen::Vector2d> uv;
  std::vector<double> depth;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  int covered() const;
};

Raster rasterize(const Mesh& mesh, const Pose& pose, int size);

/// Pixel centre coordinates of a posed model-space point.
Eigen::Vector2d project_to_pixel(const Eigen::Vector3d& posed, int size);

/// Differentiable shading of a precomputed raster. Maps are [3,H,W], ill is [9]
/// (raw direction, normalized inside). Returns [3,size,size]; uncovered pixels are 0.
ad::Var shade(const Raster& raster, const ad::Var& diffuse, const ad::Var& specular, const ad::Var& normals,
              const ad::Var& ill, bool clamp_output = true);

struct RenderResult {
  Tensor image;  // [3,size,size]
  bool degenerate = false;
  Raster raster;
};

RenderResult render(const Mesh& mesh, const ReflectanceTriplet& maps, const Illumination& ill, const Pose& pose,
                    int size, bool clamp_output = true);

/// Landmark positions after posing, projected orthographically: [L,2] in model units.
Eigen::MatrixX2d project_landmarks(const Eigen::MatrixX3d& landmarks, const Pose& pose);
/// Differentiable version over a flat [3L] landmark vector; returns flat [2L].
ad::Var project_landmarks(const ad::Var& flat_landmarks, const Pose& pose);

struct PoseEstimate {
  Pose pose;
  bool singular = false;
};

/// Similarity alignment of the foreground silhouette against the mean mesh
/// rendered at the identity pose. Recovers in-plane rotation within ±pi/2,
/// 2-D translation and scale.
PoseEstimate estimate_pose(const Tensor& image, const ShapeBasis& basis);

}  // namespace avatar
