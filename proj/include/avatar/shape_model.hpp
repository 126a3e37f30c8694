#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "avatar/autodiff.hpp"
#include "avatar/io.hpp"

namespace avatar {

using Face = std::array<int, 3>;

struct Mesh {
  Eigen::MatrixX3d vertices;  // [V x 3] model units
  std::vector<Face> faces;
  Eigen::MatrixX2d uv;  // per-vertex, in [0,1]^2
};

/// Linear morphable model: vertices = U_id z_id + U_expr z_expr + mean,
/// flattened as [x0 y0 z0 x1 ...].
struct ShapeBasis {
  Eigen::MatrixXd U_id;    // [3V x n_id]
  Eigen::MatrixXd U_expr;  // [3V x n_expr]
  Eigen::VectorXd mean;    // [3V]
  std::vector<int> landmark_indices;
  std::vector<Face> faces;
  Eigen::MatrixX2d uv;
  int grid_side = 0;

  int n_verts() const { return static_cast<int>(mean.size() / 3); }
  int n_id() const { return static_cast<int>(U_id.cols()); }
  int n_expr() const { return static_cast<int>(U_expr.cols()); }
  Mesh mean_mesh() const;
};

/// Seeded stand-in for a learned face model: an elliptical dome template on a
/// square vertex grid (n_verts must be a perfect square) with smooth random
/// deformation fields orthogonalized by QR. Columns carry geometrically
/// decaying standard deviations, so unit-normal coefficients give a per-vertex
/// RMS displacement of 0.06 (identity) and 0.03 (expression).
ShapeBasis build_synthetic_basis(int n_verts, int n_id, int n_expr, std::uint64_t seed, int n_landmarks = 68);

Mesh decode_shape(std::span<const double> z_id, std::span<const double> z_expr, const ShapeBasis& basis);

/// Rows are mesh vertices at the basis landmark indices.
Eigen::MatrixX3d landmarks3d(const Mesh& mesh, const ShapeBasis& basis);

/// Mean over vertices of the L1 distance between corresponding vertices.
double vertex_l1_distance(const Mesh& a, const Mesh& b);

/// Differentiable decode of the flattened vertex vector [3V] (or only the
/// landmark rows when landmarks_only) from coefficient Vars of shape [n].
ad::Var decode_vertices(const ad::Var& z_id, const ad::Var& z_expr, const ShapeBasis& basis,
                        bool landmarks_only = false);

io::Archive basis_to_archive(const ShapeBasis& b);
ShapeBasis basis_from_archive(const io::Archive& a);

}  // namespace avatar
