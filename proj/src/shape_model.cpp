#include "avatar/shape_model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace avatar {

namespace {

constexpr double kHalfWidth = 0.7;
constexpr double kHalfHeight = 0.9;
constexpr double kDepth = 0.5;
// per-vertex RMS displacement of unit-normal coefficients, and the decay of
// successive component standard deviations
constexpr double kIdentityRms = 0.06;
constexpr double kExpressionRms = 0.03;
constexpr double kDecay = 0.85;

void scale_components(Eigen::MatrixXd& U, double rms, int n_verts) {
  double total = 0.0;
  for (Eigen::Index c = 0; c < U.cols(); ++c) total += std::pow(kDecay, 2.0 * static_cast<double>(c));
  if (total == 0.0) return;
  const double s0 = rms * std::sqrt(static_cast<double>(n_verts) / total);
  for (Eigen::Index c = 0; c < U.cols(); ++c) U.col(c) *= s0 * std::pow(kDecay, static_cast<double>(c));
}

Tensor rows_to_tensor(const Eigen::MatrixXd& m, const std::vector<int>* rows_of_vertices) {
  if (!rows_of_vertices) {
    Tensor t({m.rows(), m.cols()});
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) t[r * m.cols() + c] = m(r, c);
    return t;
  }
  const auto n = static_cast<std::int64_t>(rows_of_vertices->size()) * 3;
  Tensor t({n, m.cols()});
  std::int64_t r = 0;
  for (int v : *rows_of_vertices)
    for (int k = 0; k < 3; ++k, ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) t[r * m.cols() + c] = m(3 * v + k, c);
  return t;
}

}  // namespace

Mesh ShapeBasis::mean_mesh() const {
  return decode_shape(std::vector<double>(n_id(), 0.0), std::vector<double>(n_expr(), 0.0), *this);
}

ShapeBasis build_synthetic_basis(int n_verts, int n_id, int n_expr, std::uint64_t seed, int n_landmarks) {
  if (n_landmarks < 1) throw std::invalid_argument("shape basis: need at least one landmark");
  if (n_verts < n_landmarks)
    throw std::invalid_argument("shape basis: " + std::to_string(n_verts) + " vertices cannot hold " +
                                std::to_string(n_landmarks) + " landmarks");
  const int g = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n_verts))));
  if (g * g != n_verts || g < 2)
    throw std::invalid_argument("shape basis: vertex count " + std::to_string(n_verts) + " is not a square grid");
  if (n_id < 0 || n_expr < 0 || n_id + n_expr > 3 * n_verts)
    throw std::invalid_argument("shape basis: too many basis columns for the vertex count");

  ShapeBasis b;
  b.grid_side = g;
  b.mean.resize(3 * n_verts);
  b.uv.resize(n_verts, 2);
  for (int i = 0; i < g; ++i) {
    for (int j = 0; j < g; ++j) {
      const int v = i * g + j;
      const double u = static_cast<double>(j) / (g - 1);
      const double w = static_cast<double>(i) / (g - 1);
      const double x0 = 2.0 * u - 1.0, y0 = 2.0 * w - 1.0;
      // square grid -> unit disc
      const double xd = x0 * std::sqrt(1.0 - 0.5 * y0 * y0);
      const double yd = y0 * std::sqrt(1.0 - 0.5 * x0 * x0);
      b.mean[3 * v + 0] = kHalfWidth * xd;
      b.mean[3 * v + 1] = kHalfHeight * yd;
      b.mean[3 * v + 2] = kDepth * std::sqrt(std::max(0.0, 1.0 - xd * xd - yd * yd));
      b.uv(v, 0) = u;
      b.uv(v, 1) = w;
    }
  }
  for (int i = 0; i + 1 < g; ++i)
    for (int j = 0; j + 1 < g; ++j) {
      const int a = i * g + j, bb = a + 1, c = a + g, d = c + 1;
      b.faces.push_back({a, bb, d});
      b.faces.push_back({a, d, c});
    }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int cols = n_id + n_expr;
  Eigen::MatrixXd fields(3 * n_verts, std::max(cols, 1));
  fields.setZero();
  for (int c = 0; c < cols; ++c) {
    for (int bump = 0; bump < 3; ++bump) {
      const double cu = 0.1 + 0.8 * uni(rng), cv = 0.1 + 0.8 * uni(rng);
      const double sigma = 0.15 + 0.2 * uni(rng);
      const double dir[3] = {gauss(rng), gauss(rng), 0.5 * gauss(rng)};
      for (int v = 0; v < n_verts; ++v) {
        const double du = b.uv(v, 0) - cu, dv = b.uv(v, 1) - cv;
        const double k = std::exp(-(du * du + dv * dv) / (2.0 * sigma * sigma));
        for (int a = 0; a < 3; ++a) fields(3 * v + a, c) += k * dir[a];
      }
    }
  }
  Eigen::MatrixXd q = Eigen::MatrixXd::Identity(3 * n_verts, std::max(cols, 1));
  if (cols > 0) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(fields);
    q = qr.householderQ() * Eigen::MatrixXd::Identity(3 * n_verts, cols);
    // Fix column signs so the decomposition is stable across Eigen versions.
    const Eigen::MatrixXd r = qr.matrixQR().topRows(cols).triangularView<Eigen::Upper>();
    for (int c = 0; c < cols; ++c)
      if (r(c, c) < 0.0) q.col(c) *= -1.0;
  }
  b.U_id = q.leftCols(n_id);
  b.U_expr = q.middleCols(n_id, n_expr);
  scale_components(b.U_id, kIdentityRms, n_verts);
  scale_components(b.U_expr, kExpressionRms, n_verts);

  b.landmark_indices.resize(n_landmarks);
  for (int k = 0; k < n_landmarks; ++k)
    b.landmark_indices[k] =
        n_landmarks == 1 ? 0 : static_cast<int>(std::lround(static_cast<double>(k) * (n_verts - 1) / (n_landmarks - 1)));
  return b;
}

Mesh decode_shape(std::span<const double> z_id, std::span<const double> z_expr, const ShapeBasis& basis) {
  if (static_cast<int>(z_id.size()) != basis.n_id())
    throw std::invalid_argument("decode_shape: identity coefficients have length " + std::to_string(z_id.size()) +
                                ", basis has " + std::to_string(basis.n_id()));
  if (static_cast<int>(z_expr.size()) != basis.n_expr())
    throw std::invalid_argument("decode_shape: expression coefficients have length " +
                                std::to_string(z_expr.size()) + ", basis has " + std::to_string(basis.n_expr()));
  Eigen::Map<const Eigen::VectorXd> zi(z_id.data(), static_cast<Eigen::Index>(z_id.size()));
  Eigen::Map<const Eigen::VectorXd> ze(z_expr.data(), static_cast<Eigen::Index>(z_expr.size()));
  Eigen::VectorXd flat = basis.mean;
  if (basis.n_id() > 0) flat.noalias() += basis.U_id * zi;
  if (basis.n_expr() > 0) flat.noalias() += basis.U_expr * ze;
  Mesh m;
  m.vertices.resize(basis.n_verts(), 3);
  for (int v = 0; v < basis.n_verts(); ++v)
    for (int a = 0; a < 3; ++a) m.vertices(v, a) = flat[3 * v + a];
  m.faces = basis.faces;
  m.uv = basis.uv;
  return m;
}

Eigen::MatrixX3d landmarks3d(const Mesh& mesh, const ShapeBasis& basis) {
  Eigen::MatrixX3d out(static_cast<Eigen::Index>(basis.landmark_indices.size()), 3);
  for (std::size_t k = 0; k < basis.landmark_indices.size(); ++k)
    out.row(static_cast<Eigen::Index>(k)) = mesh.vertices.row(basis.landmark_indices[k]);
  return out;
}

double vertex_l1_distance(const Mesh& a, const Mesh& b) {
  if (a.vertices.rows() != b.vertices.rows()) throw std::invalid_argument("vertex_l1_distance: vertex count mismatch");
  if (a.vertices.rows() == 0) return 0.0;
  return (a.vertices - b.vertices).cwiseAbs().sum() / static_cast<double>(a.vertices.rows());
}

ad::Var decode_vertices(const ad::Var& z_id, const ad::Var& z_expr, const ShapeBasis& basis, bool landmarks_only) {
  if (z_id.numel() != basis.n_id() || z_expr.numel() != basis.n_expr())
    throw std::invalid_argument("decode_vertices: coefficient length mismatch");
  const std::vector<int>* rows = landmarks_only ? &basis.landmark_indices : nullptr;
  Tensor mean_t;
  if (rows) {
    mean_t = Tensor({static_cast<std::int64_t>(rows->size()) * 3, 1});
    std::int64_t r = 0;
    for (int v : *rows)
      for (int k = 0; k < 3; ++k) mean_t[r++] = basis.mean[3 * v + k];
  } else {
    mean_t = Tensor({basis.mean.size(), 1});
    for (Eigen::Index i = 0; i < basis.mean.size(); ++i) mean_t[i] = basis.mean[i];
  }
  ad::Var out = ad::constant(std::move(mean_t));
  if (basis.n_id() > 0)
    out = ad::add(out, ad::matmul(ad::constant(rows_to_tensor(basis.U_id, rows)), ad::reshape(z_id, {basis.n_id(), 1})));
  if (basis.n_expr() > 0)
    out = ad::add(out,
                  ad::matmul(ad::constant(rows_to_tensor(basis.U_expr, rows)), ad::reshape(z_expr, {basis.n_expr(), 1})));
  return ad::reshape(out, {out.numel()});
}

io::Archive basis_to_archive(const ShapeBasis& b) {
  io::Archive a;
  a.meta = {{"kind", "shape_basis"}, {"grid_side", b.grid_side}};
  auto mat = [](const Eigen::MatrixXd& m) {
    Tensor t({m.rows(), m.cols()});
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) t[r * m.cols() + c] = m(r, c);
    return t;
  };
  a.arrays.emplace_back("mean", Tensor::from(std::span<const double>(b.mean.data(), b.mean.size())));
  a.arrays.emplace_back("U_id", mat(b.U_id));
  a.arrays.emplace_back("U_expr", mat(b.U_expr));
  a.arrays.emplace_back("uv", mat(b.uv));
  Tensor faces({static_cast<std::int64_t>(b.faces.size()), 3});
  for (std::size_t f = 0; f < b.faces.size(); ++f)
    for (int k = 0; k < 3; ++k) faces[3 * f + k] = b.faces[f][k];
  a.arrays.emplace_back("faces", faces);
  Tensor lm({static_cast<std::int64_t>(b.landmark_indices.size())});
  for (std::size_t k = 0; k < b.landmark_indices.size(); ++k) lm[k] = b.landmark_indices[k];
  a.arrays.emplace_back("landmarks", lm);
  return a;
}

ShapeBasis basis_from_archive(const io::Archive& a) {
  if (a.meta.value("kind", "") != "shape_basis") throw io::FormatError("archive is not a shape basis");
  auto mat = [](const Tensor& t) {
    Eigen::MatrixXd m(t.dim(0), t.dim(1));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = t[r * m.cols() + c];
    return m;
  };
  ShapeBasis b;
  b.grid_side = a.meta.at("grid_side");
  const Tensor& mean = a.at("mean");
  b.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), mean.numel());
  b.U_id = mat(a.at("U_id"));
  b.U_expr = mat(a.at("U_expr"));
  b.uv = mat(a.at("uv"));
  const Tensor& faces = a.at("faces");
  for (std::int64_t f = 0; f < faces.dim(0); ++f)
    b.faces.push_back({static_cast<int>(faces[3 * f]), static_cast<int>(faces[3 * f + 1]),
                       static_cast<int>(faces[3 * f + 2])});
  for (double v : a.at("landmarks").vec()) b.landmark_indices.push_back(static_cast<int>(v));
  if (b.U_id.rows() != b.mean.size() || b.U_expr.rows() != b.mean.size() || b.uv.rows() * 3 != b.mean.size())
    throw io::FormatError("shape basis archive: inconsistent array sizes");
  return b;
}

}  // namespace avatar
