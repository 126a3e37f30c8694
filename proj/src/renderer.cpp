#include "avatar/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>

namespace avatar {

namespace {

using Vec3 = Eigen::Vector3d;

std::array<double, 3> unit_or_z(std::array<double, 3> d) {
  const double n = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
  if (!(n > 0.0) || !std::isfinite(n)) return {0.0, 0.0, 1.0};
  return {d[0] / n, d[1] / n, d[2] / n};
}

// Bilinear lookup footprint of a UV coordinate on an HxW map; v = 0 is the bottom row.
struct Tap {
  std::int64_t idx[4];
  double w[4];
};

Tap make_tap(const Eigen::Vector2d& uv, std::int64_t h, std::int64_t w) {
  const double x = uv.x() * w - 0.5;
  const double y = (1.0 - uv.y()) * h - 0.5;
  const double xf = std::floor(x), yf = std::floor(y);
  const double fx = x - xf, fy = y - yf;
  auto cx = [&](double c) { return std::clamp<std::int64_t>(static_cast<std::int64_t>(c), 0, w - 1); };
  auto cy = [&](double c) { return std::clamp<std::int64_t>(static_cast<std::int64_t>(c), 0, h - 1); };
  const std::int64_t x0 = cx(xf), x1 = cx(xf + 1), y0 = cy(yf), y1 = cy(yf + 1);
  return Tap{{y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1},
             {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy}};
}

Vec3 sample(const Tensor& map, const Tap& t, std::int64_t plane) {
  Vec3 out = Vec3::Zero();
  for (int c = 0; c < 3; ++c)
    for (int k = 0; k < 4; ++k) out[c] += t.w[k] * map[c * plane + t.idx[k]];
  return out;
}

void scatter(Tensor& grad, const Tap& t, std::int64_t plane, const Vec3& g) {
  for (int c = 0; c < 3; ++c)
    for (int k = 0; k < 4; ++k) grad[c * plane + t.idx[k]] += t.w[k] * g[c];
}

// Gradient of normalize(x) = x/|x| pulled back from g.
Vec3 normalize_backward(const Vec3& unit, double norm, const Vec3& g) {
  if (!(norm > 0.0)) return Vec3::Zero();
  return (g - unit * unit.dot(g)) / norm;
}

struct PixelShading {
  Vec3 a, s, m;     // sampled maps
  Vec3 nn;          // unit tangent-space normal
  double nr_norm;   // |2m - 1|
  Vec3 n;           // rotated normal
  double ndl, ndh;  // raw dot products
  double diff, spec;
  Vec3 out;  // pre-clamp
};

struct LightTerms {
  Vec3 amb, light, l, h;
  double d_norm, u_norm;
};

LightTerms light_terms(const Tensor& ill) {
  LightTerms lt;
  lt.amb = Vec3(ill[0], ill[1], ill[2]);
  lt.light = Vec3(ill[3], ill[4], ill[5]);
  const Vec3 d(ill[6], ill[7], ill[8]);
  lt.d_norm = d.norm();
  lt.l = lt.d_norm > 0.0 ? Vec3(d / lt.d_norm) : Vec3(0, 0, 1);
  const Vec3 u = lt.l + Vec3(0, 0, 1);
  lt.u_norm = u.norm();
  lt.h = lt.u_norm > 1e-12 ? Vec3(u / lt.u_norm) : Vec3(0, 0, 1);
  return lt;
}

PixelShading shade_pixel(const Tensor& A, const Tensor& S, const Tensor& N, const Tap& tap, std::int64_t plane,
                         const Eigen::Matrix3d& R, const LightTerms& lt) {
  PixelShading p;
  p.a = sample(A, tap, plane);
  p.s = sample(S, tap, plane);
  p.m = sample(N, tap, plane);
  const Vec3 nr = 2.0 * p.m - Vec3::Ones();
  p.nr_norm = nr.norm();
  p.nn = p.nr_norm > 0.0 ? Vec3(nr / p.nr_norm) : Vec3::Zero();
  p.n = R * p.nn;
  p.ndl = p.n.dot(lt.l);
  p.ndh = p.n.dot(lt.h);
  p.diff = std::max(0.0, p.ndl);
  p.spec = p.ndh > 0.0 ? std::pow(p.ndh, kSpecularExponent) : 0.0;
  p.out = lt.amb.cwiseProduct(p.a) + lt.light.cwiseProduct(p.a) * p.diff + lt.light.cwiseProduct(p.s) * p.spec;
  return p;
}

void check_map(const ad::Var& v, const char* name) {
  if (v.value().ndim() != 3 || v.dim(0) != 3)
    throw std::invalid_argument(std::string("shade: ") + name + " must be [3,H,W], got " + shape_str(v.shape()));
}

}  // namespace

Illumination::Illumination(std::array<double, 3> amb, std::array<double, 3> li, std::array<double, 3> dir)
    : ambient(amb), light(li), direction(unit_or_z(dir)) {}

Illumination Illumination::from_vector(std::span<const double> v) {
  if (v.size() != 9) throw std::invalid_argument("illumination needs 9 values");
  return Illumination({v[0], v[1], v[2]}, {v[3], v[4], v[5]}, {v[6], v[7], v[8]});
}

std::array<double, 9> Illumination::to_vector() const {
  return {ambient[0], ambient[1], ambient[2], light[0], light[1], light[2], direction[0], direction[1], direction[2]};
}

Eigen::Matrix3d Pose::rotation_matrix() const {
  using Eigen::AngleAxisd;
  return (AngleAxisd(rotation[2], Vec3::UnitZ()) * AngleAxisd(rotation[1], Vec3::UnitY()) *
          AngleAxisd(rotation[0], Vec3::UnitX()))
      .toRotationMatrix();
}

Eigen::Vector3d Pose::apply(const Eigen::Vector3d& p) const {
  return scale * (rotation_matrix() * p) + Vec3(translation[0], translation[1], translation[2]);
}

int Raster::covered() const {
  return static_cast<int>(std::count_if(face.begin(), face.end(), [](int f) { return f >= 0; }));
}

Eigen::Vector2d project_to_pixel(const Eigen::Vector3d& p, int size) {
  return {(p.x() + 1.0) * 0.5 * size, (1.0 - p.y()) * 0.5 * size};
}

Raster rasterize(const Mesh& mesh, const Pose& pose, int size) {
  if (size < 1) throw std::invalid_argument("rasterize: size must be positive");
  if (!(pose.scale > 0.0)) throw std::invalid_argument("rasterize: pose scale must be > 0");
  Raster r;
  r.size = size;
  r.rotation = pose.rotation_matrix();
  const auto npix = static_cast<std::size_t>(size) * size;
  r.face.assign(npix, -1);
  r.uv.assign(npix, Eigen::Vector2d::Zero());
  r.depth.assign(npix, -std::numeric_limits<double>::infinity());

  const auto nv = mesh.vertices.rows();
  std::vector<Eigen::Vector2d> px(nv);
  std::vector<double> z(nv);
  for (Eigen::Index v = 0; v < nv; ++v) {
    const Vec3 p = pose.apply(mesh.vertices.row(v).transpose());
    px[v] = project_to_pixel(p, size);
    z[v] = p.z();
  }
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& tri = mesh.faces[f];
    const auto &p0 = px[tri[0]], &p1 = px[tri[1]], &p2 = px[tri[2]];
    const double area = (p1.x() - p0.x()) * (p2.y() - p0.y()) - (p2.x() - p0.x()) * (p1.y() - p0.y());
    if (std::abs(area) < 1e-12) continue;
    const int xmin = std::max(0, static_cast<int>(std::floor(std::min({p0.x(), p1.x(), p2.x()}) - 0.5)));
    const int xmax = std::min(size - 1, static_cast<int>(std::ceil(std::max({p0.x(), p1.x(), p2.x()}) - 0.5)));
    const int ymin = std::max(0, static_cast<int>(std::floor(std::min({p0.y(), p1.y(), p2.y()}) - 0.5)));
    const int ymax = std::min(size - 1, static_cast<int>(std::ceil(std::max({p0.y(), p1.y(), p2.y()}) - 0.5)));
    for (int y = ymin; y <= ymax; ++y)
      for (int x = xmin; x <= xmax; ++x) {
        const double cx = x + 0.5, cy = y + 0.5;
        const double w0 = ((p1.x() - cx) * (p2.y() - cy) - (p2.x() - cx) * (p1.y() - cy)) / area;
        const double w1 = ((p2.x() - cx) * (p0.y() - cy) - (p0.x() - cx) * (p2.y() - cy)) / area;
        const double w2 = 1.0 - w0 - w1;
        if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) continue;
        const double depth = w0 * z[tri[0]] + w1 * z[tri[1]] + w2 * z[tri[2]];
        const std::size_t i = static_cast<std::size_t>(y) * size + x;
        if (depth <= r.depth[i]) continue;  // camera looks down -z, larger z is closer
        r.depth[i] = depth;
        r.face[i] = static_cast<int>(f);
        r.uv[i] = w0 * mesh.uv.row(tri[0]).transpose() + w1 * mesh.uv.row(tri[1]).transpose() +
                  w2 * mesh.uv.row(tri[2]).transpose();
      }
  }
  return r;
}

ad::Var shade(const Raster& raster, const ad::Var& diffuse, const ad::Var& specular, const ad::Var& normals,
              const ad::Var& ill, bool clamp_output) {
  check_map(diffuse, "diffuse");
  check_map(specular, "specular");
  check_map(normals, "normals");
  if (specular.shape() != diffuse.shape() || normals.shape() != diffuse.shape())
    throw std::invalid_argument("shade: maps differ in shape");
  if (ill.numel() != 9) throw std::invalid_argument("shade: illumination must have 9 values");

  const int size = raster.size;
  const std::int64_t plane_out = static_cast<std::int64_t>(size) * size;
  const std::int64_t h = diffuse.dim(1), w = diffuse.dim(2), plane = h * w;

  auto taps = std::make_shared<std::vector<std::pair<std::int64_t, Tap>>>();
  for (std::int64_t i = 0; i < plane_out; ++i)
    if (raster.face[i] >= 0) taps->emplace_back(i, make_tap(raster.uv[i], h, w));

  const LightTerms lt = light_terms(ill.value());
  Tensor out({3, size, size}, 0.0);
  for (const auto& [i, tap] : *taps) {
    const auto p = shade_pixel(diffuse.value(), specular.value(), normals.value(), tap, plane, raster.rotation, lt);
    for (int c = 0; c < 3; ++c) out[c * plane_out + i] = clamp_output ? std::clamp(p.out[c], 0.0, 1.0) : p.out[c];
  }

  const Eigen::Matrix3d R = raster.rotation;
  return ad::make_op(std::move(out), {diffuse, specular, normals, ill},
                     [taps, plane, plane_out, R, clamp_output](ad::Node& node) {
    auto& nA = *node.inputs[0];
    auto& nS = *node.inputs[1];
    auto& nN = *node.inputs[2];
    auto& nI = *node.inputs[3];
    const LightTerms lt = light_terms(nI.value);
    Vec3 g_amb = Vec3::Zero(), g_light = Vec3::Zero(), g_l = Vec3::Zero(), g_h = Vec3::Zero();
    for (const auto& [i, tap] : *taps) {
      Vec3 g(node.grad[i], node.grad[plane_out + i], node.grad[2 * plane_out + i]);
      if (g.isZero(0.0)) continue;
      const auto p = shade_pixel(nA.value, nS.value, nN.value, tap, plane, R, lt);
      if (clamp_output)
        for (int c = 0; c < 3; ++c)
          if (!(p.out[c] > 0.0 && p.out[c] < 1.0)) g[c] = 0.0;

      g_amb += g.cwiseProduct(p.a);
      g_light += g.cwiseProduct(p.a * p.diff + p.s * p.spec);
      if (nA.requires_grad) scatter(nA.ensure_grad(), tap, plane, g.cwiseProduct(lt.amb + lt.light * p.diff));
      if (nS.requires_grad) scatter(nS.ensure_grad(), tap, plane, g.cwiseProduct(lt.light * p.spec));

      const double g_diff = g.dot(lt.light.cwiseProduct(p.a));
      const double g_spec = g.dot(lt.light.cwiseProduct(p.s));
      Vec3 g_n = Vec3::Zero();
      if (p.ndl > 0.0) {
        g_n += g_diff * lt.l;
        g_l += g_diff * p.n;
      }
      if (p.ndh > 0.0) {
        const double ds = g_spec * kSpecularExponent * std::pow(p.ndh, kSpecularExponent - 1.0);
        g_n += ds * lt.h;
        g_h += ds * p.n;
      }
      if (nN.requires_grad) {
        const Vec3 g_nn = R.transpose() * g_n;
        scatter(nN.ensure_grad(), tap, plane, 2.0 * normalize_backward(p.nn, p.nr_norm, g_nn));
      }
    }
    if (nI.requires_grad) {
      // h = normalize(l + v), l = normalize(d)
      if (lt.u_norm > 1e-12) g_l += normalize_backward(lt.h, lt.u_norm, g_h);
      const Vec3 g_d = normalize_backward(lt.l, lt.d_norm, g_l);
      Tensor& gi = nI.ensure_grad();
      for (int c = 0; c < 3; ++c) {
        gi[c] += g_amb[c];
        gi[3 + c] += g_light[c];
        gi[6 + c] += g_d[c];
      }
    }
  });
}

RenderResult render(const Mesh& mesh, const ReflectanceTriplet& maps, const Illumination& ill, const Pose& pose,
                    int size, bool clamp_output) {
  ad::NoGradGuard no_grad;
  RenderResult r;
  r.raster = rasterize(mesh, pose, size);
  if (r.raster.covered() == 0) {
    r.degenerate = true;
    r.image = Tensor({3, size, size}, 0.0);
    return r;
  }
  const auto iv = ill.to_vector();
  r.image = shade(r.raster, ad::constant(maps.diffuse), ad::constant(maps.specular), ad::constant(maps.normals),
                  ad::constant(Tensor::from(iv)), clamp_output)
                .value();
  return r;
}

Eigen::MatrixX2d project_landmarks(const Eigen::MatrixX3d& landmarks, const Pose& pose) {
  Eigen::MatrixX2d out(landmarks.rows(), 2);
  for (Eigen::Index k = 0; k < landmarks.rows(); ++k) out.row(k) = pose.apply(landmarks.row(k).transpose()).head<2>();
  return out;
}

ad::Var project_landmarks(const ad::Var& flat, const Pose& pose) {
  if (flat.numel() % 3 != 0) throw std::invalid_argument("project_landmarks: length must be a multiple of 3");
  const std::int64_t L = flat.numel() / 3;
  const Eigen::Matrix3d R = pose.rotation_matrix();
  Tensor proj({3, 2});  // pts [L,3] x proj -> [L,2]
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) proj[i * 2 + j] = pose.scale * R(j, i);
  Tensor shift({1, 2}, {pose.translation[0], pose.translation[1]});
  auto pts = ad::matmul(ad::reshape(flat, {L, 3}), ad::constant(std::move(proj)));
  return ad::reshape(ad::add(pts, ad::constant(std::move(shift))), {2 * L});
}

namespace {

// Centroid and principal-axis pseudo-landmarks of a binary mask, in model units.
bool silhouette_points(const std::vector<char>& mask, int size, Eigen::Matrix<double, 2, 5>& pts) {
  double n = 0.0;
  Eigen::Vector2d mu = Eigen::Vector2d::Zero();
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      if (mask[static_cast<std::size_t>(y) * size + x]) {
        mu += Eigen::Vector2d(2.0 * (x + 0.5) / size - 1.0, 1.0 - 2.0 * (y + 0.5) / size);
        n += 1.0;
      }
  if (n < 3.0) return false;
  mu /= n;
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      if (mask[static_cast<std::size_t>(y) * size + x]) {
        const Eigen::Vector2d d = Eigen::Vector2d(2.0 * (x + 0.5) / size - 1.0, 1.0 - 2.0 * (y + 0.5) / size) - mu;
        cov += d * d.transpose();
      }
  cov /= n;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov);
  const Eigen::Vector2d ev = es.eigenvalues();
  if (!(ev[0] > 1e-12) || ev[1] - ev[0] < 1e-9 * ev[1]) return false;
  Eigen::Vector2d e1 = es.eigenvectors().col(1);  // major axis
  if (e1.y() < 0.0 || (e1.y() == 0.0 && e1.x() < 0.0)) e1 = -e1;
  const Eigen::Vector2d e2(-e1.y(), e1.x());
  const double s1 = std::sqrt(ev[1]), s2 = std::sqrt(ev[0]);
  pts.col(0) = mu;
  pts.col(1) = mu + s1 * e1;
  pts.col(2) = mu - s1 * e1;
  pts.col(3) = mu + s2 * e2;
  pts.col(4) = mu - s2 * e2;
  return true;
}

}  // namespace

PoseEstimate estimate_pose(const Tensor& image, const ShapeBasis& basis) {
  if (image.ndim() != 3 || image.dim(1) != image.dim(2))
    throw std::invalid_argument("estimate_pose: expected a square [C,S,S] image");
  const int size = static_cast<int>(image.dim(1));
  const std::int64_t plane = static_cast<std::int64_t>(size) * size;
  std::vector<char> mask(plane, 0);
  for (std::int64_t i = 0; i < plane; ++i)
    for (std::int64_t c = 0; c < image.dim(0); ++c)
      if (image[c * plane + i] > 1e-4) mask[i] = 1;

  const Raster tmpl = rasterize(basis.mean_mesh(), Pose{}, size);
  std::vector<char> tmask(plane);
  for (std::int64_t i = 0; i < plane; ++i) tmask[i] = tmpl.face[i] >= 0;

  PoseEstimate est;
  Eigen::Matrix<double, 2, 5> src, dst;
  if (!silhouette_points(tmask, size, src) || !silhouette_points(mask, size, dst)) {
    est.singular = true;
    return est;
  }
  const Eigen::Matrix3d T = Eigen::umeyama(src, dst, true);
  const double sc = std::sqrt(std::abs(T.topLeftCorner<2, 2>().determinant()));
  if (!(sc > 1e-9) || !T.allFinite()) {
    est.singular = true;
    return est;
  }
  est.pose.scale = sc;
  est.pose.rotation = {0.0, 0.0, std::atan2(T(1, 0), T(0, 0))};
  est.pose.translation = {T(0, 2), T(1, 2), 0.0};
  return est;
}

}  // namespace avatar
