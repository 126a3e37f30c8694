#include "avatar/reflectance.hpp"

#include <algorithm>

namespace avatar {

void ReflectanceTriplet::validate() const {
  const auto check = [&](const Tensor& t, const char* name) {
    if (t.ndim() != 3 || t.dim(0) != 3)
      throw std::invalid_argument(std::string("reflectance: ") + name + " must be [3,H,W], got " + shape_str(t.shape()));
    if (t.shape() != diffuse.shape())
      throw std::invalid_argument(std::string("reflectance: ") + name + " shape differs from diffuse");
    for (double v : t.vec())
      if (!(v >= 0.0 && v <= 1.0))
        throw std::invalid_argument(std::string("reflectance: ") + name + " has values outside [0,1]");
  };
  check(diffuse, "diffuse");
  check(specular, "specular");
  check(normals, "normals");
}

Tensor ReflectanceTriplet::stacked() const {
  const auto h = height(), w = width();
  Tensor out({9, h, w});
  const auto n = 3 * h * w;
  std::copy(diffuse.vec().begin(), diffuse.vec().end(), out.vec().begin());
  std::copy(specular.vec().begin(), specular.vec().end(), out.vec().begin() + n);
  std::copy(normals.vec().begin(), normals.vec().end(), out.vec().begin() + 2 * n);
  return out;
}

ReflectanceTriplet ReflectanceTriplet::from_stacked(const Tensor& t) {
  if (t.ndim() != 3 || t.dim(0) != 9) throw std::invalid_argument("reflectance: stacked maps must be [9,H,W]");
  const auto h = t.dim(1), w = t.dim(2), n = 3 * h * w;
  ReflectanceTriplet r;
  auto part = [&](int k) { return Tensor({3, h, w}, std::vector<double>(t.vec().begin() + k * n, t.vec().begin() + (k + 1) * n)); };
  r.diffuse = part(0);
  r.specular = part(1);
  r.normals = part(2);
  return r;
}

ReflectanceTriplet ReflectanceTriplet::constant(int size, double diffuse, double specular) {
  ReflectanceTriplet r;
  r.diffuse = Tensor({3, size, size}, diffuse);
  r.specular = Tensor({3, size, size}, specular);
  r.normals = Tensor({3, size, size}, 0.5);
  std::fill(r.normals.vec().begin() + 2 * size * size, r.normals.vec().end(), 1.0);
  return r;
}

}  // namespace avatar
