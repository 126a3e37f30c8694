#include "avatar/artifacts.hpp"

#include <fstream>
#include <iomanip>

namespace avatar {

namespace fs = std::filesystem;

io::Archive latent_to_archive(const AvatarLatent& z) {
  io::Archive a;
  a.meta = {{"kind", "avatar_latent"}, {"layout", z.layout()}};
  a.arrays.emplace_back("z", Tensor::from(z.values()));
  return a;
}

AvatarLatent latent_from_archive(const io::Archive& a) {
  if (a.meta.value("kind", "") != "avatar_latent") throw io::FormatError("latent: archive is not an avatar latent");
  const auto layout = a.meta.at("layout").get<LatentLayout>();
  const Tensor& z = a.at("z");
  if (z.numel() != static_cast<std::int64_t>(layout.total()))
    throw io::FormatError("latent: " + std::to_string(z.numel()) + " values, layout needs " +
                          std::to_string(layout.total()));
  return AvatarLatent(layout, z.vec());
}

void write_obj(const fs::path& path, const Mesh& mesh) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << std::setprecision(9);
  for (Eigen::Index v = 0; v < mesh.vertices.rows(); ++v)
    os << "v " << mesh.vertices(v, 0) << ' ' << mesh.vertices(v, 1) << ' ' << mesh.vertices(v, 2) << '\n';
  for (Eigen::Index v = 0; v < mesh.uv.rows(); ++v) os << "vt " << mesh.uv(v, 0) << ' ' << mesh.uv(v, 1) << '\n';
  const bool uv = mesh.uv.rows() == mesh.vertices.rows();
  for (const auto& f : mesh.faces) {
    os << 'f';
    for (int k = 0; k < 3; ++k) {
      os << ' ' << f[k] + 1;
      if (uv) os << '/' << f[k] + 1;
    }
    os << '\n';
  }
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

void write_maps(const fs::path& dir, const ReflectanceTriplet& maps) {
  fs::create_directories(dir);
  io::write_png(dir / "diffuse.png", maps.diffuse, 16);
  io::write_png(dir / "specular.png", maps.specular, 16);
  io::write_png(dir / "normals.png", maps.normals, 16);
}

ReflectanceTriplet read_maps(const fs::path& dir) {
  ReflectanceTriplet t{io::read_png(dir / "diffuse.png"), io::read_png(dir / "specular.png"),
                       io::read_png(dir / "normals.png")};
  t.validate();
  return t;
}

void write_avatar(const fs::path& dir, const AvatarModel& m, const AvatarLatent& z, const Pose* pose) {
  fs::create_directories(dir);
  io::save_archive(dir / "latent.avtr", latent_to_archive(z));
  const Avatar a = m.decode(z);
  write_maps(dir, a.maps);
  write_obj(dir / "mesh.obj", a.mesh);
  const auto ill = a.ill.to_vector();
  io::write_text(dir / "illumination.json",
                 nlohmann::json{{"ambient", {ill[0], ill[1], ill[2]}},
                                {"light", {ill[3], ill[4], ill[5]}},
                                {"direction", {ill[6], ill[7], ill[8]}}}
                     .dump(2));
  if (pose) io::write_png(dir / "render.png", m.render(z, *pose));
}

}  // namespace avatar
