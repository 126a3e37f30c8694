#include "avatar/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <stdexcept>

#include "avatar/io.hpp"

namespace avatar {

namespace fs = std::filesystem;

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t kind, std::uint64_t i) {
  return splitmix(splitmix(seed ^ (kind << 56)) + i);
}

double truncated_normal(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  for (;;) {
    const double v = n(rng);
    if (std::abs(v) <= 3.0) return v;
  }
}

struct Blob {
  double u, v, sigma;
};

// feature layout shared by every identity (uv, v up)
constexpr Blob kEyes[2] = {{0.33, 0.62, 0.06}, {0.67, 0.62, 0.06}};
constexpr Blob kBrows[2] = {{0.33, 0.74, 0.05}, {0.67, 0.74, 0.05}};
constexpr Blob kMouth = {0.5, 0.27, 0.07};
constexpr Blob kNose = {0.5, 0.47, 0.08};

double blob(const Blob& b, double u, double v, double aspect = 1.0) {
  const double du = (u - b.u) / aspect, dv = v - b.v;
  return std::exp(-(du * du + dv * dv) / (2.0 * b.sigma * b.sigma));
}

struct Wave {
  double ku, kv, phase, amp[3];
};

std::vector<Wave> band_limited(std::mt19937_64& rng, int count, double amp) {
  std::uniform_real_distribution<double> u01(0.0, 1.0), a(-1.0, 1.0);
  std::vector<Wave> w(count);
  for (auto& x : w) {
    const double f = 1.0 + 3.0 * u01(rng), th = 2.0 * std::numbers::pi * u01(rng);
    x.ku = 2.0 * std::numbers::pi * f * std::cos(th);
    x.kv = 2.0 * std::numbers::pi * f * std::sin(th);
    x.phase = 2.0 * std::numbers::pi * u01(rng);
    for (double& c : x.amp) c = amp * a(rng);
  }
  return w;
}

double eval_waves(const std::vector<Wave>& w, int c, double u, double v) {
  double s = 0.0;
  for (const auto& x : w) s += x.amp[c] * std::sin(x.ku * u + x.kv * v + x.phase);
  return s;
}

double psnr(const Tensor& a, const Tensor& b) {
  double se = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) se += (a[i] - b[i]) * (a[i] - b[i]);
  const double mse = se / a.numel();
  return mse == 0.0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(1.0 / mse);
}

Tensor vec_tensor(const std::vector<double>& v) { return Tensor::from(v); }

std::vector<double> tensor_vec(const Tensor& t) { return t.vec(); }

std::string sample_dir_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sample_%05d", i);
  return buf;
}

}  // namespace

DatasetConfig DatasetConfig::toy() {
  DatasetConfig c;
  c.count = 64;
  c.samples_per_identity = 2;
  return c;
}

DatasetConfig DatasetConfig::paper() {
  DatasetConfig c;
  c.count = 1000;
  c.samples_per_identity = 4;
  c.map_resolution = 512;
  c.render_size = 112;
  return c;
}

void to_json(nlohmann::json& j, const DatasetConfig& c) {
  j = {{"count", c.count},
       {"samples_per_identity", c.samples_per_identity},
       {"map_resolution", c.map_resolution},
       {"render_size", c.render_size},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, DatasetConfig& c) {
  c.count = j.at("count");
  c.samples_per_identity = j.at("samples_per_identity");
  c.map_resolution = j.at("map_resolution");
  c.render_size = j.at("render_size");
  c.seed = j.at("seed");
}

void quantize16(Tensor& t) {
  for (auto& v : t.vec()) v = static_cast<double>(std::lround(std::clamp(v, 0.0, 1.0) * 65535.0)) / 65535.0;
}

ReflectanceTriplet procedural_maps(int identity, std::uint64_t seed, int res) {
  std::mt19937_64 rng(stream_seed(seed, 1, static_cast<std::uint64_t>(identity)));
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  // skin-like base, varied widely enough that identities separate
  const double r = 0.45 + 0.4 * u01(rng);
  const double base[3] = {r, r * (0.55 + 0.3 * u01(rng)), r * (0.4 + 0.35 * u01(rng))};
  const double spec0 = 0.15 + 0.3 * u01(rng);
  const double feat = 0.7 + 0.6 * u01(rng);
  const double eye_aspect = 0.8 + 0.5 * u01(rng);
  const auto colour = band_limited(rng, 6, 0.05);
  const auto spec_noise = band_limited(rng, 4, 0.04);

  struct Bump {
    Blob b;
    double amp;
  };
  std::vector<Bump> bumps(5);
  for (auto& bp : bumps) bp = {{0.15 + 0.7 * u01(rng), 0.15 + 0.7 * u01(rng), 0.06 + 0.08 * u01(rng)},
                              0.02 * (2.0 * u01(rng) - 1.0)};

  auto height = [&](double u, double v) {
    double h = 0.015 * feat * blob(kNose, u, v) - 0.01 * blob(kMouth, u, v, 1.6);
    for (const auto& bp : bumps) h += bp.amp * blob(bp.b, u, v);
    return h;
  };

  auto out = ReflectanceTriplet::constant(res, 0.0, 0.0);
  const std::int64_t plane = static_cast<std::int64_t>(res) * res;
  const double du = 1.0 / (res - 1);
  for (int y = 0; y < res; ++y) {
    const double v = 1.0 - static_cast<double>(y) / (res - 1);  // row 0 is the top of the face
    for (int x = 0; x < res; ++x) {
      const double u = static_cast<double>(x) / (res - 1);
      const std::int64_t p = static_cast<std::int64_t>(y) * res + x;
      const double eyes = blob(kEyes[0], u, v, eye_aspect) + blob(kEyes[1], u, v, eye_aspect);
      const double brows = blob(kBrows[0], u, v, 1.8) + blob(kBrows[1], u, v, 1.8);
      const double mouth = blob(kMouth, u, v, 1.6);
      for (int c = 0; c < 3; ++c) {
        double d = base[c] + eval_waves(colour, c, u, v);
        d *= 1.0 - 0.6 * feat * std::min(1.0, eyes) - 0.45 * feat * std::min(1.0, brows);
        d += (c == 0 ? 0.15 : -0.08) * feat * mouth;
        out.diffuse[c * plane + p] = std::clamp(d, 0.05, 0.95);
        double s = spec0 + eval_waves(spec_noise, c, u, v) + 0.15 * blob(kNose, u, v) - 0.1 * brows;
        out.specular[c * plane + p] = std::clamp(s, 0.02, 0.95);
      }
      const double hx = (height(u + du, v) - height(u - du, v)) / (2 * du);
      const double hy = (height(u, v + du) - height(u, v - du)) / (2 * du);
      Eigen::Vector3d n(-hx, -hy, 1.0);
      n.normalize();
      for (int c = 0; c < 3; ++c) out.normals[c * plane + p] = 0.5 * (n[c] + 1.0);
    }
  }
  quantize16(out.diffuse);
  quantize16(out.specular);
  quantize16(out.normals);
  return out;
}

Dataset generate_dataset(const DatasetConfig& cfg, const LatentLayout& layout, const ShapeBasis& basis,
                         const IdentityEncoderConfig& enc_cfg) {
  if (cfg.count < 1 || cfg.samples_per_identity < 1) throw std::invalid_argument("dataset: count must be positive");
  if (static_cast<int>(layout.shape_id_len) != basis.n_id() || static_cast<int>(layout.shape_expr_len) != basis.n_expr())
    throw std::invalid_argument("dataset: layout shape slices do not match the basis");
  if (enc_cfg.input_size != cfg.render_size)
    throw std::invalid_argument("dataset: render size must equal the identity encoder input size");

  Dataset d{cfg, layout, basis, IdentityEncoder(enc_cfg), {}};
  const int n_ids = (cfg.count + cfg.samples_per_identity - 1) / cfg.samples_per_identity;
  std::vector<ReflectanceTriplet> maps;
  std::vector<std::vector<double>> ids;
  for (int k = 0; k < n_ids; ++k) {
    maps.push_back(procedural_maps(k, cfg.seed, cfg.map_resolution));
    std::mt19937_64 rng(stream_seed(cfg.seed, 2, k));
    std::vector<double> z(basis.n_id());
    for (auto& v : z) v = truncated_normal(rng);
    ids.push_back(std::move(z));
  }

  for (int i = 0; i < cfg.count; ++i) {
    DatasetSample s;
    s.index = i;
    s.identity = i / cfg.samples_per_identity;
    s.maps = maps[s.identity];
    s.shape_id = ids[s.identity];
    std::mt19937_64 rng(stream_seed(cfg.seed, 3, i));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    s.shape_expr.resize(basis.n_expr());
    for (auto& v : s.shape_expr) v = truncated_normal(rng);
    Illumination ill({0.15 + 0.2 * u01(rng), 0.15 + 0.2 * u01(rng), 0.15 + 0.2 * u01(rng)},
                     {0.4 + 0.3 * u01(rng), 0.4 + 0.3 * u01(rng), 0.4 + 0.3 * u01(rng)},
                     {0.8 * u01(rng) - 0.4, 0.8 * u01(rng) - 0.4, 1.0});
    const auto iv = ill.to_vector();
    s.ill.assign(iv.begin(), iv.end());
    s.pose.rotation = {0.0, 0.0, 0.2 * u01(rng) - 0.1};
    s.pose.translation = {0.06 * u01(rng) - 0.03, 0.06 * u01(rng) - 0.03, 0.0};
    s.pose.scale = 0.95 + 0.1 * u01(rng);

    auto r = render(s.mesh(basis), s.maps, ill, s.pose, cfg.render_size);
    if (r.degenerate) throw std::logic_error("dataset: sample " + std::to_string(i) + " rendered nothing");
    s.image = r.image;
    quantize16(s.image);
    if (psnr(s.image, r.image) < 40.0) throw std::logic_error("dataset: sample " + std::to_string(i) + " is inconsistent");
    d.samples.push_back(std::move(s));
  }

  std::vector<Tensor> images;
  for (const auto& s : d.samples) images.push_back(s.image);
  d.encoder.calibrate(images);
  for (auto& s : d.samples) s.embedding = d.encoder.embed(s.image);
  return d;
}

void save_dataset(const Dataset& d, const fs::path& dir) {
  fs::create_directories(dir);
  nlohmann::json manifest = {{"format", "avatar-dataset"},
                             {"version", kDatasetVersion},
                             {"count", d.samples.size()},
                             {"config", d.config},
                             {"layout", d.layout},
                             {"seeds", {{"dataset", d.config.seed}, {"encoder", d.encoder.config().seed}}},
                             {"samples", nlohmann::json::array()}};
  io::save_archive(dir / "basis.avtr", basis_to_archive(d.basis));
  io::save_archive(dir / "encoder.avtr", d.encoder.to_archive());
  for (const auto& s : d.samples) {
    const std::string name = sample_dir_name(s.index);
    const fs::path tmp = dir / (name + ".tmp"), final_dir = dir / name;
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    io::write_png(tmp / "image.png", s.image, 16);
    io::write_png(tmp / "diffuse.png", s.maps.diffuse, 16);
    io::write_png(tmp / "specular.png", s.maps.specular, 16);
    io::write_png(tmp / "normals.png", s.maps.normals, 16);
    io::save_npy(tmp / "shape_id.npy", vec_tensor(s.shape_id));
    io::save_npy(tmp / "shape_expr.npy", vec_tensor(s.shape_expr));
    io::save_npy(tmp / "ill.npy", vec_tensor(s.ill));
    const auto& p = s.pose;
    io::save_npy(tmp / "pose.npy", vec_tensor({p.rotation[0], p.rotation[1], p.rotation[2], p.translation[0],
                                               p.translation[1], p.translation[2], p.scale}));
    io::save_npy(tmp / "V.npy", s.embedding.V);
    io::save_npy(tmp / "C2.npy", s.embedding.C2);
    io::save_npy(tmp / "C3.npy", s.embedding.C3);
    io::save_npy(tmp / "C4.npy", s.embedding.C4);
    fs::remove_all(final_dir);
    fs::rename(tmp, final_dir);
    manifest["samples"].push_back({{"dir", name}, {"index", s.index}, {"identity", s.identity}});
  }
  io::write_text(dir / "manifest.json", manifest.dump(2));
}

Dataset load_dataset(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json"))
    throw io::FormatError("dataset: no manifest.json in " + dir.string() + " (create one with make-dataset)");
  const auto manifest = nlohmann::json::parse(io::read_text(dir / "manifest.json"));
  const int version = manifest.value("version", -1);
  if (version != kDatasetVersion)
    throw io::FormatError("dataset: manifest version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kDatasetVersion) + ")");
  Dataset d{manifest.at("config").get<DatasetConfig>(), manifest.at("layout").get<LatentLayout>(),
            basis_from_archive(io::load_archive(dir / "basis.avtr")),
            IdentityEncoder::from_archive(io::load_archive(dir / "encoder.avtr")),
            {}};
  const auto& entries = manifest.at("samples");
  if (entries.size() != manifest.at("count").get<std::size_t>())
    throw io::FormatError("dataset: manifest count disagrees with its sample list");
  for (const auto& e : entries) {
    DatasetSample s;
    s.index = e.at("index");
    s.identity = e.at("identity");
    const fs::path sd = dir / e.at("dir").get<std::string>();
    try {
      s.image = io::read_png(sd / "image.png");
      s.maps.diffuse = io::read_png(sd / "diffuse.png");
      s.maps.specular = io::read_png(sd / "specular.png");
      s.maps.normals = io::read_png(sd / "normals.png");
      s.maps.validate();
      s.shape_id = tensor_vec(io::load_npy(sd / "shape_id.npy"));
      s.shape_expr = tensor_vec(io::load_npy(sd / "shape_expr.npy"));
      s.ill = tensor_vec(io::load_npy(sd / "ill.npy"));
      const auto p = tensor_vec(io::load_npy(sd / "pose.npy"));
      if (p.size() != 7 || s.ill.size() != 9) throw io::FormatError("bad pose or illumination length");
      s.pose.rotation = {p[0], p[1], p[2]};
      s.pose.translation = {p[3], p[4], p[5]};
      s.pose.scale = p[6];
      s.embedding.V = io::load_npy(sd / "V.npy");
      s.embedding.C2 = io::load_npy(sd / "C2.npy");
      s.embedding.C3 = io::load_npy(sd / "C3.npy");
      s.embedding.C4 = io::load_npy(sd / "C4.npy");
    } catch (const std::exception& ex) {
      throw io::FormatError("dataset: sample " + std::to_string(s.index) + " (" + sd.string() + ") is damaged: " +
                            ex.what());
    }
    d.samples.push_back(std::move(s));
  }
  return d;
}

std::string dataset_checksum(const Dataset& d) {
  std::string bytes;
  auto put = [&](const double* p, std::size_t n) {
    bytes.append(reinterpret_cast<const char*>(p), n * sizeof(double));
  };
  auto put_t = [&](const Tensor& t) { put(t.data(), static_cast<std::size_t>(t.numel())); };
  auto put_v = [&](const std::vector<double>& v) { put(v.data(), v.size()); };
  for (const auto& s : d.samples) {
    const double ids[2] = {static_cast<double>(s.index), static_cast<double>(s.identity)};
    put(ids, 2);
    put_t(s.image);
    put_t(s.maps.diffuse);
    put_t(s.maps.specular);
    put_t(s.maps.normals);
    put_v(s.shape_id);
    put_v(s.shape_expr);
    put_v(s.ill);
    put(s.pose.rotation.data(), 3);
    put(s.pose.translation.data(), 3);
    put(&s.pose.scale, 1);
    put_t(s.embedding.V);
    put_t(s.embedding.C2);
    put_t(s.embedding.C3);
    put_t(s.embedding.C4);
  }
  return io::sha1_hex(bytes);
}

DatasetSplit split_dataset(const Dataset& d, double validation_fraction) {
  if (validation_fraction < 0.0 || validation_fraction > 1.0)
    throw std::invalid_argument("split: fraction must lie in [0,1]");
  DatasetSplit out;
  for (const auto& s : d.samples) {
    const double h = static_cast<double>(splitmix(static_cast<std::uint64_t>(s.index) ^ 0x5A17ull) >> 11) * 0x1.0p-53;
    (h < validation_fraction ? out.validation : out.train).push_back(s.index);
  }
  return out;
}

}  // namespace avatar
