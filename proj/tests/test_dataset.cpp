#include <doctest.h>

#include <chrono>
#include <fstream>

#include "avatar/dataset.hpp"
#include "avatar/io.hpp"

using namespace avatar;
namespace fs = std::filesystem;

namespace {

const ShapeBasis& basis() {
  static const ShapeBasis b = build_synthetic_basis(256, 16, 8, 11);
  return b;
}

Dataset small(int n, std::uint64_t seed, int per_identity = 1) {
  DatasetConfig c;
  c.count = n;
  c.seed = seed;
  c.samples_per_identity = per_identity;
  return generate_dataset(c, LatentLayout::toy(), basis(), IdentityEncoderConfig::toy());
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("avatar_ds_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("toy dataset is deterministic, consistent and quick to build") {
  const auto t0 = std::chrono::steady_clock::now();
  auto a = small(32, 5);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(secs < 60.0);
  REQUIRE(a.size() == 32);
  CHECK(dataset_checksum(small(32, 5)) == dataset_checksum(a));
  CHECK(dataset_checksum(small(32, 6)) != dataset_checksum(a));

  for (const auto& s : a.samples) {
    CHECK(s.shape_id.size() == 16);
    CHECK(s.shape_expr.size() == 8);
    for (double v : s.shape_id) CHECK(std::abs(v) <= 3.0);
    for (double v : s.maps.diffuse.vec()) CHECK(v >= 0.05);
    auto r = render(s.mesh(a.basis), s.maps, Illumination::from_vector(s.ill), s.pose, 32).image;
    double se = 0.0;
    for (std::int64_t i = 0; i < r.numel(); ++i) se += (r[i] - s.image[i]) * (r[i] - s.image[i]);
    CHECK(10.0 * std::log10(r.numel() / std::max(se, 1e-300)) >= 40.0);
    CHECK(a.encoder.embed(s.image).V.vec() == s.embedding.V.vec());
    for (int k = 0; k < 3; ++k) CHECK(s.ill[k] >= 0.1);
  }
}

TEST_CASE("renders of one identity are closer than renders of different identities") {
  auto d = small(24, 9, 2);
  double same = 0.0, diff = 0.0;
  int ns = 0, nd = 0;
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = i + 1; j < d.size(); ++j) {
      const double c = cosine_similarity(d.samples[i].embedding.V, d.samples[j].embedding.V);
      if (d.samples[i].identity == d.samples[j].identity) {
        same += c;
        ++ns;
      } else {
        diff += c;
        ++nd;
      }
    }
  MESSAGE("same " << same / ns << " diff " << diff / nd);
  CHECK(same / ns > diff / nd + 0.1);
}

TEST_CASE("save/load round trip is bit-exact") {
  auto d = small(6, 3);
  auto dir = scratch("rt");
  save_dataset(d, dir);
  auto back = load_dataset(dir);
  CHECK(dataset_checksum(back) == dataset_checksum(d));
  CHECK(back.encoder.embed(back.samples[2].image).V.vec() == d.samples[2].embedding.V.vec());
  CHECK(back.basis.U_id == d.basis.U_id);

  int subdirs = 0;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) ++subdirs;
  auto manifest = nlohmann::json::parse(io::read_text(dir / "manifest.json"));
  CHECK(manifest.at("count").get<int>() == subdirs);
  fs::remove_all(dir);
}

TEST_CASE("damaged samples and foreign versions are refused") {
  auto d = small(4, 3);
  auto dir = scratch("bad");
  save_dataset(d, dir);
  {
    std::ofstream f(dir / "sample_00002" / "ill.npy", std::ios::binary | std::ios::trunc);
    f << "\x93NUMPY";
  }
  try {
    load_dataset(dir);
    FAIL("expected a format error");
  } catch (const io::FormatError& e) {
    CHECK(std::string(e.what()).find("sample 2") != std::string::npos);
  }

  auto m = nlohmann::json::parse(io::read_text(dir / "manifest.json"));
  m["version"] = 99;
  io::write_text(dir / "manifest.json", m.dump());
  CHECK_THROWS_AS(load_dataset(dir), io::FormatError);
  CHECK_THROWS_AS(load_dataset(dir / "missing"), io::FormatError);
  fs::remove_all(dir);
}

TEST_CASE("split is stable, disjoint and covers every index") {
  auto d = small(40, 1);
  auto a = split_dataset(d, 0.25), b = split_dataset(d, 0.25);
  CHECK(a.train == b.train);
  CHECK(a.train.size() + a.validation.size() == 40);
  CHECK_FALSE(a.validation.empty());
  for (int v : a.validation) CHECK(std::find(a.train.begin(), a.train.end(), v) == a.train.end());
  CHECK(split_dataset(d, 0.0).validation.empty());
}

TEST_CASE("procedural maps sit on the 16-bit grid") {
  auto m = procedural_maps(3, 1, 32);
  m.validate();
  for (double v : m.normals.vec()) CHECK(v * 65535.0 == std::round(v * 65535.0));
  CHECK(procedural_maps(3, 1, 32) == m);
  CHECK_FALSE(procedural_maps(4, 1, 32) == m);
}
