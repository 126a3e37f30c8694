#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "avatar/artifacts.hpp"
#include "avatar/plot.hpp"
#include "avatar/run_config.hpp"

using namespace avatar;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("avatar_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("presets resolve and validate") {
  for (const char* name : {"toy", "paper"}) {
    const auto c = RunConfig::from_preset(name);
    CHECK(c.preset == name);
    CHECK_NOTHROW(c.validate());
  }
  CHECK_THROWS_AS(RunConfig::from_preset("huge"), ConfigError);
  const auto toy = RunConfig::toy();
  CHECK(toy.dataset.render_size == toy.model.render_size);
  CHECK(toy.guidance.scale != RunConfig::paper().guidance.scale);
}

TEST_CASE("json round trip keeps every key") {
  auto c = RunConfig::paper();
  c.run.seed = 99;
  c.guidance.ancestral = true;
  const auto back = RunConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.flatten() == c.flatten());
}

TEST_CASE("overrides parse by the type of the existing value") {
  auto c = RunConfig::toy();
  c.apply({{"guidance.scale", "12.5"},
           {"run.seed", "123"},
           {"guidance.ancestral", "true"},
           {"ldm.optimizer", "sgd"}});
  CHECK(c.guidance.scale == 12.5);
  CHECK(c.run.seed == 123u);
  CHECK(c.guidance.ancestral);
  CHECK(c.ldm.optimizer == "sgd");

  // every flattened key is accepted back unchanged
  auto d = RunConfig::toy();
  d.apply(d.flatten());
  CHECK(d.to_json() == RunConfig::toy().to_json());
}

TEST_CASE("array keys take comma separated values") {
  auto c = RunConfig::toy();
  std::string key;
  for (const auto& [k, v] : c.flatten())
    if (v.find(',') != std::string::npos) {
      key = k;
      break;
    }
  REQUIRE_FALSE(key.empty());
  const auto before = c.flatten().at(key);
  c.apply({{key, before}});
  CHECK(c.flatten().at(key) == before);
}

TEST_CASE("unknown keys and bad values are rejected") {
  auto c = RunConfig::toy();
  const auto snapshot = c.to_json();
  CHECK_THROWS_AS(c.apply({{"guidance.scal", "3"}}), ConfigError);
  CHECK_THROWS_AS(c.apply({{"nonsense", "3"}}), ConfigError);
  CHECK_THROWS_AS(c.apply({{"guidance", "3"}}), ConfigError);
  CHECK_THROWS_AS(c.apply({{"guidance.steps", "ten"}}), ConfigError);
  CHECK_THROWS_AS(c.apply({{"guidance.steps", "10.5"}}), ConfigError);
  CHECK_THROWS_AS(c.apply({{"guidance.ancestral", "maybe"}}), ConfigError);
  CHECK_THROWS_AS(c.apply({{"run.holdout_fraction", "1.5"}}), ConfigError);
  CHECK_THROWS_AS(c.apply({{"dataset.render_size", "48"}}), ConfigError);
  // a failed apply leaves the config untouched
  CHECK(c.to_json() == snapshot);
}

TEST_CASE("config files: comments, blanks, duplicates") {
  const auto kv = parse_overrides("# header\n\nguidance.scale = 4  # trailing\n run.seed=3\n");
  CHECK(kv.size() == 2);
  CHECK(kv.at("guidance.scale") == "4");
  CHECK(kv.at("run.seed") == "3");
  CHECK_THROWS_AS(parse_overrides("a=1\na=2\n"), ConfigError);
  CHECK_THROWS_AS(parse_overrides("just words\n"), ConfigError);
}

TEST_CASE("precedence: later layers win") {
  auto c = RunConfig::from_preset("toy");
  c.apply(parse_overrides("guidance.scale=5\nguidance.steps=20\n"));
  c.apply({{"guidance.scale", "7"}});
  CHECK(c.guidance.scale == 7.0);
  CHECK(c.guidance.steps == 20);
}

TEST_CASE("epochs override step counts") {
  auto c = RunConfig::toy();
  c.run.ldm_steps = 11;
  CHECK(c.ldm_step_count(100) == 11);
  c.run.ldm_epochs = 3;
  c.ldm.batch_size = 16;
  CHECK(c.ldm_step_count(100) == 3 * 7);
}

TEST_CASE("latent archive round trip") {
  const LatentLayout layout = ModelConfig::toy().layout;
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n;
  std::vector<double> v(layout.total());
  for (auto& x : v) x = n(rng);
  const AvatarLatent z(layout, v);
  const auto dir = scratch_dir("latent");
  io::save_archive(dir / "z.avtr", latent_to_archive(z));
  const auto back = latent_from_archive(io::load_archive(dir / "z.avtr"));
  CHECK(back.values() == z.values());

  io::Archive wrong = latent_to_archive(z);
  wrong.meta["kind"] = "something_else";
  CHECK_THROWS_AS(latent_from_archive(wrong), io::FormatError);
  io::Archive short_z = latent_to_archive(AvatarLatent(layout, v));
  short_z.arrays[0].second = Tensor::from(std::vector<double>(3, 0.0));
  CHECK_THROWS_AS(latent_from_archive(short_z), io::FormatError);
}

TEST_CASE("obj export lists vertices, uvs and 1-based faces") {
  Mesh m;
  m.vertices.resize(3, 3);
  m.vertices << 0, 0, 0, 1, 0, 0, 0, 1, 0.5;
  m.uv.resize(3, 2);
  m.uv << 0, 0, 1, 0, 0, 1;
  m.faces = {Face{0, 1, 2}};
  const auto dir = scratch_dir("obj");
  write_obj(dir / "m.obj", m);
  std::ifstream is(dir / "m.obj");
  std::string line;
  int v = 0, vt = 0, f = 0;
  std::string face;
  while (std::getline(is, line)) {
    if (line.rfind("v ", 0) == 0) ++v;
    if (line.rfind("vt ", 0) == 0) ++vt;
    if (line.rfind("f ", 0) == 0) ++f, face = line;
  }
  CHECK(v == 3);
  CHECK(vt == 3);
  CHECK(f == 1);
  CHECK(face == "f 1/1 2/2 3/3");
}

TEST_CASE("map PNGs round trip at 16 bits") {
  const int r = 16;
  ReflectanceTriplet t{Tensor({3, r, r}), Tensor({3, r, r}), Tensor({3, r, r})};
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (Tensor* m : {&t.diffuse, &t.specular, &t.normals})
    for (auto& x : m->vec()) x = u(rng);
  const auto dir = scratch_dir("maps");
  write_maps(dir, t);
  const auto back = read_maps(dir);
  double worst = 0.0;
  for (std::int64_t i = 0; i < t.diffuse.numel(); ++i) {
    worst = std::max(worst, std::abs(back.diffuse[i] - t.diffuse[i]));
    worst = std::max(worst, std::abs(back.normals[i] - t.normals[i]));
  }
  CHECK(worst <= 0.5 / 65535.0 + 1e-12);
}

TEST_CASE("tables parse from csv and whitespace logs") {
  const auto csv = parse_table("arm,mean_similarity,std\n\"Label Only\",0.4,0.1\n\"CFG (w=2)\",0.5,0.2\n");
  CHECK(csv.columns.size() == 3);
  REQUIRE(csv.rows.size() == 2);
  CHECK(csv.rows[1][0] == "CFG (w=2)");
  CHECK(csv.column("std") == 2);
  CHECK(csv.column("nope") == -1);

  const auto log = parse_table("step noise id\n1 0.8 0.1\n  2   0.7\t0.09\n");
  CHECK(log.columns == std::vector<std::string>{"step", "noise", "id"});
  CHECK(log.rows[1][2] == "0.09");

  CHECK_THROWS_AS(parse_table("a,b\n1,2,3\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_table("a,b\n"), std::invalid_argument);
}

TEST_CASE("charts draw something inside the canvas") {
  auto ink = [](const Tensor& img) {
    std::int64_t n = 0;
    const std::int64_t plane = img.dim(1) * img.dim(2);
    for (std::int64_t i = 0; i < plane; ++i)
      if (img[i] < 0.99 || img[plane + i] < 0.99 || img[2 * plane + i] < 0.99) ++n;
    return n;
  };
  const auto line = plot_table(parse_table("scale,mean_similarity,std\n0,0.4,0.1\n30,0.5,0.1\n60,0.55,inf\n"));
  CHECK(line.shape() == Shape{3, 400, 640});
  CHECK(ink(line) > 2000);
  const auto bars = plot_table(parse_table("arm,mean_similarity,std\nA,0.4,0.1\nB,-0.2,0.05\n"), 320, 200);
  CHECK(bars.shape() == Shape{3, 200, 320});
  CHECK(ink(bars) > 1000);
  bool in_range = true;
  for (auto v : bars.vec()) in_range = in_range && v >= 0.0 && v <= 1.0;
  CHECK(in_range);
  CHECK_THROWS_AS(plot_table(parse_table("a,b\nx,y\n")), std::invalid_argument);
}
