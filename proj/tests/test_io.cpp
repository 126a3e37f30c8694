#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <random>

#include "avatar/io.hpp"

using namespace avatar;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path d = fs::temp_directory_path() / "avatar_test_io";
  fs::create_directories(d);
  return d / name;
}

Tensor random_tensor(Shape s, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor t(std::move(s));
  for (auto& v : t.vec()) v = u(rng);
  return t;
}

}  // namespace

TEST_CASE("npy round trip is bit exact") {
  for (Shape s : {Shape{}, Shape{7}, Shape{3, 4, 5}}) {
    auto t = random_tensor(s, 1);
    if (s.empty()) t = Tensor::scalar(3.25);
    auto p = scratch("a.npy");
    io::save_npy(p, t);
    auto back = io::load_npy(p);
    CHECK(back.shape() == t.shape());
    CHECK(back.vec() == t.vec());
    // header length is a multiple of 64 for aligned reads
    CHECK((fs::file_size(p) - t.numel() * 8) % 64 == 0);
  }
}

TEST_CASE("npy files written by numpy load") {
  if (std::system("python3 -c 'import numpy' > /dev/null 2>&1") != 0) return;
  auto p = scratch("np.npy");
  const std::string cmd = "python3 -c \"import numpy as np; np.save('" + p.string() +
                          "', np.arange(6, dtype=np.float32).reshape(2,3))\"";
  REQUIRE(std::system(cmd.c_str()) == 0);
  auto t = io::load_npy(p);
  CHECK(t.shape() == Shape{2, 3});
  CHECK(t[5] == 5.0);
  // and numpy reads ours
  io::save_npy(p, Tensor({2, 2}, {1.5, 2.5, 3.5, 4.5}));
  const std::string check = "python3 -c \"import numpy as np; a=np.load('" + p.string() +
                            "'); assert a.shape==(2,2) and a[1,1]==4.5\"";
  CHECK(std::system(check.c_str()) == 0);
}

TEST_CASE("truncated npy is rejected") {
  auto p = scratch("trunc.npy");
  io::save_npy(p, random_tensor({100}, 2));
  fs::resize_file(p, fs::file_size(p) - 8);
  CHECK_THROWS_AS(io::load_npy(p), io::FormatError);
}

TEST_CASE("16-bit PNG round trip is exact on the code grid") {
  Tensor img({3, 5, 7});
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> code(0, 65535);
  for (auto& v : img.vec()) v = code(rng) / 65535.0;
  auto p = scratch("a16.png");
  io::write_png(p, img, 16);
  auto back = io::read_png(p);
  CHECK(back.shape() == img.shape());
  CHECK(back.vec() == img.vec());
}

TEST_CASE("8-bit PNG quantizes to half a code") {
  auto img = random_tensor({1, 4, 4}, 4);
  auto p = scratch("a8.png");
  io::write_png(p, img, 8);
  auto back = io::read_png(p);
  for (std::int64_t i = 0; i < img.numel(); ++i) CHECK(std::abs(back[i] - img[i]) <= 0.5 / 255.0 + 1e-12);
  CHECK_THROWS_AS(io::write_png(p, Tensor({2, 4, 4}), 8), std::invalid_argument);
}

TEST_CASE("sha1 and git blob hash match known values") {
  CHECK(io::sha1_hex("abc") == "a9993e364706816aba3e25717850c26c9cd0d89d");
  auto p = scratch("hello.txt");
  io::write_text(p, "hello\n");
  // `git hash-object` of "hello\n"
  CHECK(io::git_blob_hash(p) == "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST_CASE("archive round trip, version and truncation checks") {
  io::Archive a;
  a.meta = {{"kind", "test"}, {"n", 2}};
  a.arrays.emplace_back("w", random_tensor({3, 4}, 5));
  a.arrays.emplace_back("b", random_tensor({4}, 6));
  auto p = scratch("a.arch");
  io::save_archive(p, a);
  auto b = io::load_archive(p);
  CHECK(b.meta == a.meta);
  CHECK(b.at("w").vec() == a.at("w").vec());
  CHECK(b.at("b").shape() == Shape{4});
  CHECK_FALSE(b.contains("zz"));

  fs::resize_file(p, fs::file_size(p) - 1);
  try {
    io::load_archive(p);
    FAIL("expected truncation error");
  } catch (const io::FormatError& e) {
    CHECK(std::string(e.what()).find("'b'") != std::string::npos);
  }

  // Bump the version number inside the header.
  io::save_archive(p, a);
  std::string bytes = io::read_text(p);
  auto pos = bytes.find("\"version\":1");
  REQUIRE(pos != std::string::npos);
  bytes[pos + 10] = '9';
  io::write_text(p, bytes);
  CHECK_THROWS_AS(io::load_archive(p), io::FormatError);
}
