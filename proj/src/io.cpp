#include "avatar/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <regex>
#include <sstream>

#include <openssl/sha.h>
#include <png.h>

namespace avatar::io {

namespace {

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_bytes(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  // Write then rename so readers never observe a half-written file.
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

template <typename T>
T read_le(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

}  // namespace

void save_npy(const fs::path& path, const Tensor& t) {
  // numpy spells 1-d shapes as "(n,)"
  std::string shape = "(";
  for (std::size_t i = 0; i < t.ndim(); ++i) shape += (i ? ", " : "") + std::to_string(t.dim(i));
  shape += t.ndim() == 1 ? ",)" : ")";
  std::string header = "{'descr': '<f8', 'fortran_order': False, 'shape': " + shape + ", }";
  // Pad so the data starts on a 64-byte boundary, header ends with '\n'.
  const std::size_t base = 10;
  std::size_t total = base + header.size() + 1;
  header.append((64 - total % 64) % 64, ' ');
  header.push_back('\n');
  std::string bytes = "\x93NUMPY";
  bytes.push_back('\x01');
  bytes.push_back('\x00');
  const auto hlen = static_cast<std::uint16_t>(header.size());
  bytes.append(reinterpret_cast<const char*>(&hlen), 2);
  bytes += header;
  bytes.append(reinterpret_cast<const char*>(t.data()), static_cast<std::size_t>(t.numel()) * sizeof(double));
  write_bytes(path, bytes);
}

Tensor load_npy(const fs::path& path) {
  const std::string bytes = read_bytes(path);
  if (bytes.size() < 10 || bytes.compare(0, 6, "\x93NUMPY") != 0)
    throw FormatError(path.string() + ": not a .npy file");
  const int major = static_cast<unsigned char>(bytes[6]);
  std::size_t hlen, off;
  if (major == 1) {
    hlen = read_le<std::uint16_t>(bytes.data() + 8);
    off = 10;
  } else {
    if (bytes.size() < 12) throw FormatError(path.string() + ": truncated header");
    hlen = read_le<std::uint32_t>(bytes.data() + 8);
    off = 12;
  }
  if (bytes.size() < off + hlen) throw FormatError(path.string() + ": truncated header");
  const std::string header = bytes.substr(off, hlen);
  std::smatch m;
  if (!std::regex_search(header, m, std::regex("'descr':\\s*'([^']*)'")))
    throw FormatError(path.string() + ": header lacks descr");
  const std::string descr = m[1];
  if (std::regex_search(header, std::regex("'fortran_order':\\s*True")))
    throw FormatError(path.string() + ": Fortran-order arrays are not supported");
  if (!std::regex_search(header, m, std::regex("'shape':\\s*\\(([^)]*)\\)")))
    throw FormatError(path.string() + ": header lacks shape");
  Shape shape;
  {
    std::string dims = m[1];
    std::regex num("\\d+");
    for (auto it = std::sregex_iterator(dims.begin(), dims.end(), num); it != std::sregex_iterator(); ++it)
      shape.push_back(std::stoll(it->str()));
  }
  const std::int64_t n = shape_numel(shape);
  const char* p = bytes.data() + off + hlen;
  const std::size_t avail = bytes.size() - off - hlen;
  std::vector<double> data(static_cast<std::size_t>(n));
  auto need = [&](std::size_t w) {
    if (avail < static_cast<std::size_t>(n) * w) throw FormatError(path.string() + ": truncated data");
  };
  if (descr == "<f8") {
    need(8);
    std::memcpy(data.data(), p, static_cast<std::size_t>(n) * 8);
  } else if (descr == "<f4") {
    need(4);
    for (std::int64_t i = 0; i < n; ++i) data[i] = read_le<float>(p + 4 * i);
  } else if (descr == "<i8") {
    need(8);
    for (std::int64_t i = 0; i < n; ++i) data[i] = static_cast<double>(read_le<std::int64_t>(p + 8 * i));
  } else if (descr == "<i4") {
    need(4);
    for (std::int64_t i = 0; i < n; ++i) data[i] = read_le<std::int32_t>(p + 4 * i);
  } else if (descr == "<u2") {
    need(2);
    for (std::int64_t i = 0; i < n; ++i) data[i] = read_le<std::uint16_t>(p + 2 * i);
  } else if (descr == "|u1") {
    need(1);
    for (std::int64_t i = 0; i < n; ++i) data[i] = static_cast<unsigned char>(p[i]);
  } else {
    throw FormatError(path.string() + ": unsupported dtype " + descr);
  }
  return Tensor(shape, std::move(data));
}

void write_png(const fs::path& path, const Tensor& img, int bit_depth) {
  if (img.ndim() != 3 || (img.dim(0) != 1 && img.dim(0) != 3))
    throw std::invalid_argument("write_png: expected [1|3,H,W], got " + shape_str(img.shape()));
  if (bit_depth != 8 && bit_depth != 16) throw std::invalid_argument("write_png: bit depth must be 8 or 16");
  const int c = static_cast<int>(img.dim(0)), h = static_cast<int>(img.dim(1)), w = static_cast<int>(img.dim(2));
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  std::unique_ptr<std::FILE, FileCloser> f(std::fopen(tmp.c_str(), "wb"));
  if (!f) throw std::runtime_error("cannot write " + tmp.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng failed writing " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, w, h, bit_depth, c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const int bpc = bit_depth / 8;
  const double maxv = bit_depth == 8 ? 255.0 : 65535.0;
  std::vector<unsigned char> row(static_cast<std::size_t>(w) * c * bpc);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < c; ++k) {
        const double v = std::clamp(img[(static_cast<std::int64_t>(k) * h + y) * w + x], 0.0, 1.0);
        const auto code = static_cast<unsigned>(std::lround(v * maxv));
        unsigned char* dst = row.data() + (static_cast<std::size_t>(x) * c + k) * bpc;
        if (bpc == 1) {
          dst[0] = static_cast<unsigned char>(code);
        } else {
          dst[0] = static_cast<unsigned char>(code >> 8);  // PNG is big-endian
          dst[1] = static_cast<unsigned char>(code & 0xff);
        }
      }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  f.reset();
  fs::rename(tmp, path);
}

Tensor read_png(const fs::path& path) {
  std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("cannot open " + path.string());
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8)) throw FormatError(path.string() + ": not a PNG");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("libpng failed reading " + path.string());
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (depth == 16) png_set_swap(png);  // host order (little-endian)
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const int c = png_get_channels(png, info);
  depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  std::vector<unsigned char> buf(rowbytes * h);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y) rows[y] = buf.data() + rowbytes * y;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  const double maxv = depth == 16 ? 65535.0 : 255.0;
  Tensor out({c, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < c; ++k) {
        const std::size_t i = static_cast<std::size_t>(x) * c + k;
        const double code = depth == 16 ? read_le<std::uint16_t>(reinterpret_cast<const char*>(rows[y]) + 2 * i)
                                        : rows[y][i];
        out[(static_cast<std::int64_t>(k) * h + y) * w + x] = code / maxv;
      }
  return out;
}

std::string sha1_hex(const void* data, std::size_t n) {
  unsigned char md[SHA_DIGEST_LENGTH];
  SHA1(static_cast<const unsigned char*>(data), n, md);
  static const char* hex = "0123456789abcdef";
  std::string s;
  for (unsigned char b : md) {
    s.push_back(hex[b >> 4]);
    s.push_back(hex[b & 15]);
  }
  return s;
}

std::string sha1_hex(const std::string& s) { return sha1_hex(s.data(), s.size()); }

std::string git_blob_hash(const fs::path& path) {
  const std::string body = read_bytes(path);
  std::string blob = "blob " + std::to_string(body.size());
  blob.push_back('\0');
  blob += body;
  return sha1_hex(blob);
}

const Tensor& Archive::at(const std::string& name) const {
  for (const auto& [n, t] : arrays)
    if (n == name) return t;
  throw std::out_of_range("archive has no array '" + name + "'");
}

bool Archive::contains(const std::string& name) const {
  return std::any_of(arrays.begin(), arrays.end(), [&](const auto& p) { return p.first == name; });
}

namespace {
constexpr char kMagic[8] = {'A', 'V', 'T', 'R', 'A', 'R', 'C', 'H'};
}

void save_archive(const fs::path& path, const Archive& a) {
  nlohmann::json header;
  header["version"] = kArchiveVersion;
  header["meta"] = a.meta;
  header["arrays"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : a.arrays) {
    header["arrays"].push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(t.numel()) * sizeof(double);
  }
  const std::string hs = header.dump();
  std::string bytes(kMagic, 8);
  const std::uint64_t hlen = hs.size();
  bytes.append(reinterpret_cast<const char*>(&hlen), 8);
  bytes += hs;
  bytes.reserve(bytes.size() + offset);
  for (const auto& [name, t] : a.arrays)
    bytes.append(reinterpret_cast<const char*>(t.data()), static_cast<std::size_t>(t.numel()) * sizeof(double));
  write_bytes(path, bytes);
}

Archive load_archive(const fs::path& path) {
  const std::string bytes = read_bytes(path);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw FormatError(path.string() + ": not an archive");
  const auto hlen = read_le<std::uint64_t>(bytes.data() + 8);
  if (bytes.size() < 16 + hlen) throw FormatError(path.string() + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": corrupt header: " + e.what());
  }
  const int version = header.value("version", -1);
  if (version != kArchiveVersion)
    throw FormatError(path.string() + ": archive version " + std::to_string(version) + ", expected " +
                      std::to_string(kArchiveVersion));
  Archive a;
  a.meta = header["meta"];
  const std::size_t data0 = 16 + hlen;
  for (const auto& e : header["arrays"]) {
    const Shape shape = e["shape"].get<Shape>();
    const auto off = e["offset"].get<std::uint64_t>();
    const std::size_t nbytes = static_cast<std::size_t>(shape_numel(shape)) * sizeof(double);
    if (data0 + off + nbytes > bytes.size())
      throw FormatError(path.string() + ": array '" + e["name"].get<std::string>() + "' is truncated");
    std::vector<double> data(static_cast<std::size_t>(shape_numel(shape)));
    std::memcpy(data.data(), bytes.data() + data0 + off, nbytes);
    a.arrays.emplace_back(e["name"].get<std::string>(), Tensor(shape, std::move(data)));
  }
  return a;
}

std::string read_text(const fs::path& path) { return read_bytes(path); }

void write_text(const fs::path& path, const std::string& text) { write_bytes(path, text); }

}  // namespace avatar::io
