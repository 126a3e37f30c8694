#include "avatar/plot.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <stdexcept>

namespace avatar {

namespace {

using Rgb = std::array<double, 3>;

const Rgb kBlack{0, 0, 0};
const Rgb kGrey{0.85, 0.85, 0.85};
const std::array<Rgb, 6> kPalette{{{0.12, 0.47, 0.71},
                                   {0.84, 0.15, 0.16},
                                   {0.17, 0.63, 0.17},
                                   {1.0, 0.5, 0.05},
                                   {0.58, 0.4, 0.74},
                                   {0.55, 0.34, 0.29}}};

// 3x5 glyphs, rows top to bottom.
const char* glyph(char c) {
  switch (c) {
    case '0': case 'O': return "####.##.##.####";
    case '1': return ".#.##..#..#.###";
    case '2': return "###..#####..###";
    case '3': return "###..####..####";
    case '4': return "#.##.####..#..#";
    case '5': return "####..###..####";
    case '6': return "####..####.####";
    case '7': return "###..#..#..#..#";
    case '8': return "####.#####.####";
    case '9': return "####.####..####";
    case 'A': return ".#.#.#####.##.#";
    case 'B': return "##.#.###.#.###.";
    case 'C': return "####..#..#..###";
    case 'D': return "##.#.##.##.###.";
    case 'E': return "####..##.#..###";
    case 'F': return "####..##.#..#..";
    case 'G': return "####..#.##.####";
    case 'H': return "#.##.#####.##.#";
    case 'I': return "###.#..#..#.###";
    case 'J': return "..#..#..##.####";
    case 'K': return "#.##.###.#.##.#";
    case 'L': return "#..#..#..#..###";
    case 'M': return "#.########.##.#";
    case 'N': return "##.#.##.##.##.#";
    case 'P': return "####.#####..#..";
    case 'Q': return "####.##.####..#";
    case 'R': return "##.#.###.#.##.#";
    case 'S': return "####..###..####";
    case 'T': return "###.#..#..#..#.";
    case 'U': return "#.##.##.##.####";
    case 'V': return "#.##.##.##.#.#.";
    case 'W': return "#.##.########.#";
    case 'X': return "#.##.#.#.#.##.#";
    case 'Y': return "#.##.#.#..#..#.";
    case 'Z': return "###..#.#.#..###";
    case '.': return ".............#.";
    case '-': return "......###......";
    case '+': return "....#.###.#....";
    case '(': return ".#.#..#..#...#.";
    case ')': return ".#...#..#..#.#.";
    case '=': return "...###...###...";
    case '_': return "............###";
    case ':': return "....#.....#....";
    default: return "...............";
  }
}

struct Canvas {
  int w, h;
  Tensor img;
  Canvas(int w_, int h_) : w(w_), h(h_), img({3, h_, w_}, 1.0) {}

  void set(int x, int y, const Rgb& c) {
    if (x < 0 || y < 0 || x >= w || y >= h) return;
    for (int k = 0; k < 3; ++k) img[(static_cast<std::int64_t>(k) * h + y) * w + x] = c[k];
  }
  void rect(int x0, int y0, int x1, int y1, const Rgb& c) {
    if (x0 > x1) std::swap(x0, x1);
    if (y0 > y1) std::swap(y0, y1);
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) set(x, y, c);
  }
  void line(int x0, int y0, int x1, int y1, const Rgb& c, int thick = 1) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    for (;;) {
      rect(x0 - thick / 2, y0 - thick / 2, x0 + (thick - 1) / 2, y0 + (thick - 1) / 2, c);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) { err += dy; x0 += sx; }
      if (e2 <= dx) { err += dx; y0 += sy; }
    }
  }
  // Returns the width drawn.
  int text(int x, int y, const std::string& s, const Rgb& c, int scale = 2) {
    int cx = x;
    for (char ch : s) {
      const char* g = glyph(static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
      for (int r = 0; r < 5; ++r)
        for (int q = 0; q < 3; ++q)
          if (g[r * 3 + q] == '#') rect(cx + q * scale, y + r * scale, cx + (q + 1) * scale - 1, y + (r + 1) * scale - 1, c);
      cx += 4 * scale;
    }
    return cx - x;
  }
};

int text_width(const std::string& s, int scale = 2) { return static_cast<int>(s.size()) * 4 * scale; }

bool parse_value(const std::string& s, double& v) {
  if (s.empty()) return false;
  char* end = nullptr;
  v = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::vector<std::string> split_line(const std::string& line, bool csv) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false, any = false;
  for (char ch : line) {
    if (ch == '"') {
      quoted = !quoted;
      any = true;
    } else if (!quoted && (csv ? ch == ',' : (ch == ' ' || ch == '\t'))) {
      if (csv || any || !cur.empty()) out.push_back(cur);
      cur.clear();
      any = false;
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  if (quoted) throw std::invalid_argument("table: unterminated quote");
  if (csv || any || !cur.empty()) out.push_back(cur);
  return out;
}

struct Range {
  double lo = INFINITY, hi = -INFINITY;
  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void finish(bool pad) {
    if (!(lo <= hi)) lo = 0, hi = 1;
    if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
    if (pad) {
      const double m = 0.05 * (hi - lo);
      lo -= m;
      hi += m;
    }
  }
};

struct Frame {
  int x0, y0, x1, y1;  // plot area, y0 top
  Range xr, yr;
  int px(double x) const { return x0 + static_cast<int>(std::lround((x - xr.lo) / (xr.hi - xr.lo) * (x1 - x0))); }
  int py(double y) const { return y1 - static_cast<int>(std::lround((y - yr.lo) / (yr.hi - yr.lo) * (y1 - y0))); }
};

void draw_axes(Canvas& c, const Frame& f, bool x_ticks) {
  for (int k = 0; k <= 4; ++k) {
    const double y = f.yr.lo + (f.yr.hi - f.yr.lo) * k / 4.0;
    const int yy = f.py(y);
    c.line(f.x0, yy, f.x1, yy, kGrey);
    const std::string lab = tick_label(y);
    c.text(f.x0 - 6 - text_width(lab), yy - 5, lab, kBlack);
  }
  if (x_ticks)
    for (int k = 0; k <= 4; ++k) {
      const double x = f.xr.lo + (f.xr.hi - f.xr.lo) * k / 4.0;
      const int xx = f.px(x);
      c.line(xx, f.y1, xx, f.y1 + 4, kBlack);
      const std::string lab = tick_label(x);
      c.text(xx - text_width(lab) / 2, f.y1 + 8, lab, kBlack);
    }
  c.line(f.x0, f.y0, f.x0, f.y1, kBlack, 2);
  c.line(f.x0, f.y1, f.x1, f.y1, kBlack, 2);
}

}  // namespace

int Table::column(const std::string& name) const {
  const auto it = std::find(columns.begin(), columns.end(), name);
  return it == columns.end() ? -1 : static_cast<int>(it - columns.begin());
}

Table parse_table(const std::string& text) {
  std::stringstream ss(text);
  std::string line;
  Table t;
  bool csv = false;
  while (std::getline(ss, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (t.columns.empty()) {
      csv = line.find(',') != std::string::npos;
      t.columns = split_line(line, csv);
      continue;
    }
    auto row = split_line(line, csv);
    if (row.size() != t.columns.size())
      throw std::invalid_argument("table: row " + std::to_string(t.rows.size() + 1) + " has " +
                                  std::to_string(row.size()) + " fields, header has " +
                                  std::to_string(t.columns.size()));
    t.rows.push_back(std::move(row));
  }
  if (t.columns.empty() || t.rows.empty()) throw std::invalid_argument("table: no data rows");
  return t;
}

Tensor plot_table(const Table& t, int width, int height) {
  if (width < 160 || height < 120) throw std::invalid_argument("plot: canvas too small");
  const std::size_t ncol = t.columns.size();
  if (ncol < 2) throw std::invalid_argument("plot: need at least two columns");
  const std::size_t n = t.rows.size();
  auto value = [&](std::size_t r, std::size_t c) {
    double v;
    return parse_value(t.rows[r][c], v) ? v : NAN;
  };
  auto numeric_col = [&](std::size_t c) {
    for (std::size_t r = 0; r < n; ++r) {
      double v;
      if (!parse_value(t.rows[r][c], v)) return false;
    }
    return true;
  };
  const int std_col = t.column("std");

  struct Series {
    std::size_t col;
    int err = -1;
  };
  std::vector<Series> series;
  for (std::size_t c = 1; c < ncol; ++c) {
    if (static_cast<int>(c) == std_col || !numeric_col(c)) continue;
    series.push_back({c, std_col == static_cast<int>(c) + 1 ? std_col : -1});
  }
  if (series.empty()) throw std::invalid_argument("plot: no numeric column to draw");

  const bool line_chart = numeric_col(0);
  if (!line_chart) series.resize(1);

  Canvas cv(width, height);
  Frame f;
  f.x0 = 70;
  f.x1 = width - 20;
  f.y0 = 20 + 16 * static_cast<int>((series.size() + 2) / 3);
  f.y1 = height - 40;
  for (const auto& s : series)
    for (std::size_t r = 0; r < n; ++r) {
      const double v = value(r, s.col);
      const double e = s.err >= 0 ? value(r, s.err) : 0.0;
      f.yr.add(v);
      if (std::isfinite(e)) {
        f.yr.add(v - e);
        f.yr.add(v + e);
      }
    }
  if (!line_chart) f.yr.add(0.0);
  f.yr.finish(true);

  // legend
  for (std::size_t k = 0; k < series.size(); ++k) {
    const int lx = f.x0 + static_cast<int>(k % 3) * ((f.x1 - f.x0) / 3);
    const int ly = 6 + 16 * static_cast<int>(k / 3);
    const Rgb& col = kPalette[k % kPalette.size()];
    cv.rect(lx, ly, lx + 10, ly + 9, col);
    cv.text(lx + 16, ly, t.columns[series[k].col], kBlack);
  }

  if (line_chart) {
    for (std::size_t r = 0; r < n; ++r) f.xr.add(value(r, 0));
    f.xr.finish(false);
    draw_axes(cv, f, true);
    for (std::size_t k = 0; k < series.size(); ++k) {
      const Rgb& col = kPalette[k % kPalette.size()];
      int px = 0, py = 0;
      bool have = false;
      for (std::size_t r = 0; r < n; ++r) {
        const double x = value(r, 0), y = value(r, series[k].col);
        if (!std::isfinite(x) || !std::isfinite(y)) {
          have = false;
          continue;
        }
        const int qx = f.px(x), qy = f.py(y);
        if (have) cv.line(px, py, qx, qy, col, 2);
        if (n <= 64) cv.rect(qx - 2, qy - 2, qx + 2, qy + 2, col);
        if (series[k].err >= 0) {
          const double e = value(r, series[k].err);
          if (std::isfinite(e)) {
            cv.line(qx, f.py(y - e), qx, f.py(y + e), col);
            cv.line(qx - 3, f.py(y - e), qx + 3, f.py(y - e), col);
            cv.line(qx - 3, f.py(y + e), qx + 3, f.py(y + e), col);
          }
        }
        px = qx;
        py = qy;
        have = true;
      }
    }
  } else {
    f.xr.lo = 0;
    f.xr.hi = static_cast<double>(n);
    draw_axes(cv, f, false);
    const Rgb& col = kPalette[0];
    const double slot = static_cast<double>(f.x1 - f.x0) / static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) {
      const int bx0 = f.x0 + static_cast<int>(slot * (static_cast<double>(r) + 0.2));
      const int bx1 = f.x0 + static_cast<int>(slot * (static_cast<double>(r) + 0.8));
      const double v = value(r, series[0].col);
      if (std::isfinite(v)) cv.rect(bx0, f.py(std::max(v, f.yr.lo)), bx1, f.py(std::max(0.0, f.yr.lo)), col);
      if (series[0].err >= 0) {
        const double e = value(r, series[0].err);
        const int cx = (bx0 + bx1) / 2;
        if (std::isfinite(e) && std::isfinite(v)) {
          cv.line(cx, f.py(v - e), cx, f.py(v + e), kBlack);
          cv.line(cx - 4, f.py(v - e), cx + 4, f.py(v - e), kBlack);
          cv.line(cx - 4, f.py(v + e), cx + 4, f.py(v + e), kBlack);
        }
      }
      std::string lab = t.rows[r][0];
      const auto max_chars = static_cast<std::size_t>(std::max(1.0, slot / 8.0));
      if (lab.size() > max_chars) lab.resize(max_chars);
      const int cx = (bx0 + bx1) / 2;
      cv.text(cx - text_width(lab) / 2, f.y1 + 8, lab, kBlack);
    }
  }
  return std::move(cv.img);
}

}  // namespace avatar
