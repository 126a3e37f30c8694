#pragma once

#include <cmath>

namespace avatar::testing {

// Direct per-window evaluation with a 2-D kernel, no separable filtering.
inline double reference_ssim_plane(const double* a, const double* b, int H, int W) {
  const int r = 5;
  double w[11][11], z = 0.0;
  for (int i = -r; i <= r; ++i)
    for (int j = -r; j <= r; ++j) z += w[i + r][j + r] = std::exp(-(i * i + j * j) / (2 * 1.5 * 1.5));
  double total = 0.0;
  int count = 0;
  for (int y = r; y < H - r; ++y)
    for (int x = r; x < W - r; ++x) {
      double ma = 0, mb = 0;
      for (int i = -r; i <= r; ++i)
        for (int j = -r; j <= r; ++j) {
          const double k = w[i + r][j + r] / z;
          ma += k * a[(y + i) * W + x + j];
          mb += k * b[(y + i) * W + x + j];
        }
      double va = 0, vb = 0, cv = 0;
      for (int i = -r; i <= r; ++i)
        for (int j = -r; j <= r; ++j) {
          const double k = w[i + r][j + r] / z;
          const double da = a[(y + i) * W + x + j] - ma, db = b[(y + i) * W + x + j] - mb;
          va += k * da * da;
          vb += k * db * db;
          cv += k * da * db;
        }
      const double c1 = 1e-4, c2 = 9e-4;
      total += (2 * ma * mb + c1) * (2 * cv + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  return total / count;
}

}  // namespace avatar::testing
