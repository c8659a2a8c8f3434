#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <utility>
#include <vector>

namespace medk2n::enc {

// Center-outward pixel ordering along the golden-angle spiral
// r_n = c*sqrt(n), theta_n = n * 137.50776 deg. Each sample claims its
// rounded grid cell if still unclaimed (half-cell ties round up); cells the
// spiral never claims are appended by distance-from-center, then row-major.
struct ScanOrder {
  std::vector<std::pair<int, int>> permutation;
  int h = 0, w = 0;
};

inline constexpr double kGoldenAngleDeg = 137.50776;

inline ScanOrder fermat_scan_order(int h, int w) {
  if (h < 1 || w < 1) throw std::invalid_argument("fermat_scan_order: H, W must be >= 1");
  ScanOrder out;
  out.h = h;
  out.w = w;
  out.permutation.reserve(static_cast<std::size_t>(h) * w);
  const double cr = (h - 1) / 2.0, cc = (w - 1) / 2.0;
  const double corner = std::sqrt(cr * cr + cc * cc);
  const long n_samples = 4L * h * w;
  // outermost sample reaches the grid corner
  const double c = n_samples > 1 ? corner / std::sqrt(static_cast<double>(n_samples - 1)) : 0.0;
  const double gamma = kGoldenAngleDeg * 3.14159265358979323846 / 180.0;
  std::vector<char> visited(static_cast<std::size_t>(h) * w, 0);
  for (long n = 0; n < n_samples; ++n) {
    double r = c * std::sqrt(static_cast<double>(n));
    double th = static_cast<double>(n) * gamma;
    int pr = static_cast<int>(std::floor(cr + r * std::sin(th) + 0.5));
    int pc = static_cast<int>(std::floor(cc + r * std::cos(th) + 0.5));
    if (pr < 0 || pr >= h || pc < 0 || pc >= w) continue;
    std::size_t idx = static_cast<std::size_t>(pr) * w + pc;
    if (visited[idx]) continue;
    visited[idx] = 1;
    out.permutation.emplace_back(pr, pc);
  }
  // leftover fill: distance from center, then row-major
  std::vector<std::pair<double, std::pair<int, int>>> rest;
  for (int r = 0; r < h; ++r)
    for (int cidx = 0; cidx < w; ++cidx)
      if (!visited[static_cast<std::size_t>(r) * w + cidx])
        rest.push_back({(r - cr) * (r - cr) + (cidx - cc) * (cidx - cc), {r, cidx}});
  std::stable_sort(rest.begin(), rest.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  for (auto& [d, cell] : rest) out.permutation.push_back(cell);
  return out;
}

// Orders are pure functions of the grid size; memoize per size.
inline const ScanOrder& cached_scan_order(int h, int w) {
  static std::map<std::pair<int, int>, ScanOrder> cache;
  auto key = std::make_pair(h, w);
  auto it = cache.find(key);
  if (it == cache.end()) it = cache.emplace(key, fermat_scan_order(h, w)).first;
  return it->second;
}

}  // namespace medk2n::enc
