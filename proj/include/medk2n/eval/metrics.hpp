#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "medk2n/data/types.hpp"

namespace medk2n::eval {

// Identical images would give infinite PSNR on the [0,1] domain; they are
// reported as a documented 99 dB sentinel instead.
inline constexpr double kPsnrCap = 99.0;

inline double mse(const data::Image2D& a, const data::Image2D& b) {
  if (a.h != b.h || a.w != b.w) throw data::ContractError("mse: shape mismatch");
  double s = 0;
  for (std::size_t i = 0; i < a.px.size(); ++i) {
    double d = static_cast<double>(a.px[i]) - b.px[i];
    s += d * d;
  }
  return s / static_cast<double>(a.px.size());
}

inline double psnr(const data::Image2D& pred, const data::Image2D& gt) {
  double m = mse(pred, gt);
  if (m <= 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

inline std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> k(static_cast<std::size_t>(size) * size);
  int half = size / 2;
  double sum = 0;
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) {
      double d2 = (r - half) * (r - half) + (c - half) * (c - half);
      k[static_cast<std::size_t>(r) * size + c] = std::exp(-d2 / (2 * sigma * sigma));
      sum += k[static_cast<std::size_t>(r) * size + c];
    }
  for (auto& v : k) v /= sum;
  return k;
}

// Wang et al. SSIM: 11x11 Gaussian window sigma=1.5, C1=0.01^2, C2=0.03^2,
// mean over all fully-covered window positions.
inline double ssim(const data::Image2D& pred, const data::Image2D& gt, int win = 11,
                   double sigma = 1.5) {
  if (pred.h != gt.h || pred.w != gt.w) throw data::ContractError("ssim: shape mismatch");
  if (pred.h < win || pred.w < win)
    throw data::ContractError("ssim: image smaller than the window");
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  auto k = gaussian_window(win, sigma);
  double total = 0;
  long count = 0;
  for (int r = 0; r + win <= pred.h; ++r)
    for (int c = 0; c + win <= pred.w; ++c) {
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (int dr = 0; dr < win; ++dr)
        for (int dc = 0; dc < win; ++dc) {
          double wgt = k[static_cast<std::size_t>(dr) * win + dc];
          double x = pred.at(r + dr, c + dc), y = gt.at(r + dr, c + dc);
          mx += wgt * x;
          my += wgt * y;
          sxx += wgt * x * x;
          syy += wgt * y * y;
          sxy += wgt * x * y;
        }
      double vx = sxx - mx * mx, vy = syy - my * my, cov = sxy - mx * my;
      double num = (2 * mx * my + c1) * (2 * cov + c2);
      double den = (mx * mx + my * my + c1) * (vx + vy + c2);
      total += num / den;
      ++count;
    }
  return total / static_cast<double>(count);
}

// Two-sided Wilcoxon signed-rank test, normal approximation with zero
// differences dropped, midranks for ties, and tie-corrected variance.
inline double wilcoxon_signed_rank(const std::vector<double>& a,
                                   const std::vector<double>& b) {
  if (a.size() != b.size()) throw data::ContractError("wilcoxon: length mismatch");
  if (a.size() < 5) throw data::ContractError("wilcoxon: need at least 5 pairs");
  std::vector<double> diffs;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    if (d != 0.0) diffs.push_back(d);
  }
  std::size_t n = diffs.size();
  if (n == 0) return 1.0;
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) {
    return std::abs(diffs[x]) < std::abs(diffs[y]);
  });
  std::vector<double> rank(n);
  double tie_correction = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(diffs[idx[j + 1]]) == std::abs(diffs[idx[i]])) ++j;
    double mid = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t t = i; t <= j; ++t) rank[idx[t]] = mid;
    double tlen = static_cast<double>(j - i + 1);
    tie_correction += tlen * tlen * tlen - tlen;
    i = j + 1;
  }
  double w_plus = 0;
  for (std::size_t t = 0; t < n; ++t)
    if (diffs[t] > 0) w_plus += rank[t];
  double nn = static_cast<double>(n);
  double mu = nn * (nn + 1) / 4.0;
  double var = nn * (nn + 1) * (2 * nn + 1) / 24.0 - tie_correction / 48.0;
  if (var <= 0) return 1.0;
  double z = (w_plus - mu) / std::sqrt(var);
  double p = std::erfc(std::abs(z) / std::sqrt(2.0));  // two-sided
  return std::min(1.0, p);
}

}  // namespace medk2n::eval
