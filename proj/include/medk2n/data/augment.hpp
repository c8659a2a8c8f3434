#pragma once

#include <cmath>
#include <random>

#include "medk2n/data/types.hpp"

namespace medk2n::data {

// One sampled augmentation decision, applied identically to every modality
// of a case so co-registration is preserved. Geometry first (flip, zoom
// crop), then intensity (jitter, blur).
struct AugmentDecision {
  bool flip = false;
  double zoom = 1.0;          // >1 zooms in, <1 zooms out (clamp-at-border)
  double center_r = 0.5, center_c = 0.5;
  double brightness = 0.0;    // additive, [-0.05, 0.05]
  double contrast = 1.0;      // multiplicative about 0.5, [0.95, 1.05]
  bool blur = false;

  // Source coordinates for output pixel (r, c) in an h×w image.
  std::pair<double, double> source_coord(double r, double c, int h, int w) const {
    double cc = flip ? (w - 1 - c) : c;
    double sr = center_r * (h - 1) + (r - 0.5 * (h - 1)) / zoom;
    double sc = center_c * (w - 1) + (cc - 0.5 * (w - 1)) / zoom;
    return {sr, sc};
  }
};

inline AugmentDecision sample_augment_decision(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  AugmentDecision d;
  d.flip = uni(rng) < 0.5;
  d.zoom = 0.8 + 0.4 * uni(rng);  // random resized crop scale in [0.8, 1.2]
  d.center_r = 0.5 + (uni(rng) - 0.5) * 0.1;
  d.center_c = 0.5 + (uni(rng) - 0.5) * 0.1;
  d.brightness = (uni(rng) - 0.5) * 0.1;  // gentle jitter: +-5%
  d.contrast = 1.0 + (uni(rng) - 0.5) * 0.1;
  d.blur = uni(rng) < 0.1;
  return d;
}

namespace detail {

inline float sample_bilinear(const Image2D& img, double r, double c) {
  r = std::min(static_cast<double>(img.h - 1), std::max(0.0, r));
  c = std::min(static_cast<double>(img.w - 1), std::max(0.0, c));
  int r0 = static_cast<int>(r), c0 = static_cast<int>(c);
  int r1 = std::min(r0 + 1, img.h - 1), c1 = std::min(c0 + 1, img.w - 1);
  double fr = r - r0, fc = c - c0;
  return static_cast<float>((1 - fr) * ((1 - fc) * img.at(r0, c0) + fc * img.at(r0, c1)) +
                            fr * ((1 - fc) * img.at(r1, c0) + fc * img.at(r1, c1)));
}

inline Image2D gaussian_blur3(const Image2D& img) {
  static const double k[3] = {0.27406862, 0.45186276, 0.27406862};  // sigma ~= 0.8
  Image2D tmp(img.h, img.w), out(img.h, img.w);
  for (int r = 0; r < img.h; ++r)
    for (int c = 0; c < img.w; ++c) {
      double s = 0;
      for (int d = -1; d <= 1; ++d) {
        int cc = std::min(img.w - 1, std::max(0, c + d));
        s += k[d + 1] * img.at(r, cc);
      }
      tmp.at(r, c) = static_cast<float>(s);
    }
  for (int r = 0; r < img.h; ++r)
    for (int c = 0; c < img.w; ++c) {
      double s = 0;
      for (int d = -1; d <= 1; ++d) {
        int rr = std::min(img.h - 1, std::max(0, r + d));
        s += k[d + 1] * tmp.at(rr, c);
      }
      out.at(r, c) = static_cast<float>(s);
    }
  return out;
}

}  // namespace detail

inline Image2D apply_augment(const Image2D& img, const AugmentDecision& d) {
  Image2D out(img.h, img.w);
  for (int r = 0; r < img.h; ++r)
    for (int c = 0; c < img.w; ++c) {
      auto [sr, sc] = d.source_coord(r, c, img.h, img.w);
      double v = detail::sample_bilinear(img, sr, sc);
      v = (v - 0.5) * d.contrast + 0.5 + d.brightness;
      out.at(r, c) = static_cast<float>(std::min(1.0, std::max(0.0, v)));
    }
  if (d.blur) out = detail::gaussian_blur3(out);
  return out;
}

inline PairedSample augment(const PairedSample& sample, std::mt19937_64& rng) {
  AugmentDecision d = sample_augment_decision(rng);
  PairedSample out;
  out.case_id = sample.case_id;
  out.mask = sample.mask;
  for (const auto& [mod, img] : sample.slices) out.slices[mod] = apply_augment(img, d);
  return out;
}

}  // namespace medk2n::data
