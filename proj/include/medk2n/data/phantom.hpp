#pragma once

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "medk2n/core/rng.hpp"
#include "medk2n/data/types.hpp"

namespace medk2n::data {

// Procedural multimodal phantom. Every case is one shared latent anatomy
// (head ellipse, tissue field, ventricle, lesion blobs); each modality is a
// fixed intensity transform of that latent:
//
//   out_m = clamp(latent^gamma_m * (lesion ? lesion_mult_m : 1)) + noise_m
//
// with gamma_m in {0.6, 1.0, 1.6, 2.4}, lesion contrast multipliers
// {1.0, 2.0, 0.3, 2.3} (the first modality is lesion-blind, so single-input
// synthesis from it cannot recover lesions and fusing it dilutes lesion
// evidence), and per-modality noise sigma {0.005, 0.01, 0.12, 0.005} (the
// third modality is the noisy one, giving the gating networks a source worth
// downweighting). Fully deterministic per seed.
struct PhantomSpec {
  std::uint64_t seed = 0;
  int n_cases = 1;
  int image_size = 256;
  Schema schema = default_schema();
  std::pair<int, int> lesion_count_range = {2, 5};

  void validate() const {
    if (image_size < 16) throw ContractError("phantom: image_size must be >= 16");
    if (n_cases < 1) throw ContractError("phantom: n_cases must be >= 1");
    if (schema.empty()) throw SchemaError("phantom: empty schema");
    if (lesion_count_range.first < 0 || lesion_count_range.second < lesion_count_range.first)
      throw ContractError("phantom: bad lesion_count_range");
  }
};

namespace detail {

inline double modality_gamma(int m) {
  static const double g[4] = {0.6, 1.0, 1.6, 2.4};
  return g[m % 4];
}
inline double modality_lesion_mult(int m) {
  static const double g[4] = {1.0, 2.0, 0.3, 2.3};
  return g[m % 4];
}
inline double modality_noise_sigma(int m) {
  static const double g[4] = {0.005, 0.01, 0.12, 0.005};
  return g[m % 4];
}

struct Ellipse {
  double cr, cc, ra, rb, theta;
  bool contains(double r, double c) const {
    double dr = r - cr, dc = c - cc;
    double u = std::cos(theta) * dc + std::sin(theta) * dr;
    double v = -std::sin(theta) * dc + std::cos(theta) * dr;
    return (u * u) / (ra * ra) + (v * v) / (rb * rb) <= 1.0;
  }
};

}  // namespace detail

inline PairedSample generate_phantom_case(const PhantomSpec& spec, int case_idx) {
  const int S = spec.image_size;
  auto eng = make_engine(spec.seed, 0x9e37u, static_cast<std::uint64_t>(case_idx));
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  // latent anatomy
  detail::Ellipse head{S * (0.48 + 0.04 * uni(eng)), S * (0.48 + 0.04 * uni(eng)),
                       S * (0.40 + 0.04 * uni(eng)), S * (0.34 + 0.04 * uni(eng)),
                       uni(eng) * 0.4 - 0.2};
  detail::Ellipse vent{head.cr + S * (uni(eng) * 0.06 - 0.03),
                       head.cc + S * (uni(eng) * 0.06 - 0.03),
                       S * (0.05 + 0.03 * uni(eng)), S * (0.08 + 0.03 * uni(eng)),
                       uni(eng) * 3.14};
  std::uniform_int_distribution<int> lcount(spec.lesion_count_range.first,
                                            spec.lesion_count_range.second);
  int nles = lcount(eng);
  std::vector<detail::Ellipse> lesions;
  for (int i = 0; i < nles; ++i) {
    double ang = uni(eng) * 6.2831853, rad = uni(eng) * 0.22 + 0.06;
    lesions.push_back({head.cr + S * rad * std::sin(ang), head.cc + S * rad * std::cos(ang),
                       S * (0.04 + 0.07 * uni(eng)), S * (0.04 + 0.07 * uni(eng)),
                       uni(eng) * 3.14});
  }
  // smooth low-frequency tissue variation: a few random bumps
  struct Bump {
    double cr, cc, sig, amp;
  };
  std::vector<Bump> bumps;
  for (int i = 0; i < 4; ++i)
    bumps.push_back({uni(eng) * S, uni(eng) * S, S * (0.10 + 0.15 * uni(eng)),
                     uni(eng) * 0.16 - 0.08});

  std::vector<double> latent(static_cast<std::size_t>(S) * S, 0.0);
  std::vector<char> lesion_mask(latent.size(), 0);
  for (int r = 0; r < S; ++r)
    for (int c = 0; c < S; ++c) {
      std::size_t idx = static_cast<std::size_t>(r) * S + c;
      if (!head.contains(r, c)) continue;
      double v = 0.55;
      for (const auto& b : bumps) {
        double d2 = (r - b.cr) * (r - b.cr) + (c - b.cc) * (c - b.cc);
        v += b.amp * std::exp(-d2 / (2 * b.sig * b.sig));
      }
      if (vent.contains(r, c)) v = 0.18;
      for (const auto& l : lesions)
        if (l.contains(r, c)) {
          lesion_mask[idx] = 1;
          break;
        }
      latent[idx] = std::min(1.0, std::max(0.05, v));
    }

  PairedSample sample;
  sample.case_id = "case_" + std::to_string(case_idx);
  sample.mask.bits.assign(spec.schema.size(), true);
  for (std::size_t m = 0; m < spec.schema.size(); ++m) {
    auto neng = make_engine(spec.seed, 0x71aab3u, static_cast<std::uint64_t>(case_idx),
                            static_cast<std::uint64_t>(m));
    double gamma = detail::modality_gamma(static_cast<int>(m));
    double lmult = detail::modality_lesion_mult(static_cast<int>(m));
    double sigma = detail::modality_noise_sigma(static_cast<int>(m));
    Image2D img(S, S);
    for (std::size_t i = 0; i < latent.size(); ++i) {
      double v = std::pow(latent[i], gamma);
      if (lesion_mask[i]) v *= lmult;
      v += sigma * gauss(neng);
      img.px[i] = static_cast<float>(std::min(1.0, std::max(0.0, v)));
    }
    sample.slices[static_cast<int>(m)] = std::move(img);
  }
  return sample;
}

inline std::vector<PairedSample> generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  std::vector<PairedSample> out;
  out.reserve(static_cast<std::size_t>(spec.n_cases));
  for (int i = 0; i < spec.n_cases; ++i) out.push_back(generate_phantom_case(spec, i));
  return out;
}

}  // namespace medk2n::data
