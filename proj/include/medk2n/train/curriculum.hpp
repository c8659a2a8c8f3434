#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "medk2n/core/rng.hpp"
#include "medk2n/data/types.hpp"

namespace medk2n::train {

enum class Stage { kEasy = 0, kMedium, kHard, kExpert };

inline const char* stage_name(Stage s) {
  switch (s) {
    case Stage::kEasy: return "easy";
    case Stage::kMedium: return "medium";
    case Stage::kHard: return "hard";
    default: return "expert";
  }
}

// Four-stage epoch split; boundaries are cumulative floor(ratio * total).
struct CurriculumSchedule {
  std::array<double, 4> ratios = {0.2, 0.2, 0.3, 0.3};
  int total_epochs = 100;

  void validate() const {
    double s = ratios[0] + ratios[1] + ratios[2] + ratios[3];
    if (std::abs(s - 1.0) > 1e-6)
      throw data::ContractError("curriculum ratios must sum to 1");
    for (double r : ratios)
      if (r < 0) throw data::ContractError("curriculum ratios must be nonnegative");
    if (total_epochs < 1) throw data::ContractError("total_epochs must be >= 1");
  }

  std::array<int, 3> boundaries() const {
    int b0 = static_cast<int>(std::floor(ratios[0] * total_epochs));
    int b1 = b0 + static_cast<int>(std::floor(ratios[1] * total_epochs));
    int b2 = b1 + static_cast<int>(std::floor(ratios[2] * total_epochs));
    return {b0, b1, b2};
  }
};

inline Stage stage_of(int epoch, const CurriculumSchedule& sched) {
  sched.validate();
  if (epoch < 0 || epoch >= sched.total_epochs)
    throw data::ContractError("stage_of: epoch out of range");
  auto b = sched.boundaries();
  if (epoch < b[0]) return Stage::kEasy;
  if (epoch < b[1]) return Stage::kMedium;
  if (epoch < b[2]) return Stage::kHard;
  return Stage::kExpert;
}

namespace detail {

inline std::vector<int> pick_distinct(std::mt19937_64& rng, const std::vector<int>& pool,
                                      int count) {
  std::vector<int> p = pool;
  for (int i = 0; i < count; ++i) {
    std::uniform_int_distribution<int> d(i, static_cast<int>(p.size()) - 1);
    std::swap(p[i], p[d(rng)]);
  }
  p.resize(count);
  std::sort(p.begin(), p.end());
  return p;
}

}  // namespace detail

// Stage-constrained pattern sampler, a pure function of
// (stage, schema, epoch, batch, rank, seed):
//   easy   : 1→1, input != target
//   medium : k→1 (k >= 2), target outside the inputs
//   hard   : 1→k (k >= 2), the input modality excluded from the targets
//   expert : k→t with strictly disjoint input/target sets
inline data::K2NTask sample_pattern(Stage stage, const data::Schema& schema, int epoch,
                                    int batch, int rank, std::uint64_t seed) {
  int m = static_cast<int>(schema.size());
  if (m < 2) throw data::ContractError("sample_pattern: schema needs >= 2 modalities");
  if ((stage == Stage::kMedium || stage == Stage::kHard) && m < 3)
    throw data::ContractError("sample_pattern: schema too small for stage constraints");
  auto rng = make_engine(seed, static_cast<std::uint64_t>(epoch),
                         static_cast<std::uint64_t>(batch), static_cast<std::uint64_t>(rank));
  std::vector<int> all(m);
  for (int i = 0; i < m; ++i) all[i] = i;
  data::K2NTask t;
  auto complement = [&](const std::vector<int>& in) {
    std::vector<int> out;
    for (int i : all)
      if (std::find(in.begin(), in.end(), i) == in.end()) out.push_back(i);
    return out;
  };
  std::vector<int> inputs, targets;
  switch (stage) {
    case Stage::kEasy: {
      inputs = detail::pick_distinct(rng, all, 1);
      targets = detail::pick_distinct(rng, complement(inputs), 1);
      break;
    }
    case Stage::kMedium: {
      std::uniform_int_distribution<int> kd(2, m - 1);
      inputs = detail::pick_distinct(rng, all, kd(rng));
      targets = detail::pick_distinct(rng, complement(inputs), 1);
      break;
    }
    case Stage::kHard: {
      inputs = detail::pick_distinct(rng, all, 1);
      std::uniform_int_distribution<int> nd(2, m - 1);
      targets = detail::pick_distinct(rng, complement(inputs), nd(rng));
      break;
    }
    case Stage::kExpert: {
      std::uniform_int_distribution<int> kd(1, m - 1);
      int k = kd(rng);
      inputs = detail::pick_distinct(rng, all, k);
      std::uniform_int_distribution<int> nd(1, m - k);
      targets = detail::pick_distinct(rng, complement(inputs), nd(rng));
      break;
    }
  }
  t.inputs.insert(inputs.begin(), inputs.end());
  t.targets.insert(targets.begin(), targets.end());
  t.key_frame = *t.inputs.begin();
  return t;
}

// Fallback when the curriculum is disabled: the stage itself is drawn
// uniformly, then the pattern is sampled under that stage's constraints.
inline data::K2NTask sample_uniform_pattern(const data::Schema& schema, int epoch, int batch,
                                            int rank, std::uint64_t seed) {
  auto rng = make_engine(hash_combine(seed, 0x5eedu), static_cast<std::uint64_t>(epoch),
                         static_cast<std::uint64_t>(batch), static_cast<std::uint64_t>(rank));
  std::uniform_int_distribution<int> sd(0, 3);
  Stage st = static_cast<Stage>(sd(rng));
  if (schema.size() < 3 && st != Stage::kEasy) st = Stage::kExpert;
  return sample_pattern(st, schema, epoch, batch, rank, hash_combine(seed, 0xf00du));
}

// Cosine schedule: base_lr * 0.5 * (1 + cos(pi * step / total)).
inline double lr_at(long step, long total_steps, double base_lr) {
  if (step < 0 || step > total_steps || total_steps < 1)
    throw data::ContractError("lr_at: step out of range");
  return base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * static_cast<double>(step) /
                                         static_cast<double>(total_steps)));
}

}  // namespace medk2n::train
