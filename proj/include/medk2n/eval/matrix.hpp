#pragma once

#include <algorithm>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "medk2n/eval/metrics.hpp"
#include "medk2n/model.hpp"

namespace medk2n::eval {

struct ConfigurationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MetricRecord {
  std::string case_id;
  std::string mask;
  int target = -1;
  double psnr = 0, ssim = 0;
};

struct MatrixSummary {
  std::string mask;
  int target = -1;
  double mean_psnr = 0, mean_ssim = 0;
  int n = 0;
};

struct MatrixResult {
  std::vector<MetricRecord> rows;
  std::vector<MatrixSummary> summaries;
};

// Runs every (mask, target) combination over the dataset; a combination is
// skipped when the target is already available under the mask. Rows are
// ordered by generation difficulty: ascending source count K, then schema
// order of the mask code, then target, then case id.
template <class T>
MatrixResult run_matrix(const Model<T>& model, const std::vector<data::PairedSample>& dataset,
                        const std::vector<std::string>& masks,
                        const std::vector<int>& targets) {
  const auto& cfg = model.config();
  if (dataset.empty()) throw ConfigurationError("run_matrix: empty dataset");
  std::vector<bool> present(cfg.schema.size(), false);
  for (const auto& s : dataset)
    for (const auto& [mod, img] : s.slices) present[static_cast<std::size_t>(mod)] = true;

  std::vector<data::AvailabilityMask> parsed;
  for (const auto& code : masks) {
    auto m = data::parse_mask(code, cfg.schema);
    for (std::size_t i = 0; i < m.bits.size(); ++i)
      if (m.bits[i] && !present[i])
        throw ConfigurationError("run_matrix: mask " + code + " references modality " +
                                 cfg.schema[i].name + " absent from the dataset");
    parsed.push_back(m);
  }
  std::vector<std::size_t> order(parsed.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    int ka = parsed[a].count(), kb = parsed[b].count();
    if (ka != kb) return ka < kb;
    return parsed[a].render() < parsed[b].render();
  });

  MatrixResult out;
  for (std::size_t oi : order) {
    const auto& mask = parsed[oi];
    std::string code = mask.render();
    for (int target : targets) {
      if (target < 0 || target >= static_cast<int>(cfg.schema.size()))
        throw ConfigurationError("run_matrix: target index out of schema");
      if (mask.bits[static_cast<std::size_t>(target)]) continue;
      MatrixSummary sum;
      sum.mask = code;
      sum.target = target;
      for (const auto& s : dataset) {
        bool ok = s.slices.count(target) > 0;
        for (std::size_t i = 0; i < mask.bits.size(); ++i)
          if (mask.bits[i]) ok = ok && s.slices.count(static_cast<int>(i));
        if (!ok) continue;
        auto task = data::make_task(mask, {target});
        Tape<T> tape;
        ParamCtx<T> ctx(tape, const_cast<ParamStore<T>&>(model.params()), cfg.init_seed);
        auto fwd = model.forward(ctx, s, task, /*train=*/false);
        int win = fwd.targets[0].set.winner_index;
        const auto& gen = fwd.targets[0].set.candidates[static_cast<std::size_t>(win)];
        MetricRecord rec;
        rec.case_id = s.case_id;
        rec.mask = code;
        rec.target = target;
        rec.psnr = psnr(gen, s.slices.at(target));
        rec.ssim = ssim(gen, s.slices.at(target));
        sum.mean_psnr += rec.psnr;
        sum.mean_ssim += rec.ssim;
        ++sum.n;
        out.rows.push_back(std::move(rec));
      }
      if (sum.n > 0) {
        sum.mean_psnr /= sum.n;
        sum.mean_ssim /= sum.n;
        out.summaries.push_back(sum);
      }
    }
  }
  return out;
}

inline std::string matrix_csv(const MatrixResult& res) {
  std::ostringstream os;
  os << "case_id,mask,target,psnr,ssim\n";
  os << std::setprecision(10);
  for (const auto& r : res.rows)
    os << r.case_id << "," << r.mask << "," << r.target << "," << r.psnr << "," << r.ssim
       << "\n";
  return os.str();
}

// Wilcoxon p-values between two variants' runs, paired on (case, mask,
// target), grouped per (mask, target) plus a pooled row under key "all".
inline std::map<std::string, double> wilcoxon_between(const MatrixResult& a,
                                                      const MatrixResult& b) {
  std::map<std::string, double> index_b;
  for (const auto& r : b.rows)
    index_b[r.case_id + "|" + r.mask + "|" + std::to_string(r.target)] = r.psnr;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> groups;
  std::vector<double> all_a, all_b;
  for (const auto& r : a.rows) {
    auto it = index_b.find(r.case_id + "|" + r.mask + "|" + std::to_string(r.target));
    if (it == index_b.end()) continue;
    auto& g = groups[r.mask + "|" + std::to_string(r.target)];
    g.first.push_back(r.psnr);
    g.second.push_back(it->second);
    all_a.push_back(r.psnr);
    all_b.push_back(it->second);
  }
  std::map<std::string, double> out;
  for (auto& [key, g] : groups)
    if (g.first.size() >= 5) out[key] = wilcoxon_signed_rank(g.first, g.second);
  if (all_a.size() >= 5) out["all"] = wilcoxon_signed_rank(all_a, all_b);
  return out;
}

template <class SchemaT>
std::string matrix_table(const MatrixResult& res, const SchemaT& schema) {
  std::ostringstream os;
  os << std::left << std::setw(10) << "mask" << std::setw(10) << "target" << std::right
     << std::setw(10) << "psnr" << std::setw(10) << "ssim" << std::setw(8) << "n" << "\n";
  os << std::string(48, '-') << "\n";
  os << std::fixed << std::setprecision(3);
  for (const auto& s : res.summaries)
    os << std::left << std::setw(10) << s.mask << std::setw(10)
       << schema[static_cast<std::size_t>(s.target)].name << std::right << std::setw(10)
       << s.mean_psnr << std::setw(10) << s.mean_ssim << std::setw(8) << s.n << "\n";
  return os.str();
}

inline nlohmann::json summary_json(const MatrixResult& res) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& s : res.summaries)
    j.push_back({{"mask", s.mask},
                 {"target", s.target},
                 {"mean_psnr", s.mean_psnr},
                 {"mean_ssim", s.mean_ssim},
                 {"n", s.n}});
  return j;
}

}  // namespace medk2n::eval
