#pragma once

#include <string>
#include <utility>
#include <vector>

#include "medk2n/core/param_ctx.hpp"
#include "medk2n/data/types.hpp"
#include "medk2n/encoder/multiscale.hpp"
#include "medk2n/eval/metrics.hpp"

namespace medk2n::head {

struct TaskHeadConfig {
  int embed_dim = 64;
  int decode_dim = 16;
  int k_head = 3;
};

// Per-target intensity prior used by the inference-time quality score.
struct ModalitySpec {
  double mean_lo = 0.0, mean_hi = 1.0;
};

// f_shared = SharedEnc(f_base, sum_i w_eff_i ⊙ F_i, c_task). The aux sum is
// elementwise; the base pyramid is merged into the finest scale first.
template <class T>
typename Tape<T>::Var shared_encode(
    ParamCtx<T>& ctx, const enc::FeatureMapVars<T>& f_base,
    const std::vector<std::pair<typename Tape<T>::Var, typename Tape<T>::Var>>& weighted_aux,
    typename Tape<T>::Var c_task, const TaskHeadConfig& cfg) {
  auto& tape = ctx.tape;
  int d = cfg.embed_dim;
  auto conv1 = [&](typename Tape<T>::Var x, const std::string& name) {
    auto w = ctx.get("head.shared." + name + ".w", {d, d, 1, 1}, d);
    auto b = ctx.get_zero("head.shared." + name + ".b", {d});
    return tape.conv2d(x, w, b, 1, 0);
  };
  auto merged = f_base.finest();
  merged = tape.add(merged, conv1(tape.upsample2(f_base.scales[1]), "up1"));
  merged = tape.add(merged, conv1(tape.upsample2(tape.upsample2(f_base.scales[0])), "up2"));

  // copy, not reference: growing the tape below may reallocate node storage
  const std::vector<int> fs = tape.val(merged).shape;
  typename Tape<T>::Var aux_sum = tape.constant(Tensor<T>(fs));
  for (const auto& [w_eff, feats] : weighted_aux) {
    if (tape.val(feats).shape != fs)
      throw data::ContractError("shared_encode: aux feature shape mismatch");
    aux_sum = tape.add(aux_sum, tape.broadcast_mul_map(w_eff, feats));
  }
  auto wb = ctx.get("head.shared.base.w", {d, d, 3, 3}, d * 9);
  auto bb = ctx.get_zero("head.shared.base.b", {d});
  auto wa = ctx.get("head.shared.aux.w", {d, d, 3, 3}, d * 9);
  auto ba = ctx.get_zero("head.shared.aux.b", {d});
  auto wt = ctx.get("head.shared.task.w", {d, d}, d);
  auto bt = ctx.get_zero("head.shared.task.b", {d});
  auto task_bias = tape.linear(wt, bt, c_task);
  auto pre = tape.add(tape.conv2d(merged, wb, bb, 1, 1), tape.conv2d(aux_sum, wa, ba, 1, 1));
  return tape.tanh_(tape.broadcast_add_channels(pre, task_bias));
}

// One decoder head. Heads are structurally diverse: head k convolves with
// kernel size {3,5,7}[k mod 3]. Two nearest-neighbor upsamplings take the
// finest scale (stride 4) back to image resolution; final sigmoid keeps
// outputs in [0,1].
template <class T>
typename Tape<T>::Var decode_head(ParamCtx<T>& ctx, typename Tape<T>::Var f_shared,
                                  int target, int head_idx, const TaskHeadConfig& cfg) {
  auto& tape = ctx.tape;
  int d = cfg.embed_dim, dd = cfg.decode_dim;
  std::string p = "head.t" + std::to_string(target) + ".h" + std::to_string(head_idx);
  auto wa = ctx.get(p + ".adapt.w", {dd, d, 1, 1}, d);
  auto ba = ctx.get_zero(p + ".adapt.b", {dd});
  auto a = tape.tanh_(tape.conv2d(f_shared, wa, ba, 1, 0));
  int k = std::vector<int>{3, 5, 7}[head_idx % 3];
  auto wk = ctx.get(p + ".conv.w", {dd, dd, k, k}, dd * k * k);
  auto bk = ctx.get_zero(p + ".conv.b", {dd});
  auto h = tape.tanh_(tape.conv2d(a, wk, bk, 1, k / 2));
  auto w1 = ctx.get(p + ".up1.w", {dd / 2, dd, 3, 3}, dd * 9);
  auto b1 = ctx.get_zero(p + ".up1.b", {dd / 2});
  auto u1 = tape.tanh_(tape.conv2d(tape.upsample2(h), w1, b1, 1, 1));
  auto w2 = ctx.get(p + ".up2.w", {1, dd / 2, 3, 3}, dd / 2 * 9);
  auto b2 = ctx.get_zero(p + ".up2.b", {1});
  return tape.sigmoid(tape.conv2d(tape.upsample2(u1), w2, b2, 1, 1));
}

template <class T>
std::vector<typename Tape<T>::Var> generate_candidates(ParamCtx<T>& ctx,
                                                       typename Tape<T>::Var f_shared,
                                                       int target, const TaskHeadConfig& cfg) {
  if (cfg.k_head < 1) throw data::ContractError("generate_candidates: K_head must be >= 1");
  std::vector<typename Tape<T>::Var> out;
  for (int k = 0; k < cfg.k_head; ++k)
    out.push_back(decode_head(ctx, f_shared, target, k, cfg));
  return out;
}

// Learned quality head: small conv regressor trained against the
// train-mode (SSIM-based) score. Returns a scalar var in (0,1).
template <class T>
typename Tape<T>::Var quality_head(ParamCtx<T>& ctx, typename Tape<T>::Var candidate) {
  auto& tape = ctx.tape;
  auto conv = [&](typename Tape<T>::Var x, const std::string& name, int ic, int oc) {
    auto w = ctx.get("head.quality." + name + ".w", {oc, ic, 3, 3}, ic * 9);
    auto b = ctx.get_zero("head.quality." + name + ".b", {oc});
    return tape.tanh_(tape.conv2d(x, w, b, 2, 1));
  };
  auto h1 = conv(candidate, "c0", 1, 4);
  auto h2 = conv(h1, "c1", 4, 8);
  // mean pooling alone washes out texture; the second-moment path keeps the
  // head sensitive to noise and blur levels
  auto pooled = tape.gap(h2);
  auto pooled2 = tape.gap(tape.mul(h2, h2));
  auto pooled2f = tape.gap(tape.mul(h1, h1));  // finer-scale texture energy
  auto w = ctx.get("head.quality.out.w", {1, 8}, 8);
  auto b = ctx.get_zero("head.quality.out.b", {1});
  auto w2 = ctx.get("head.quality.out2.w", {1, 8}, 8);
  auto b2 = ctx.get_zero("head.quality.out2.b", {1});
  auto w3 = ctx.get("head.quality.out3.w", {1, 4}, 4);
  auto b3 = ctx.get_zero("head.quality.out3.b", {1});
  return tape.sigmoid(tape.add(tape.add(tape.linear(w, b, pooled), tape.linear(w2, b2, pooled2)),
                               tape.linear(w3, b3, pooled2f)));
}

enum class QualityMode { kTrain, kInfer };

// Train mode: Q = (1 + SSIM(candidate, ground truth)) / 2, mapped to [0,1].
inline double score_quality_train(const data::Image2D& candidate, const data::Image2D& gt) {
  return (1.0 + eval::ssim(candidate, gt)) / 2.0;
}

// Infer mode: learned quality head plus a penalty for mean intensity
// outside the target modality's prior band.
inline double apply_modality_prior(double q_raw, const data::Image2D& candidate,
                                   const ModalitySpec& spec) {
  double mean = 0;
  for (float v : candidate.px) mean += v;
  mean /= static_cast<double>(candidate.px.size());
  double outside = 0;
  if (mean < spec.mean_lo) outside = spec.mean_lo - mean;
  if (mean > spec.mean_hi) outside = mean - spec.mean_hi;
  return std::max(0.0, std::min(1.0, q_raw - 2.0 * outside));
}

// K_head candidates with quality scores and the selected winner.
struct CandidateSet {
  std::vector<data::Image2D> candidates;
  std::vector<double> scores;
  int winner_index = -1;
  double delta_q = 0.0;
};

// Winner = argmax score, ties resolved to the lowest index.
// delta_q = Q_winner - Q_previous feeds the performance history EMA.
inline std::pair<int, double> select_and_feedback(CandidateSet& set, double q_previous) {
  if (set.candidates.empty() || set.scores.size() != set.candidates.size())
    throw data::ContractError("select_and_feedback: empty or misaligned candidate set");
  int best = 0;
  for (std::size_t k = 1; k < set.scores.size(); ++k)
    if (set.scores[k] > set.scores[best]) best = static_cast<int>(k);
  set.winner_index = best;
  set.delta_q = set.scores[best] - q_previous;
  return {best, set.delta_q};
}

}  // namespace medk2n::head
