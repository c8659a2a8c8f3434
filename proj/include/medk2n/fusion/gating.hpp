#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>

#include "medk2n/core/param_ctx.hpp"

namespace medk2n::fusion {

// Sizes of the gating stack. K_mem memory slots per target task,
// compat_dim-dimensional compatibility codes, gate_dim gate features.
struct FusionConfig {
  int embed_dim = 64;
  int k_mem = 8;
  int compat_dim = 8;
  int gate_dim = 16;
};

// EMA of per-(source, target) quality feedback, decay 0.9. Initialized to
// the neutral value 0.5. Mutated only between training batches.
class PerformanceHistory {
 public:
  double get(int source, int target) const {
    auto it = p_.find({source, target});
    return it == p_.end() ? 0.5 : it->second;
  }
  void update(int source, int target, double q_current) {
    p_[{source, target}] = update_history(get(source, target), q_current);
  }
  static double update_history(double p, double q_current) {
    return 0.9 * p + 0.1 * q_current;
  }
  std::map<std::pair<int, int>, double>& raw() { return p_; }

 private:
  std::map<std::pair<int, int>, double> p_;
};

// Attention retrieval over the task memory matrix M (D x K_mem):
//   m = sum_k softmax(q . M[:,k] / sqrt(D)) M[:,k]
template <class T>
typename Tape<T>::Var retrieve_memory(Tape<T>& tape, typename Tape<T>::Var q,
                                      typename Tape<T>::Var memory) {
  int d = tape.val(memory).dim(0);
  auto logits = tape.scale(tape.matvec_t(memory, q), T(1) / std::sqrt(static_cast<T>(d)));
  return tape.matvec(memory, tape.softmax_vec(logits));
}

// q_j = TaskEncoder(pooled baseline features, task embedding, context).
template <class T>
typename Tape<T>::Var task_query(ParamCtx<T>& ctx, typename Tape<T>::Var pooled_base,
                                 typename Tape<T>::Var e_task,
                                 typename Tape<T>::Var q_context, const FusionConfig& cfg) {
  int d = cfg.embed_dim;
  auto in = ctx.tape.concat({pooled_base, e_task, q_context});
  auto w = ctx.get("fus.taskq.w", {d, 3 * d}, 3 * d);
  auto b = ctx.get_zero("fus.taskq.b", {d});
  return ctx.tape.tanh_(ctx.tape.linear(w, b, in));
}

// Task-aware feature vector over baseline, auxiliary and previous-output
// pooled features (the previous-output vector is zeros for the first target).
template <class T>
typename Tape<T>::Var task_aware_features(ParamCtx<T>& ctx, typename Tape<T>::Var pooled_base,
                                          typename Tape<T>::Var pooled_aux,
                                          typename Tape<T>::Var prev_vec,
                                          typename Tape<T>::Var e_task,
                                          const FusionConfig& cfg) {
  int d = cfg.embed_dim;
  auto in = ctx.tape.concat({pooled_base, pooled_aux, prev_vec, e_task});
  auto w = ctx.get("fus.taskaware.w", {d, 4 * d}, 4 * d);
  auto b = ctx.get_zero("fus.taskaware.b", {d});
  return ctx.tape.tanh_(ctx.tape.linear(w, b, in));
}

// w_global = sigmoid(MLP([x_task_aware, m_retrieved])), strictly in (0,1).
template <class T>
typename Tape<T>::Var pre_weight(ParamCtx<T>& ctx, typename Tape<T>::Var x_task_aware,
                                 typename Tape<T>::Var m_retrieved, const FusionConfig& cfg) {
  int d = cfg.embed_dim;
  auto in = ctx.tape.concat({x_task_aware, m_retrieved});
  auto w1 = ctx.get("fus.prew.w1", {d, 2 * d}, 2 * d);
  auto b1 = ctx.get_zero("fus.prew.b1", {d});
  auto h = ctx.tape.tanh_(ctx.tape.linear(w1, b1, in));
  auto w2 = ctx.get("fus.prew.w2", {1, d}, d);
  auto b2 = ctx.get_zero("fus.prew.b2", {1});
  return ctx.tape.sigmoid(ctx.tape.linear(w2, b2, h));
}

// C_ij: bilinear score e_modal^T W e_task passed through a small MLP.
template <class T>
typename Tape<T>::Var compat_code(ParamCtx<T>& ctx, typename Tape<T>::Var e_modal,
                                  typename Tape<T>::Var e_task, const FusionConfig& cfg) {
  int d = cfg.embed_dim, dc = cfg.compat_dim;
  auto bw = ctx.get("fus.compat.bilinear", {d, d}, d);
  auto score = ctx.tape.dot(e_modal, ctx.tape.matvec(bw, e_task));
  auto w1 = ctx.get("fus.compat.w1", {dc, 1}, 1);
  auto b1 = ctx.get_zero("fus.compat.b1", {dc});
  auto h = ctx.tape.tanh_(ctx.tape.linear(w1, b1, score));
  auto w2 = ctx.get("fus.compat.w2", {dc, dc}, dc);
  auto b2 = ctx.get_zero("fus.compat.b2", {dc});
  return ctx.tape.tanh_(ctx.tape.linear(w2, b2, h));
}

inline constexpr double kTauMin = 0.05;
inline constexpr double kTauMax = 0.9;

template <class T>
struct ThresholdOut {
  typename Tape<T>::Var tau;     // scalar in (0.05, 0.9)
  typename Tape<T>::Var x_gate;  // gate feature vector
};

// x_gate = GateController([w_global, m_retrieved, C_ij, p_ij]);
// tau = tau_min + (tau_max - tau_min) * sigmoid(MLP(x_gate)).
template <class T>
ThresholdOut<T> adaptive_threshold(ParamCtx<T>& ctx, typename Tape<T>::Var w_global,
                                   typename Tape<T>::Var m_retrieved,
                                   typename Tape<T>::Var compat, typename Tape<T>::Var p_hist,
                                   const FusionConfig& cfg) {
  auto& tape = ctx.tape;
  int d = cfg.embed_dim, dc = cfg.compat_dim, g = cfg.gate_dim;
  auto in = tape.concat({w_global, m_retrieved, compat, p_hist});
  auto wg = ctx.get("fus.gate.w", {g, d + dc + 2}, d + dc + 2);
  auto bg = ctx.get_zero("fus.gate.b", {g});
  auto x_gate = tape.tanh_(tape.linear(wg, bg, in));
  auto w1 = ctx.get("fus.thr.w1", {g, g}, g);
  auto b1 = ctx.get_zero("fus.thr.b1", {g});
  auto h = tape.tanh_(tape.linear(w1, b1, x_gate));
  auto w2 = ctx.get("fus.thr.w2", {1, g}, g);
  auto b2 = ctx.get_zero("fus.thr.b2", {1});
  auto s = tape.sigmoid(tape.linear(w2, b2, h));
  auto tau = tape.add_const(tape.scale(s, T(kTauMax - kTauMin)), T(kTauMin));
  return {tau, x_gate};
}

inline constexpr double kEffEps = 0.001;

// Per-pixel effective weight map over the finest feature scale:
// f_fused = Proj([w_global, tau, m_retrieved, x_gate, c_task, c_modal]);
// logits  = MLP(f_fused) broadcast over positions + 1x1-conv spatial head
//           on the auxiliary features;
// w_eff   = clamp(sigmoid(logits), eps, 1-eps).
// tau enters as a soft input feature; no hard indicator is ever applied.
template <class T>
typename Tape<T>::Var effective_weight(ParamCtx<T>& ctx, typename Tape<T>::Var w_global,
                                       typename Tape<T>::Var tau,
                                       typename Tape<T>::Var m_retrieved,
                                       typename Tape<T>::Var x_gate,
                                       typename Tape<T>::Var c_task,
                                       typename Tape<T>::Var c_modal,
                                       typename Tape<T>::Var aux_features,
                                       const FusionConfig& cfg) {
  auto& tape = ctx.tape;
  int d = cfg.embed_dim, g = cfg.gate_dim;
  int in_dim = 2 + d + g + 2 * d;
  auto in = tape.concat({w_global, tau, m_retrieved, x_gate, c_task, c_modal});
  auto wp = ctx.get("fus.proj.w", {d, in_dim}, in_dim);
  auto bp = ctx.get_zero("fus.proj.b", {d});
  auto f_fused = tape.tanh_(tape.linear(wp, bp, in));
  auto w1 = ctx.get("fus.eff.w1", {d, d}, d);
  auto b1 = ctx.get_zero("fus.eff.b1", {d});
  auto h = tape.tanh_(tape.linear(w1, b1, f_fused));
  auto w2 = ctx.get("fus.eff.w2", {1, d}, d);
  auto b2 = ctx.get_zero("fus.eff.b2", {1});
  auto base_logit = tape.linear(w2, b2, h);  // scalar, broadcast below
  int ch = tape.val(aux_features).dim(0);
  auto sw = ctx.get("fus.eff.spatial.w", {1, ch, 1, 1}, ch);
  auto sb = ctx.get_zero("fus.eff.spatial.b", {1});
  auto spatial = tape.conv2d(aux_features, sw, sb, 1, 0);
  auto logits = tape.broadcast_add_scalar(spatial, base_logit);
  return tape.clamp(tape.sigmoid(logits), T(kEffEps), T(1.0 - kEffEps));
}

// Diagnostic record for one (source, target) pair.
struct FusionDecision {
  int source = -1, target = -1;
  double w_global = 0, tau = 0, w_eff_mean = 0, p_history = 0;
};

}  // namespace medk2n::fusion
