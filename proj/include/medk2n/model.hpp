#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "medk2n/cmim/cmim.hpp"
#include "medk2n/core/param_ctx.hpp"
#include "medk2n/data/types.hpp"
#include "medk2n/encoder/multiscale.hpp"
#include "medk2n/eval/metrics.hpp"
#include "medk2n/fusion/gating.hpp"
#include "medk2n/head/taskhead.hpp"
#include "medk2n/train/loss.hpp"

namespace medk2n {

// Module switches mirroring the ablation chain B0..B5. A disabled module is
// replaced by its documented fallback: average fusion without PreWeightNet,
// constant tau=0.475 without ThresholdNet, w_eff=w_global without
// EffiWeightNet, lambda3=lambda4=0 without CMIM, uniform pattern sampling
// without the curriculum.
struct AblationConfig {
  bool preweight = true;
  bool threshold = true;
  bool effiweight = true;
  bool cmim = true;
  bool curriculum = true;

  static AblationConfig stage(const std::string& name) {
    AblationConfig c{false, false, false, false, false};
    if (name == "B0") return c;
    c.preweight = true;
    if (name == "B1") return c;
    c.threshold = true;
    if (name == "B2") return c;
    c.effiweight = true;
    if (name == "B3") return c;
    c.cmim = true;
    if (name == "B4") return c;
    c.curriculum = true;
    if (name == "B5") return c;
    throw data::ContractError("unknown ablation stage: " + name);
  }

  std::string tag() const {
    std::string s;
    s += preweight ? 'P' : '-';
    s += threshold ? 'T' : '-';
    s += effiweight ? 'E' : '-';
    s += cmim ? 'C' : '-';
    s += curriculum ? 'U' : '-';
    return s;
  }
};

inline constexpr double kFallbackTau = 0.475;  // midpoint of (0.05, 0.9)

struct ModelConfig {
  int image_size = 64;
  int embed_dim = 32;
  int k_mem = 8;
  int k_head = 3;
  int decode_dim = 16;
  int cmim_dim = 32;
  int text_dim = 16;
  double temperature = 0.07;
  double margin = 0.2;
  std::uint64_t init_seed = 42;
  data::Schema schema = data::default_schema();
  AblationConfig ablation;
  train::LossWeights lambda;

  fusion::FusionConfig fusion_cfg() const { return {embed_dim, k_mem, 8, 16}; }
  head::TaskHeadConfig head_cfg() const { return {embed_dim, decode_dim, k_head}; }
  cmim::CmimConfig cmim_cfg() const { return {cmim_dim, text_dim, temperature, margin}; }
  enc::EncoderConfig enc_cfg(bool bidirectional = true) const {
    return {embed_dim, bidirectional};
  }

  // Canonical identity of the architecture; gates checkpoint loading.
  std::uint64_t config_hash() const {
    std::ostringstream os;
    os << "mk2n/v1 size=" << image_size << " d=" << embed_dim << " kmem=" << k_mem
       << " khead=" << k_head << " dd=" << decode_dim << " cd=" << cmim_dim
       << " td=" << text_dim << " abl=" << ablation.tag() << " schema=";
    for (const auto& m : schema) os << m.name << ",";
    return hash_str(os.str());
  }
};

template <class T>
class Model {
 public:
  using Var = typename Tape<T>::Var;

  explicit Model(ModelConfig cfg)
      : cfg_(std::move(cfg)), vocab_(cfg_.schema) {
    register_all();
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  fusion::PerformanceHistory& history() { return history_; }
  const cmim::Vocabulary& vocab() const { return vocab_; }

  struct TargetOutput {
    int target = -1;
    head::CandidateSet set;
    Var winner_var;                    // selected candidate on the tape
    Var f_shared;
    std::vector<fusion::FusionDecision> decisions;
    Var loss;                          // per-target training loss (L1/SSIM/aux)
    double q_winner = 0;
    double q_previous = 0;
  };

  struct SampleOutput {
    std::vector<TargetOutput> targets;
    std::vector<Var> v_gen, t_txt;     // aligned rows for the contrastive loss
    Var metric_sum;                    // unweighted triplet sum over targets
    bool has_metric = false;
    std::vector<std::tuple<int, int, double>> history_updates;  // (src, tgt, Q)
  };

  // Full progressive pass for one sample and task. In train mode every
  // target must have a ground-truth slice; quality scores come from SSIM.
  // In infer mode the learned quality head plus modality prior scores
  // candidates. `rng` drives only the CMIM negative sampling (train mode).
  // Targets are generated in ascending order unless `target_order` supplies
  // a permutation; training shuffles it so every head sees both chain-initial
  // and chain-later contexts.
  SampleOutput forward(ParamCtx<T>& ctx, const data::PairedSample& sample,
                       const data::K2NTask& task, bool train,
                       std::mt19937_64* rng = nullptr,
                       const std::vector<int>* target_order = nullptr) const {
    auto& tape = ctx.tape;
    if (task.inputs.empty()) throw data::ContractError("forward: task has no inputs");
    for (int i : task.inputs)
      if (!sample.slices.count(i))
        throw data::ContractError("forward: input slice missing for modality index " +
                                  std::to_string(i));
    if (train)
      for (int j : task.targets)
        if (!sample.slices.count(j))
          throw data::ContractError("forward: train mode requires ground truth for target " +
                                    std::to_string(j));

    auto fus_cfg = cfg_.fusion_cfg();
    auto h_cfg = cfg_.head_cfg();
    auto c_cfg = cfg_.cmim_cfg();
    int d = cfg_.embed_dim;

    std::map<int, enc::FeatureMapVars<T>> feats;
    for (int i : task.inputs)
      feats[i] = enc::encode(ctx, enc::image_var<T>(tape, sample.slices.at(i)),
                             cfg_.enc_cfg());

    const auto& f_base = feats.at(task.key_frame);
    auto pooled_base = tape.gap(f_base.finest());
    auto q_context = ctx.get_zero("fus.q_context", {d});

    std::vector<int> aux_sources;
    for (int i : task.inputs)
      if (i != task.key_frame) aux_sources.push_back(i);

    SampleOutput out;
    Var prev_vec = tape.constant(Tensor<T>({d}));
    bool use_cmim = train && cfg_.ablation.cmim &&
                    (cfg_.lambda.causal > 0 || cfg_.lambda.metric > 0);
    std::vector<Var> metric_terms;

    std::vector<int> order(task.targets.begin(), task.targets.end());
    if (target_order) {
      if (std::set<int>(target_order->begin(), target_order->end()) != task.targets)
        throw data::ContractError("forward: target_order must permute the task targets");
      order = *target_order;
    }
    for (int j : order) {
      TargetOutput to;
      to.target = j;
      auto e_task = fus_cfg.k_mem > 0 && cfg_.ablation.preweight
                        ? ctx.get("fus.e_task." + std::to_string(j), {d}, d)
                        : Var{};
      auto c_task = ctx.get("fus.c_task." + std::to_string(j), {d}, d);

      std::vector<std::pair<Var, Var>> weighted_aux;
      double p_mean_acc = 0;
      for (int i : aux_sources) {
        fusion::FusionDecision dec;
        dec.source = i;
        dec.target = j;
        dec.p_history = history_.get(i, j);
        p_mean_acc += dec.p_history;
        Var w_eff;
        auto aux_finest = feats.at(i).finest();
        if (!cfg_.ablation.preweight) {
          // baseline fusion: plain average over auxiliary sources
          T w = T(1) / T(aux_sources.size());
          Tensor<T> m({1, tape.val(aux_finest).dim(1), tape.val(aux_finest).dim(2)});
          m.fill(w);
          w_eff = tape.constant(std::move(m));
          dec.w_global = static_cast<double>(w);
          dec.tau = kFallbackTau;
        } else {
          auto memory = ctx.get("fus.mem.M." + std::to_string(j), {d, fus_cfg.k_mem}, d);
          auto e_modal = ctx.get("fus.e_modal." + std::to_string(i), {d}, d);
          auto c_modal = ctx.get("fus.c_modal." + std::to_string(i), {d}, d);
          auto q = fusion::task_query(ctx, pooled_base, e_task, q_context, fus_cfg);
          auto m_ret = fusion::retrieve_memory(tape, q, memory);
          auto pooled_aux = tape.gap(aux_finest);
          auto x_aware =
              fusion::task_aware_features(ctx, pooled_base, pooled_aux, prev_vec, e_task,
                                          fus_cfg);
          auto w_global = fusion::pre_weight(ctx, x_aware, m_ret, fus_cfg);
          dec.w_global = static_cast<double>(tape.val(w_global).x[0]);
          Var tau, x_gate;
          if (cfg_.ablation.threshold) {
            auto compat = fusion::compat_code(ctx, e_modal, e_task, fus_cfg);
            auto p_hist = tape.constant_scalar(T(dec.p_history));
            auto th = fusion::adaptive_threshold(ctx, w_global, m_ret, compat, p_hist,
                                                 fus_cfg);
            tau = th.tau;
            x_gate = th.x_gate;
          } else {
            tau = tape.constant(Tensor<T>({1}, {T(kFallbackTau)}));
            x_gate = tape.constant(Tensor<T>({fus_cfg.gate_dim}));
          }
          dec.tau = static_cast<double>(tape.val(tau).x[0]);
          if (cfg_.ablation.effiweight) {
            w_eff = fusion::effective_weight(ctx, w_global, tau, m_ret, x_gate, c_task,
                                             c_modal, aux_finest, fus_cfg);
          } else {
            Tensor<T> ones({1, tape.val(aux_finest).dim(1), tape.val(aux_finest).dim(2)});
            ones.fill(T(1));
            w_eff = tape.scale_by(tape.constant(std::move(ones)), w_global);
          }
        }
        const auto& wv = tape.val(w_eff);
        double s = 0;
        for (T v : wv.x) s += static_cast<double>(v);
        dec.w_eff_mean = s / static_cast<double>(wv.numel());
        weighted_aux.emplace_back(w_eff, aux_finest);
        to.decisions.push_back(dec);
      }
      to.q_previous = aux_sources.empty() ? 0.5
                                          : p_mean_acc / static_cast<double>(aux_sources.size());

      to.f_shared = head::shared_encode(ctx, f_base, weighted_aux, c_task, h_cfg);
      auto cands = head::generate_candidates(ctx, to.f_shared, j, h_cfg);

      for (auto cv : cands) to.set.candidates.push_back(extract_image(tape.val(cv)));
      if (train) {
        const auto& gt = sample.slices.at(j);
        for (const auto& img : to.set.candidates)
          to.set.scores.push_back(head::score_quality_train(img, gt));
      } else {
        const auto& spec = modality_spec(j);
        for (std::size_t k = 0; k < cands.size(); ++k) {
          auto qv = head::quality_head(ctx, tape.constant(image_tensor(to.set.candidates[k])));
          to.set.scores.push_back(head::apply_modality_prior(
              static_cast<double>(tape.val(qv).x[0]), to.set.candidates[k], spec));
        }
      }
      auto [winner, dq] = head::select_and_feedback(to.set, to.q_previous);
      to.winner_var = cands[static_cast<std::size_t>(winner)];
      to.q_winner = to.set.scores[static_cast<std::size_t>(winner)];
      for (int i : aux_sources) out.history_updates.emplace_back(i, j, to.q_winner);

      if (train) {
        auto gt_var = tape.constant(image_tensor(sample.slices.at(j)));
        auto loss = tape.constant_scalar(T(0));
        for (std::size_t k = 0; k < cands.size(); ++k) {
          // deep supervision: full loss for the winner, cheap L1-only
          // supervision at 0.1 keeps the losing heads alive
          if (static_cast<int>(k) == winner) {
            loss = tape.add(loss,
                            train::total_loss(tape, cands[k], gt_var, Var{}, Var{},
                                              {cfg_.lambda.l1, cfg_.lambda.ssim, 0, 0}));
          } else {
            loss = tape.add(loss, tape.scale(train::l1_loss(tape, cands[k], gt_var), T(0.1)));
          }
          // quality-head regression against the SSIM-based score; candidates
          // enter as constants so the head cannot steer the generator
          auto qhat = head::quality_head(ctx, tape.constant(image_tensor(to.set.candidates[k])));
          auto qerr = tape.square(tape.add_const(qhat, -T(to.set.scores[k])));
          loss = tape.add(loss, tape.scale(tape.sum(qerr), T(0.1)));
        }
        if (cfg_.ablation.effiweight && !weighted_aux.empty()) {
          // local error maps as the spatial-head regression target
          auto target_map = error_target_map(to.set.candidates[static_cast<std::size_t>(winner)],
                                             sample.slices.at(j));
          auto tm = tape.constant(target_map);
          for (auto& [w_eff, feats_i] : weighted_aux) {
            auto diff = tape.sub(w_eff, tm);
            loss = tape.add(loss, tape.scale(tape.mean(tape.mul(diff, diff)), T(0.05)));
          }
        }
        to.loss = loss;
      }

      if (use_cmim) {
        auto v_gen = cmim::embed_image(ctx, to.winner_var, c_cfg);
        auto t_txt = cmim::embed_text(ctx, vocab_,
                                      vocab_.encode(cfg_.schema[static_cast<std::size_t>(j)]
                                                        .description_text),
                                      c_cfg);
        out.v_gen.push_back(v_gen);
        out.t_txt.push_back(t_txt);
        // triplet: anchor = generated, positive = true slice of the target
        // modality, negative = a uniformly random other available modality
        std::vector<int> others;
        for (const auto& [mod, img] : sample.slices)
          if (mod != j) others.push_back(mod);
        if (!others.empty() && rng) {
          std::uniform_int_distribution<std::size_t> pick(0, others.size() - 1);
          int neg_mod = others[pick(*rng)];
          auto v_ref = cmim::embed_image(ctx, tape.constant(image_tensor(sample.slices.at(j))),
                                         c_cfg);
          auto v_neg = cmim::embed_image(
              ctx, tape.constant(image_tensor(sample.slices.at(neg_mod))), c_cfg);
          metric_terms.push_back(cmim::metric_loss<T>(tape, {v_gen}, {v_ref}, {v_neg},
                                                      c_cfg.margin));
        }
      }

      // pooled features of this generated target feed the next one
      Tensor<T> pv({d});
      auto pooled = tape.val(tape.gap(to.f_shared));
      pv.x = pooled.x;
      prev_vec = tape.constant(std::move(pv));
      out.targets.push_back(std::move(to));
    }

    if (!metric_terms.empty()) {
      auto s = metric_terms[0];
      for (std::size_t i = 1; i < metric_terms.size(); ++i) s = tape.add(s, metric_terms[i]);
      out.metric_sum = s;
      out.has_metric = true;
    }
    return out;
  }

  // Nearest text embedding over the schema for a generated image.
  int classify_modality(const data::Image2D& img) const {
    Tape<T> tape;
    ParamCtx<T> ctx(tape, const_cast<ParamStore<T>&>(params_), cfg_.init_seed);
    auto c_cfg = cfg_.cmim_cfg();
    auto v = ctx.tape.val(cmim::embed_image(ctx, tape.constant(image_tensor(img)), c_cfg));
    int best = -1;
    double best_sim = -2;
    for (const auto& m : cfg_.schema) {
      auto t = ctx.tape.val(
          cmim::embed_text(ctx, vocab_, vocab_.encode(m.description_text), c_cfg));
      double s = 0;
      for (std::size_t i = 0; i < v.numel(); ++i) s += static_cast<double>(v.x[i]) * t.x[i];
      if (s > best_sim) {
        best_sim = s;
        best = m.index;
      }
    }
    return best;
  }

  head::ModalitySpec modality_spec(int target) const {
    const auto& e = params_.at("prior.t" + std::to_string(target));
    return {static_cast<double>(e.value.x[0]), static_cast<double>(e.value.x[1])};
  }
  void set_modality_spec(int target, const head::ModalitySpec& s) {
    auto& e = params_.at("prior.t" + std::to_string(target));
    e.value.x[0] = static_cast<T>(s.mean_lo);
    e.value.x[1] = static_cast<T>(s.mean_hi);
  }

  static Tensor<T> image_tensor(const data::Image2D& img) {
    Tensor<T> t({1, img.h, img.w});
    for (std::size_t i = 0; i < img.px.size(); ++i) t.x[i] = static_cast<T>(img.px[i]);
    return t;
  }

  static data::Image2D extract_image(const Tensor<T>& t) {
    data::Image2D img(t.dim(1), t.dim(2));
    for (std::size_t i = 0; i < img.px.size(); ++i) img.px[i] = static_cast<float>(t.x[i]);
    return img;
  }

 private:
  ModelConfig cfg_;
  ParamStore<T> params_;
  fusion::PerformanceHistory history_;
  cmim::Vocabulary vocab_;

  // 1 - clamp(4*|err|,0,1) averaged into the finest-scale grid: high where
  // the winner already matches the ground truth.
  Tensor<T> error_target_map(const data::Image2D& pred, const data::Image2D& gt) const {
    int fh = pred.h / 4, fw = pred.w / 4;
    Tensor<T> t({1, fh, fw});
    for (int r = 0; r < fh; ++r)
      for (int c = 0; c < fw; ++c) {
        double acc = 0;
        for (int dr = 0; dr < 4; ++dr)
          for (int dc = 0; dc < 4; ++dc)
            acc += std::abs(static_cast<double>(pred.at(4 * r + dr, 4 * c + dc)) -
                            gt.at(4 * r + dr, 4 * c + dc));
        acc /= 16.0;
        t.at(0, r, c) = static_cast<T>(1.0 - std::min(1.0, 4.0 * acc));
      }
    return t;
  }

  // Materializes every parameter the configured architecture can touch, so
  // the checkpoint manifest does not depend on which tasks ran first.
  void register_all() {
    data::PairedSample dummy;
    dummy.case_id = "_register";
    dummy.mask.bits.assign(cfg_.schema.size(), true);
    for (const auto& m : cfg_.schema)
      dummy.slices[m.index] = data::Image2D(cfg_.image_size, cfg_.image_size);
    for (const auto& m : cfg_.schema)
      params_.get_or_create("prior.t" + std::to_string(m.index), {2}, cfg_.init_seed, 0);
    for (const auto& tgt : cfg_.schema) {
      auto& e = params_.at("prior.t" + std::to_string(tgt.index));
      e.value.x[0] = T(0);
      e.value.x[1] = T(1);
      Tape<T> tape;
      ParamCtx<T> ctx(tape, params_, cfg_.init_seed);
      auto task = data::make_task(dummy.mask, {tgt.index});
      forward(ctx, dummy, task, /*train=*/false);
    }
    // CMIM and quality-head parameters are infer/train-path dependent;
    // touch them explicitly.
    Tape<T> tape;
    ParamCtx<T> ctx(tape, params_, cfg_.init_seed);
    auto c_cfg = cfg_.cmim_cfg();
    if (cfg_.ablation.cmim) {
      cmim::embed_image(ctx, tape.constant(Tensor<T>({1, cfg_.image_size, cfg_.image_size})),
                        c_cfg);
      for (const auto& m : cfg_.schema)
        cmim::embed_text(ctx, vocab_, vocab_.encode(m.description_text), c_cfg);
    }
    head::quality_head(ctx, tape.constant(Tensor<T>({1, cfg_.image_size, cfg_.image_size})));
  }
};

}  // namespace medk2n
