#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "medk2n/data/augment.hpp"
#include "medk2n/model.hpp"
#include "medk2n/train/checkpoint.hpp"
#include "medk2n/train/curriculum.hpp"

namespace medk2n::train {

struct TrainConfig {
  int epochs = 30;
  int batch_size = 8;       // desk-scaled from the reference batch 48
  int accum_steps = 1;      // gradient accumulation micro-steps per update
  int samples_per_epoch = 0;  // 0: one task per dataset case per epoch
  double base_lr = 1e-4;
  bool lr_boost_large_n = false;  // opt-in +10% LR for multi-target training
  std::uint64_t seed = 42;
  bool augment = true;
  CurriculumSchedule schedule;  // total_epochs must equal `epochs`
  std::filesystem::path out_dir;  // empty: no logs or checkpoints

  void validate() const {
    if (epochs < 1) throw data::ContractError("train: epochs must be >= 1");
    if (batch_size < 1) throw data::ContractError("train: batch_size must be >= 1");
    if (accum_steps < 1) throw data::ContractError("train: accum_steps must be >= 1");
    if (base_lr <= 0) throw data::ContractError("train: base_lr must be positive");
    schedule.validate();
    if (schedule.total_epochs != epochs)
      throw data::ContractError("train: schedule total_epochs must match epochs");
  }
};

struct EpochStats {
  int epoch = 0;
  Stage stage = Stage::kEasy;
  double mean_loss = 0;
  double mean_tau = 0;
  double mean_w_global = 0;
  double mean_delta_q = 0;
  double lr = 0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  double first_epoch_loss = 0;
  double final_epoch_loss = 0;
};

// Curriculum-staged training loop. Each batch shares one tape so the
// contrastive loss sees cross-sample negatives; the causal term joins at
// the medium stage and the metric term at the hard stage, so early 1-to-1
// training stays purely reconstructive.
template <class T>
TrainReport train_model(Model<T>& model, const std::vector<data::PairedSample>& dataset,
                        const TrainConfig& tc) {
  tc.validate();
  if (dataset.empty()) throw data::ContractError("train: empty dataset");
  const auto& cfg = model.config();
  cfg.lambda.validate();

  std::ofstream log;
  if (!tc.out_dir.empty()) {
    std::filesystem::create_directories(tc.out_dir);
    log.open(tc.out_dir / "train_log.jsonl");
  }

  AdamOptimizer<T> opt;
  TrainReport report;
  int n_samples = tc.samples_per_epoch > 0 ? tc.samples_per_epoch
                                           : static_cast<int>(dataset.size());
  int n_batches = (n_samples + tc.batch_size - 1) / tc.batch_size;
  int n_updates = (n_batches + tc.accum_steps - 1) / tc.accum_steps;
  long total_steps = static_cast<long>(tc.epochs) * n_updates;
  long step = 0;
  double lr_scale = tc.lr_boost_large_n ? 1.1 : 1.0;
  auto boundaries = tc.schedule.boundaries();

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    Stage stage = stage_of(epoch, tc.schedule);
    bool causal_on = cfg.ablation.cmim && stage >= Stage::kMedium;
    bool metric_on = cfg.ablation.cmim && stage >= Stage::kHard;
    EpochStats es;
    es.epoch = epoch;
    es.stage = stage;
    long n_dec = 0, n_tasks = 0, n_dq = 0;

    auto case_rng = make_engine(tc.seed, 0xca5e, static_cast<std::uint64_t>(epoch));
    for (int batch = 0; batch < n_batches; ++batch) {
      Tape<T> tape;
      ParamCtx<T> ctx(tape, model.params(), cfg.init_seed);
      std::vector<typename Tape<T>::Var> losses, v_rows, t_rows, metric_sums;
      std::vector<std::tuple<int, int, double>> pending_history;
      int in_batch = std::min(tc.batch_size, n_samples - batch * tc.batch_size);
      for (int r = 0; r < in_batch; ++r) {
        auto task = cfg.ablation.curriculum
                        ? sample_pattern(stage, cfg.schema, epoch, batch, r, tc.seed)
                        : sample_uniform_pattern(cfg.schema, epoch, batch, r, tc.seed);
        // a case must carry every modality the pattern touches; phantoms
        // always do, sparse manifests get a bounded resample
        std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
        const data::PairedSample* chosen = nullptr;
        for (int attempt = 0; attempt < 64 && !chosen; ++attempt) {
          const auto& cand = dataset[pick(case_rng)];
          bool ok = true;
          for (int i : task.inputs) ok = ok && cand.slices.count(i);
          for (int j : task.targets) ok = ok && cand.slices.count(j);
          if (ok) chosen = &cand;
        }
        if (!chosen) continue;
        data::PairedSample sample = *chosen;
        auto aug_rng = make_engine(tc.seed, 0xa06, static_cast<std::uint64_t>(epoch),
                                   static_cast<std::uint64_t>(batch * tc.batch_size + r));
        if (tc.augment) sample = data::augment(sample, aug_rng);
        // randomized chain order: heads must stay calibrated for both
        // chain-initial and chain-later contexts
        std::vector<int> chain(task.targets.begin(), task.targets.end());
        auto chain_rng = make_engine(tc.seed, 0x0cde, static_cast<std::uint64_t>(epoch),
                                     static_cast<std::uint64_t>(batch * tc.batch_size + r));
        std::shuffle(chain.begin(), chain.end(), chain_rng);
        typename Model<T>::SampleOutput out;
        try {
          out = model.forward(ctx, sample, task, /*train=*/true, &aug_rng, &chain);
        } catch (const std::exception& e) {
          std::ostringstream os;
          os << e.what() << " [epoch " << epoch << " batch " << batch << " rank " << r
             << " case " << sample.case_id << " inputs";
          for (int i : task.inputs) os << " " << i;
          os << " targets";
          for (int j : task.targets) os << " " << j;
          os << "]";
          throw data::ContractError(os.str());
        }
        for (auto& to : out.targets) {
          losses.push_back(to.loss);
          ++n_tasks;
          es.mean_delta_q += to.q_winner - to.q_previous;
          ++n_dq;
          for (auto& d : to.decisions) {
            es.mean_tau += d.tau;
            es.mean_w_global += d.w_global;
            ++n_dec;
          }
        }
        if (causal_on) {
          v_rows.insert(v_rows.end(), out.v_gen.begin(), out.v_gen.end());
          t_rows.insert(t_rows.end(), out.t_txt.begin(), out.t_txt.end());
        }
        if (metric_on && out.has_metric) metric_sums.push_back(out.metric_sum);
        pending_history.insert(pending_history.end(), out.history_updates.begin(),
                               out.history_updates.end());
      }
      if (losses.empty()) continue;

      auto total = tape.constant_scalar(T(0));
      for (auto l : losses) total = tape.add(total, l);
      total = tape.scale(total, T(1) / T(losses.size()));
      if (causal_on && v_rows.size() >= 2 && cfg.lambda.causal > 0) {
        auto lc = cmim::contrastive_loss(tape, v_rows, t_rows, cfg.temperature);
        total = tape.add(total, tape.scale(lc, T(cfg.lambda.causal)));
      }
      if (metric_on && !metric_sums.empty() && cfg.lambda.metric > 0) {
        auto lm = metric_sums[0];
        for (std::size_t i = 1; i < metric_sums.size(); ++i)
          lm = tape.add(lm, metric_sums[i]);
        lm = tape.scale(lm, T(1) / T(metric_sums.size()));
        total = tape.add(total, tape.scale(lm, T(cfg.lambda.metric)));
      }

      if (batch % tc.accum_steps == 0) model.params().zero_grad();
      tape.backward(tape.scale(total, T(1) / T(tc.accum_steps)));
      ctx.flush_grads();
      if ((batch + 1) % tc.accum_steps == 0 || batch + 1 == n_batches) {
        double lr = lr_scale * lr_at(step, total_steps, tc.base_lr);
        opt.step(model.params(), static_cast<T>(lr));
        ++step;
        es.lr = lr;
      }
      es.mean_loss += static_cast<double>(tape.val(total).x[0]);

      // feedback only lands between batches: the gating inputs stay fixed
      // within one tape
      for (auto& [src, tgt, q] : pending_history) model.history().update(src, tgt, q);
    }

    int counted = std::max(1, n_batches);
    es.mean_loss /= counted;
    if (n_dec > 0) {
      es.mean_tau /= static_cast<double>(n_dec);
      es.mean_w_global /= static_cast<double>(n_dec);
    }
    if (n_dq > 0) es.mean_delta_q /= static_cast<double>(n_dq);
    if (log.is_open()) {
      nlohmann::json j{{"epoch", epoch},         {"stage", stage_name(stage)},
                       {"loss", es.mean_loss},   {"tau_mean", es.mean_tau},
                       {"w_global_mean", es.mean_w_global},
                       {"delta_q_mean", es.mean_delta_q},
                       {"lr", es.lr},            {"tasks", n_tasks}};
      log << j.dump() << "\n";
      log.flush();
    }
    report.epochs.push_back(es);

    if (!tc.out_dir.empty()) {
      bool boundary = (epoch + 1 == boundaries[0]) || (epoch + 1 == boundaries[1]) ||
                      (epoch + 1 == boundaries[2]) || (epoch + 1 == tc.epochs);
      if (boundary) {
        auto name = "checkpoint_epoch" + std::to_string(epoch + 1) + ".mk2n";
        save_checkpoint(tc.out_dir / name, model.params(), cfg.config_hash());
      }
    }
  }
  if (!report.epochs.empty()) {
    report.first_epoch_loss = report.epochs.front().mean_loss;
    report.final_epoch_loss = report.epochs.back().mean_loss;
  }
  return report;
}

}  // namespace medk2n::train
