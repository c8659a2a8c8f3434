// Operator entry points: gen-data, train, eval, synth, report.
#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "medk2n/config.hpp"
#include "medk2n/data/manifest.hpp"
#include "medk2n/data/phantom.hpp"
#include "medk2n/eval/matrix.hpp"
#include "medk2n/io/image_io.hpp"
#include "medk2n/model.hpp"
#include "medk2n/train/checkpoint.hpp"
#include "medk2n/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace medk2n;

namespace {

std::string render_config(const RunConfig& rc) {
  std::ostringstream os;
  os << "profile: custom\n";
  os << "seed: " << rc.model.init_seed << "\n";
  os << "image_size: " << rc.image_size << "\n";
  os << "ablation: " << rc.ablation_stage << "\n";
  os << "out_dir: " << rc.out_dir << "\n";
  os << "dataset:\n";
  if (!rc.manifest_path.empty()) os << "  manifest: " << rc.manifest_path << "\n";
  if (rc.phantom_cases > 0)
    os << "  phantom:\n    cases: " << rc.phantom_cases
       << "\n    seed: " << rc.phantom_seed << "\n";
  os << "model:\n";
  os << "  embed_dim: " << rc.model.embed_dim << "\n";
  os << "  k_mem: " << rc.model.k_mem << "\n";
  os << "  k_head: " << rc.model.k_head << "\n";
  os << "  decode_dim: " << rc.model.decode_dim << "\n";
  os << "  cmim_dim: " << rc.model.cmim_dim << "\n";
  os << "  text_dim: " << rc.model.text_dim << "\n";
  os << "  temperature: " << rc.model.temperature << "\n";
  os << "  margin: " << rc.model.margin << "\n";
  os << "loss:\n";
  os << "  l1: " << rc.model.lambda.l1 << "\n";
  os << "  ssim: " << rc.model.lambda.ssim << "\n";
  os << "  causal: " << rc.model.lambda.causal << "\n";
  os << "  metric: " << rc.model.lambda.metric << "\n";
  os << "CURRICULUM:\n  ratios: [" << rc.train.schedule.ratios[0] << ", "
     << rc.train.schedule.ratios[1] << ", " << rc.train.schedule.ratios[2] << ", "
     << rc.train.schedule.ratios[3] << "]\n";
  os << "optimizer:\n";
  os << "  epochs: " << rc.train.epochs << "\n";
  os << "  batch_size: " << rc.train.batch_size << "\n";
  os << "  samples_per_epoch: " << rc.train.samples_per_epoch << "\n";
  os << "  base_lr: " << rc.train.base_lr << "\n";
  os << "  accum_steps: " << rc.train.accum_steps << "\n";
  os << "  lr_boost_large_n: " << (rc.train.lr_boost_large_n ? "true" : "false") << "\n";
  os << "  augment: " << (rc.train.augment ? "true" : "false") << "\n";
  return os.str();
}

void snapshot_run_dir(const RunConfig& rc) {
  fs::create_directories(rc.out_dir);
  auto snap = render_config(rc);
  io::atomic_write(fs::path(rc.out_dir) / "config.yaml", snap);
  nlohmann::json info{{"config_hash", hash_str(snap)},
                      {"model_hash", rc.model.config_hash()}};
  io::atomic_write(fs::path(rc.out_dir) / "run_info.json", info.dump(2) + "\n");
}

std::vector<data::PairedSample> load_dataset(const RunConfig& rc) {
  if (!rc.manifest_path.empty()) return data::load_manifest(rc.manifest_path);
  data::PhantomSpec spec;
  spec.seed = rc.phantom_seed;
  spec.n_cases = rc.phantom_cases;
  spec.image_size = rc.image_size;
  spec.schema = rc.model.schema;
  return data::generate_phantom(spec);
}

void apply_shared_flags(RunConfig& rc, const std::string& ratios,
                        const std::string& ablation, const std::string& profile) {
  if (!profile.empty()) apply_profile(rc, profile);
  if (!ablation.empty()) {
    rc.model.ablation = AblationConfig::stage(ablation);
    rc.ablation_stage = ablation;
  }
  if (!ratios.empty()) {
    std::array<double, 4> r{};
    std::stringstream ss(ratios);
    std::string tok;
    int i = 0;
    while (std::getline(ss, tok, ',') && i < 4) r[static_cast<std::size_t>(i++)] = std::stod(tok);
    if (i != 4) throw ConfigError("config: --curriculum-ratios needs 4 comma-separated values");
    rc.train.schedule.ratios = r;
    rc.train.schedule.validate();
  }
}

int cmd_gen_data(std::uint64_t seed, int cases, int size, const std::string& out) {
  if (cases < 1) throw ConfigError("config: invalid value for key 'cases' (must be >= 1)");
  data::PhantomSpec spec;
  spec.seed = seed;
  spec.n_cases = cases;
  spec.image_size = size;
  fs::create_directories(out);
  auto samples = data::generate_phantom(spec);
  data::DatasetManifest m;
  m.name = "phantom_seed" + std::to_string(seed);
  for (const auto& mod : spec.schema) m.modalities.push_back(mod.name);
  for (const auto& s : samples) {
    data::DatasetManifest::Case c;
    c.id = s.case_id;
    c.mask_code = s.mask.render();
    for (const auto& [mi, img] : s.slices) {
      std::string rel = s.case_id + "_" + spec.schema[static_cast<std::size_t>(mi)].name + ".png";
      io::save_png16(fs::path(out) / rel, img);
      c.slice_paths[spec.schema[static_cast<std::size_t>(mi)].name] = rel;
    }
    m.cases.push_back(std::move(c));
  }
  data::save_manifest(fs::path(out) / "manifest.json", m);
  std::cout << "wrote " << samples.size() << " cases to " << out << "\n";
  return 0;
}

int cmd_train(RunConfig rc) {
  rc.validate();
  snapshot_run_dir(rc);
  auto dataset = load_dataset(rc);
  Model<float> model(rc.model);
  rc.train.out_dir = rc.out_dir;
  rc.train.schedule.total_epochs = rc.train.epochs;
  auto report = train::train_model(model, dataset, rc.train);
  std::cout << "trained " << rc.train.epochs << " epochs; loss "
            << report.first_epoch_loss << " -> " << report.final_epoch_loss << "\n";
  std::cout << "final checkpoint: "
            << (fs::path(rc.out_dir) / ("checkpoint_epoch" + std::to_string(rc.train.epochs) + ".mk2n"))
            << "\n";
  return 0;
}

Model<float> load_model(const RunConfig& rc, const std::string& checkpoint) {
  Model<float> model(rc.model);
  train::load_checkpoint(checkpoint, model.params(), rc.model.config_hash());
  return model;
}

int cmd_eval(const RunConfig& rc, const std::string& checkpoint,
             const std::string& compare_checkpoint, std::vector<std::string> masks,
             std::vector<std::string> target_names, const std::string& out) {
  auto dataset = load_dataset(rc);
  auto model = load_model(rc, checkpoint);
  std::vector<int> targets;
  if (target_names.empty())
    for (const auto& mod : rc.model.schema) targets.push_back(mod.index);
  else
    for (const auto& n : target_names)
      targets.push_back(data::modality_by_name(rc.model.schema, n).index);
  if (masks.empty())
    for (const auto& mod : rc.model.schema) {
      std::string code(rc.model.schema.size(), '0');
      code[static_cast<std::size_t>(mod.index)] = '1';
      masks.push_back(code);
    }
  auto res = eval::run_matrix(model, dataset, masks, targets);
  std::cout << eval::matrix_table(res, rc.model.schema);
  fs::create_directories(out);
  io::atomic_write(fs::path(out) / "metrics.csv", eval::matrix_csv(res));
  auto j = nlohmann::json{{"summaries", eval::summary_json(res)}};
  if (!compare_checkpoint.empty()) {
    auto other = load_model(rc, compare_checkpoint);
    auto res2 = eval::run_matrix(other, dataset, masks, targets);
    nlohmann::json w;
    for (auto& [key, p] : eval::wilcoxon_between(res, res2)) w[key] = p;
    j["wilcoxon_psnr_vs_compare"] = w;
    std::cout << "wilcoxon vs compare: " << w.dump() << "\n";
  }
  io::atomic_write(fs::path(out) / "summary.json", j.dump(2) + "\n");
  return 0;
}

int cmd_synth(const RunConfig& rc, const std::string& checkpoint,
              const std::vector<std::string>& input_specs,
              const std::vector<std::string>& target_names, const std::string& out) {
  if (input_specs.empty()) throw ConfigError("config: synth needs at least one --input");
  if (target_names.empty()) throw ConfigError("config: synth needs at least one --target");
  auto model = load_model(rc, checkpoint);
  data::PairedSample s;
  s.case_id = "synth";
  s.mask.bits.assign(rc.model.schema.size(), false);
  for (const auto& spec : input_specs) {
    auto eq = spec.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: --input expects MODALITY=path, got '" + spec + "'");
    const auto& mod = data::modality_by_name(rc.model.schema, spec.substr(0, eq));
    s.slices[mod.index] = io::load_image(spec.substr(eq + 1));
    s.mask.bits[static_cast<std::size_t>(mod.index)] = true;
  }
  s.validate(rc.model.schema);
  std::set<int> targets;
  for (const auto& n : target_names)
    targets.insert(data::modality_by_name(rc.model.schema, n).index);
  auto task = data::make_task(s.mask, targets);

  Tape<float> tape;
  ParamCtx<float> ctx(tape, model.params(), rc.model.init_seed);
  auto fwd = model.forward(ctx, s, task, /*train=*/false);
  fs::create_directories(out);
  nlohmann::json side = nlohmann::json::array();
  for (const auto& to : fwd.targets) {
    const auto& name = rc.model.schema[static_cast<std::size_t>(to.target)].name;
    const auto& img = to.set.candidates[static_cast<std::size_t>(to.set.winner_index)];
    io::save_png16(fs::path(out) / (name + ".png"), img);
    nlohmann::json diag = nlohmann::json::array();
    for (const auto& d : to.decisions)
      diag.push_back({{"source", rc.model.schema[static_cast<std::size_t>(d.source)].name},
                      {"w_global", d.w_global},
                      {"tau", d.tau},
                      {"w_eff_mean", d.w_eff_mean},
                      {"p_history", d.p_history}});
    side.push_back({{"target", name},
                    {"quality", to.q_winner},
                    {"winner_head", to.set.winner_index},
                    {"delta_q", to.set.delta_q},
                    {"fusion", diag}});
  }
  io::atomic_write(fs::path(out) / "synth.json", side.dump(2) + "\n");
  std::cout << "wrote " << fwd.targets.size() << " targets to " << out << "\n";
  return 0;
}

int cmd_report(const std::string& run_dir) {
  fs::path dir(run_dir);
  std::ostringstream os;
  os << "run report: " << run_dir << "\n";
  if (fs::exists(dir / "run_info.json"))
    os << "run_info: " << io::read_file(dir / "run_info.json");
  if (fs::exists(dir / "train_log.jsonl")) {
    std::ifstream f(dir / "train_log.jsonl");
    std::string line, last, first;
    while (std::getline(f, line))
      if (!line.empty()) {
        if (first.empty()) first = line;
        last = line;
      }
    if (!first.empty()) os << "first epoch: " << first << "\nlast epoch:  " << last << "\n";
  }
  if (fs::exists(dir / "summary.json")) os << "eval summary: " << io::read_file(dir / "summary.json");
  auto text = os.str();
  io::atomic_write(dir / "report.txt", text);
  std::cout << text;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"progressive K-to-N multimodal synthesis toolkit"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a phantom dataset + manifest");
  std::uint64_t gd_seed = 7;
  int gd_cases = 20, gd_size = 64;
  std::string gd_out = "data";
  gen->add_option("--seed", gd_seed);
  gen->add_option("--cases", gd_cases);
  gen->add_option("--size", gd_size);
  gen->add_option("--out", gd_out);

  // shared flags
  std::string config_path, ratios, ablation, profile, checkpoint, compare, out_dir;
  std::vector<std::string> masks, target_names, input_specs;

  auto* tr = app.add_subcommand("train", "run curriculum training");
  tr->add_option("--config", config_path);
  tr->add_option("--curriculum-ratios", ratios);
  tr->add_option("--ablation", ablation)->check(CLI::IsMember({"B0", "B1", "B2", "B3", "B4", "B5"}));
  tr->add_option("--profile", profile)->check(CLI::IsMember({"desk", "paper"}));
  tr->add_option("--out", out_dir);
  std::uint64_t tr_seed = 0;
  int tr_epochs = 0, tr_cases = 0;
  std::string tr_manifest;
  tr->add_option("--seed", tr_seed);
  tr->add_option("--epochs", tr_epochs);
  tr->add_option("--cases", tr_cases);
  tr->add_option("--manifest", tr_manifest);

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint over a mask/target matrix");
  ev->add_option("--config", config_path);
  ev->add_option("--checkpoint", checkpoint)->required();
  ev->add_option("--compare", compare);
  ev->add_option("--mask", masks);
  ev->add_option("--target", target_names);
  ev->add_option("--manifest", tr_manifest);
  ev->add_option("--seed", tr_seed);
  ev->add_option("--cases", tr_cases);
  ev->add_option("--out", out_dir);
  ev->add_option("--profile", profile)->check(CLI::IsMember({"desk", "paper"}));
  ev->add_option("--ablation", ablation)->check(CLI::IsMember({"B0", "B1", "B2", "B3", "B4", "B5"}));

  auto* sy = app.add_subcommand("synth", "synthesize target modalities from input images");
  sy->add_option("--config", config_path);
  sy->add_option("--checkpoint", checkpoint)->required();
  sy->add_option("--input", input_specs);
  sy->add_option("--target", target_names);
  sy->add_option("--out", out_dir);
  sy->add_option("--profile", profile)->check(CLI::IsMember({"desk", "paper"}));
  sy->add_option("--ablation", ablation)->check(CLI::IsMember({"B0", "B1", "B2", "B3", "B4", "B5"}));

  auto* rp = app.add_subcommand("report", "summarize a run directory");
  std::string rp_dir;
  rp->add_option("--run", rp_dir)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(gd_seed, gd_cases, gd_size, gd_out);
    if (rp->parsed()) return cmd_report(rp_dir);

    RunConfig rc;
    if (!config_path.empty()) rc = load_run_config(config_path);
    apply_shared_flags(rc, ratios, ablation, profile);
    if (tr_seed) {
      rc.model.init_seed = tr_seed;
      rc.train.seed = tr_seed;
      rc.phantom_seed = tr_seed;
    }
    if (tr_epochs) {
      rc.train.epochs = tr_epochs;
      rc.train.schedule.total_epochs = tr_epochs;
    }
    if (tr_cases) rc.phantom_cases = tr_cases;
    if (!tr_manifest.empty()) rc.manifest_path = tr_manifest;
    if (!out_dir.empty()) rc.out_dir = out_dir;

    if (tr->parsed()) return cmd_train(rc);
    if (ev->parsed()) {
      rc.validate();
      return cmd_eval(rc, checkpoint, compare, masks, target_names,
                      out_dir.empty() ? "eval_out" : out_dir);
    }
    if (sy->parsed())
      return cmd_synth(rc, checkpoint, input_specs, target_names,
                       out_dir.empty() ? "synth_out" : out_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
