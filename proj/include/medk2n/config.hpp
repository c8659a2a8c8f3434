#pragma once

#include <filesystem>
#include <string>

#include <yaml-cpp/yaml.h>

#include "medk2n/model.hpp"
#include "medk2n/train/trainer.hpp"

namespace medk2n {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Everything a run needs: data source, architecture, losses, curriculum,
// ablation switches, optimizer settings, seed, and output directory.
struct RunConfig {
  // data: either a manifest on disk or an inline phantom spec
  std::string manifest_path;
  int phantom_cases = 0;
  std::uint64_t phantom_seed = 7;
  int image_size = 64;

  ModelConfig model;
  train::TrainConfig train;
  std::string ablation_stage = "B5";
  std::string out_dir = "runs/default";

  void validate() const {
    if (manifest_path.empty() && phantom_cases <= 0)
      throw ConfigError("config: either dataset.manifest or dataset.phantom.cases "
                        "(positive) must be set");
    if (image_size < 16) throw ConfigError("config: image_size must be >= 16");
    if (model.embed_dim < 4) throw ConfigError("config: model.embed_dim must be >= 4");
    if (model.k_mem < 1) throw ConfigError("config: model.k_mem must be >= 1");
    if (model.k_head < 1) throw ConfigError("config: model.k_head must be >= 1");
    if (model.decode_dim < 2) throw ConfigError("config: model.decode_dim must be >= 2");
    try {
      model.lambda.validate();
    } catch (const std::exception& e) {
      throw ConfigError(std::string("config: loss: ") + e.what());
    }
    try {
      train.schedule.validate();
    } catch (const std::exception& e) {
      throw ConfigError(std::string("config: CURRICULUM: ") + e.what());
    }
    if (train.epochs < 1) throw ConfigError("config: optimizer.epochs must be >= 1");
    if (train.batch_size < 1) throw ConfigError("config: optimizer.batch_size must be >= 1");
    if (train.base_lr <= 0) throw ConfigError("config: optimizer.base_lr must be positive");
  }
};

// The desk profile keeps a full run on one workstation in minutes; the
// paper profile mirrors the published resolution and width.
inline void apply_profile(RunConfig& rc, const std::string& profile) {
  if (profile == "desk") {
    rc.image_size = 64;
    rc.model.embed_dim = 32;
  } else if (profile == "paper") {
    rc.image_size = 256;
    rc.model.embed_dim = 64;
    rc.model.decode_dim = 32;
  } else {
    throw ConfigError("config: unknown profile '" + profile + "' (desk or paper)");
  }
  rc.model.image_size = rc.image_size;
}

namespace detail {

template <class V>
V field(const YAML::Node& n, const std::string& key, V fallback) {
  if (!n || !n[key]) return fallback;
  try {
    return n[key].as<V>();
  } catch (const std::exception&) {
    throw ConfigError("config: invalid value for key '" + key + "'");
  }
}

}  // namespace detail

inline RunConfig load_run_config(const std::filesystem::path& path) {
  YAML::Node root;
  try {
    root = YAML::LoadFile(path.string());
  } catch (const std::exception& e) {
    throw ConfigError("config: cannot parse " + path.string() + ": " + e.what());
  }
  RunConfig rc;
  if (auto prof = detail::field<std::string>(root, "profile", ""); !prof.empty())
    apply_profile(rc, prof);

  auto ds = root["dataset"];
  rc.manifest_path = detail::field<std::string>(ds, "manifest", "");
  if (ds && ds["phantom"]) {
    rc.phantom_cases = detail::field<int>(ds["phantom"], "cases", 0);
    rc.phantom_seed = detail::field<std::uint64_t>(ds["phantom"], "seed", 7);
  }
  rc.image_size = detail::field<int>(root, "image_size", rc.image_size);

  auto m = root["model"];
  rc.model.image_size = rc.image_size;
  rc.model.embed_dim = detail::field<int>(m, "embed_dim", rc.model.embed_dim);
  rc.model.k_mem = detail::field<int>(m, "k_mem", rc.model.k_mem);
  rc.model.k_head = detail::field<int>(m, "k_head", rc.model.k_head);
  rc.model.decode_dim = detail::field<int>(m, "decode_dim", rc.model.decode_dim);
  rc.model.cmim_dim = detail::field<int>(m, "cmim_dim", rc.model.cmim_dim);
  rc.model.text_dim = detail::field<int>(m, "text_dim", rc.model.text_dim);
  rc.model.temperature = detail::field<double>(m, "temperature", rc.model.temperature);
  rc.model.margin = detail::field<double>(m, "margin", rc.model.margin);
  rc.model.init_seed = detail::field<std::uint64_t>(root, "seed", rc.model.init_seed);

  auto l = root["loss"];
  rc.model.lambda.l1 = detail::field<double>(l, "l1", rc.model.lambda.l1);
  rc.model.lambda.ssim = detail::field<double>(l, "ssim", rc.model.lambda.ssim);
  rc.model.lambda.causal = detail::field<double>(l, "causal", rc.model.lambda.causal);
  rc.model.lambda.metric = detail::field<double>(l, "metric", rc.model.lambda.metric);

  auto cur = root["CURRICULUM"];
  if (cur && cur["ratios"]) {
    auto v = cur["ratios"].as<std::vector<double>>();
    if (v.size() != 4) throw ConfigError("config: CURRICULUM.ratios needs 4 entries");
    for (int i = 0; i < 4; ++i) rc.train.schedule.ratios[static_cast<std::size_t>(i)] = v[static_cast<std::size_t>(i)];
  }

  auto o = root["optimizer"];
  rc.train.epochs = detail::field<int>(o, "epochs", rc.train.epochs);
  rc.train.batch_size = detail::field<int>(o, "batch_size", rc.train.batch_size);
  rc.train.samples_per_epoch =
      detail::field<int>(o, "samples_per_epoch", rc.train.samples_per_epoch);
  rc.train.base_lr = detail::field<double>(o, "base_lr", rc.train.base_lr);
  rc.train.accum_steps = detail::field<int>(o, "accum_steps", rc.train.accum_steps);
  rc.train.lr_boost_large_n =
      detail::field<bool>(o, "lr_boost_large_n", rc.train.lr_boost_large_n);
  rc.train.augment = detail::field<bool>(o, "augment", rc.train.augment);
  rc.train.seed = detail::field<std::uint64_t>(root, "seed", rc.train.seed);
  rc.train.schedule.total_epochs = rc.train.epochs;

  rc.ablation_stage = detail::field<std::string>(root, "ablation", rc.ablation_stage);
  try {
    rc.model.ablation = AblationConfig::stage(rc.ablation_stage);
  } catch (const std::exception&) {
    throw ConfigError("config: invalid value for key 'ablation' (expected B0..B5)");
  }
  rc.out_dir = detail::field<std::string>(root, "out_dir", rc.out_dir);
  rc.validate();
  return rc;
}

}  // namespace medk2n
