#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "medk2n/data/types.hpp"
#include "medk2n/io/image_io.hpp"

namespace medk2n::data {

struct IngestionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// JSON manifest describing a slice directory:
// {"name", "modalities": [...], "cases": [{"id", "slices": {mod: path}, "mask": "1011"}]}
struct DatasetManifest {
  std::string name;
  std::vector<std::string> modalities;
  struct Case {
    std::string id;
    std::map<std::string, std::string> slice_paths;  // modality name -> relative path
    std::string mask_code;
  };
  std::vector<Case> cases;

  Schema schema() const {
    Schema s;
    Schema defaults = default_schema();
    for (std::size_t i = 0; i < modalities.size(); ++i) {
      std::string desc = modalities[i] + " magnetic resonance image";
      for (const auto& d : defaults)
        if (d.name == modalities[i]) desc = d.description_text;
      s.push_back({static_cast<int>(i), modalities[i], desc});
    }
    return s;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["name"] = name;
    j["modalities"] = modalities;
    j["cases"] = nlohmann::json::array();
    for (const auto& c : cases) {
      nlohmann::json jc;
      jc["id"] = c.id;
      jc["mask"] = c.mask_code;
      jc["slices"] = c.slice_paths;
      j["cases"].push_back(jc);
    }
    return j;
  }

  static DatasetManifest from_json(const nlohmann::json& j) {
    DatasetManifest m;
    m.name = j.at("name").get<std::string>();
    m.modalities = j.at("modalities").get<std::vector<std::string>>();
    for (const auto& jc : j.at("cases")) {
      Case c;
      c.id = jc.at("id").get<std::string>();
      c.mask_code = jc.at("mask").get<std::string>();
      c.slice_paths = jc.at("slices").get<std::map<std::string, std::string>>();
      m.cases.push_back(std::move(c));
    }
    return m;
  }
};

inline void save_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  io::atomic_write(path, m.to_json().dump(2) + "\n");
}

inline DatasetManifest read_manifest(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError("manifest " + path.string() + ": " + e.what());
  }
  return DatasetManifest::from_json(j);
}

// Loads every case listed in the manifest. Paths are resolved relative to
// the manifest's directory; the availability mask decides which modality
// entries must be present.
inline std::vector<PairedSample> load_manifest(const std::filesystem::path& path) {
  DatasetManifest m = read_manifest(path);
  Schema schema = m.schema();
  auto base = path.parent_path();
  std::vector<PairedSample> out;
  for (const auto& c : m.cases) {
    PairedSample s;
    s.case_id = c.id;
    s.mask = parse_mask(c.mask_code, schema);
    for (std::size_t i = 0; i < schema.size(); ++i) {
      if (!s.mask.bits[i]) continue;
      auto it = c.slice_paths.find(schema[i].name);
      if (it == c.slice_paths.end())
        throw IngestionError("case " + c.id + ": mask marks " + schema[i].name +
                             " available but the manifest lists no file for it");
      auto p = base / it->second;
      if (!std::filesystem::exists(p))
        throw IngestionError("case " + c.id + ": missing file " + p.string());
      s.slices[static_cast<int>(i)] = io::load_image(p);
    }
    try {
      s.validate(schema);
    } catch (const std::exception& e) {
      throw IngestionError(std::string("manifest validation: ") + e.what());
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace medk2n::data
