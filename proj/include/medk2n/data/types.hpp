#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace medk2n::data {

struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One imaging contrast of the schema (e.g. "T1n"). `description_text`
// is the text prompt paired with this modality by the identity module.
struct ModalityId {
  int index = 0;
  std::string name;
  std::string description_text;

  bool operator<(const ModalityId& o) const { return index < o.index; }
  bool operator==(const ModalityId& o) const { return index == o.index; }
};

using Schema = std::vector<ModalityId>;

inline Schema default_schema() {
  return {
      {0, "T1n", "t1 weighted magnetic resonance image"},
      {1, "T1c", "t1 contrast enhanced magnetic resonance image"},
      {2, "T2w", "t2 weighted magnetic resonance image"},
      {3, "T2f", "t2 flair magnetic resonance image"},
  };
}

inline const ModalityId& modality_by_name(const Schema& schema, const std::string& name) {
  for (const auto& m : schema)
    if (m.name == name) return m;
  throw SchemaError("unknown modality name: " + name);
}

// Binary availability code over the schema, e.g. "1011".
struct AvailabilityMask {
  std::vector<bool> bits;

  int count() const { return static_cast<int>(std::count(bits.begin(), bits.end(), true)); }

  std::string render() const {
    std::string s;
    for (bool b : bits) s += b ? '1' : '0';
    return s;
  }
};

inline AvailabilityMask parse_mask(const std::string& code, const Schema& schema) {
  if (code.size() != schema.size())
    throw SchemaError("mask '" + code + "' has length " + std::to_string(code.size()) +
                      " but schema has " + std::to_string(schema.size()) + " modalities");
  AvailabilityMask m;
  for (char c : code) {
    if (c != '0' && c != '1')
      throw ContractError("mask '" + code + "' contains non-binary character");
    m.bits.push_back(c == '1');
  }
  if (m.count() == 0) throw ContractError("mask '" + code + "' marks no modality available");
  return m;
}

// H×W grayscale image with values in [0,1].
struct Image2D {
  int h = 0, w = 0;
  std::vector<float> px;

  Image2D() = default;
  Image2D(int h_, int w_) : h(h_), w(w_), px(static_cast<std::size_t>(h_) * w_, 0.f) {}

  float& at(int r, int c) { return px[static_cast<std::size_t>(r) * w + c]; }
  float at(int r, int c) const { return px[static_cast<std::size_t>(r) * w + c]; }
};

// One case: co-registered slices for the available modalities.
struct PairedSample {
  std::string case_id;
  std::map<int, Image2D> slices;  // modality index -> slice
  AvailabilityMask mask;

  void validate(const Schema& schema) const {
    if (mask.bits.size() != schema.size())
      throw SchemaError("case " + case_id + ": mask/schema length mismatch");
    int h = -1, w = -1;
    for (std::size_t i = 0; i < mask.bits.size(); ++i) {
      if (!mask.bits[i]) continue;
      auto it = slices.find(static_cast<int>(i));
      if (it == slices.end())
        throw ContractError("case " + case_id + ": modality " + schema[i].name +
                            " marked available but has no slice");
      if (h < 0) {
        h = it->second.h;
        w = it->second.w;
      } else if (it->second.h != h || it->second.w != w) {
        throw ContractError("case " + case_id + ": slice dimensions disagree");
      }
    }
  }
};

// One K→N mapping: input modalities, target modalities, and the key frame.
struct K2NTask {
  std::set<int> inputs;
  std::set<int> targets;
  int key_frame = -1;

  int k() const { return static_cast<int>(inputs.size()); }
  int n() const { return static_cast<int>(targets.size()); }
};

// Key frame = lowest-index available modality (schema order is the only
// stable ordering under arbitrary masks).
inline K2NTask make_task(const AvailabilityMask& mask, const std::set<int>& targets) {
  if (targets.empty()) throw ContractError("make_task: empty target set");
  K2NTask t;
  for (std::size_t i = 0; i < mask.bits.size(); ++i)
    if (mask.bits[i]) t.inputs.insert(static_cast<int>(i));
  if (t.inputs.empty()) throw ContractError("make_task: mask has no available modality");
  t.key_frame = *t.inputs.begin();
  t.targets = targets;
  return t;
}

}  // namespace medk2n::data
