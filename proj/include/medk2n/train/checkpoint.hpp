#pragma once

#include <cstring>
#include <filesystem>
#include <string>

#include "medk2n/core/params.hpp"
#include "medk2n/io/image_io.hpp"

namespace medk2n::train {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[4] = {'M', 'K', '2', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class V>
void append_pod(std::string& out, V v) {
  char buf[sizeof(V)];
  std::memcpy(buf, &v, sizeof(V));
  out.append(buf, sizeof(V));
}

template <class V>
V read_pod(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(V) > in.size()) throw CheckpointError("checkpoint truncated");
  V v;
  std::memcpy(&v, in.data() + pos, sizeof(V));
  pos += sizeof(V);
  return v;
}

}  // namespace detail

// Binary format: magic "MK2N", version, config hash, then named arrays
// (name, dtype size, rank, dims, raw scalar data). Round-trip is bit-exact.
template <class T>
void save_checkpoint(const std::filesystem::path& path, const ParamStore<T>& store,
                     std::uint64_t config_hash) {
  std::string out;
  out.append(kCheckpointMagic, 4);
  detail::append_pod(out, kCheckpointVersion);
  detail::append_pod(out, config_hash);
  detail::append_pod(out, static_cast<std::uint32_t>(store.count()));
  for (const auto& e : store.entries()) {
    detail::append_pod(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    detail::append_pod(out, static_cast<std::uint8_t>(sizeof(T)));
    detail::append_pod(out, static_cast<std::uint32_t>(e.value.shape.size()));
    for (int d : e.value.shape) detail::append_pod(out, static_cast<std::uint32_t>(d));
    out.append(reinterpret_cast<const char*>(e.value.x.data()), e.value.numel() * sizeof(T));
  }
  io::atomic_write(path, out);
}

template <class T>
void load_checkpoint(const std::filesystem::path& path, ParamStore<T>& store,
                     std::uint64_t expected_config_hash) {
  std::string in = io::read_file(path);
  std::size_t pos = 0;
  if (in.size() < 4 || std::memcmp(in.data(), kCheckpointMagic, 4) != 0)
    throw CheckpointError("not a MK2N checkpoint: " + path.string());
  pos = 4;
  auto version = detail::read_pod<std::uint32_t>(in, pos);
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  auto hash = detail::read_pod<std::uint64_t>(in, pos);
  if (hash != expected_config_hash)
    throw CheckpointError("checkpoint config hash mismatch: file was written for a "
                          "different architecture configuration");
  auto count = detail::read_pod<std::uint32_t>(in, pos);
  // parse fully before touching the store, so a bad file leaves no partial state
  std::vector<std::pair<std::string, Tensor<T>>> parsed;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name_len = detail::read_pod<std::uint32_t>(in, pos);
    if (pos + name_len > in.size()) throw CheckpointError("checkpoint truncated");
    std::string name = in.substr(pos, name_len);
    pos += name_len;
    auto dtype = detail::read_pod<std::uint8_t>(in, pos);
    if (dtype != sizeof(T))
      throw CheckpointError("checkpoint scalar width " + std::to_string(dtype) +
                            " does not match this build");
    auto rank = detail::read_pod<std::uint32_t>(in, pos);
    std::vector<int> shape;
    for (std::uint32_t r = 0; r < rank; ++r)
      shape.push_back(static_cast<int>(detail::read_pod<std::uint32_t>(in, pos)));
    Tensor<T> t(shape);
    std::size_t bytes = t.numel() * sizeof(T);
    if (pos + bytes > in.size()) throw CheckpointError("checkpoint truncated");
    std::memcpy(t.x.data(), in.data() + pos, bytes);
    pos += bytes;
    parsed.emplace_back(std::move(name), std::move(t));
  }
  for (auto& [name, tensor] : parsed) {
    if (!store.has(name))
      throw CheckpointError("checkpoint contains unknown parameter: " + name);
    auto& e = store.at(name);
    if (e.value.shape != tensor.shape)
      throw CheckpointError("checkpoint shape mismatch for " + name);
    e.value = std::move(tensor);
  }
  if (parsed.size() != store.count())
    throw CheckpointError("checkpoint parameter count mismatch");
}

}  // namespace medk2n::train
