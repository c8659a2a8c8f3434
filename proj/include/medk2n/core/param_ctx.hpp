#pragma once

#include <map>
#include <string>
#include <vector>

#include "medk2n/core/params.hpp"
#include "medk2n/core/tape.hpp"

namespace medk2n {

// Bridges a ParamStore and one Tape: materializes each parameter as a tape
// leaf at most once per forward pass and accumulates leaf gradients back
// into the store after backward().
template <class T>
struct ParamCtx {
  Tape<T>& tape;
  ParamStore<T>& store;
  std::uint64_t init_seed;
  std::map<std::string, typename Tape<T>::Var> vars;

  ParamCtx(Tape<T>& t, ParamStore<T>& s, std::uint64_t seed)
      : tape(t), store(s), init_seed(seed) {}

  typename Tape<T>::Var get(const std::string& name, std::vector<int> shape, int fan_in,
                            T gain = T(1)) {
    auto it = vars.find(name);
    if (it != vars.end()) return it->second;
    auto& value = store.get_or_create(name, std::move(shape), init_seed, fan_in, gain);
    auto v = tape.leaf(value);
    vars.emplace(name, v);
    return v;
  }

  // Zero-initialized parameter (biases, gate offsets).
  typename Tape<T>::Var get_zero(const std::string& name, std::vector<int> shape) {
    return get(name, std::move(shape), 0);
  }

  void flush_grads() {
    for (auto& [name, var] : vars) {
      auto& e = store.at(name);
      const auto& g = tape.grad(var);
      for (std::size_t i = 0; i < g.numel(); ++i) e.grad.x[i] += g.x[i];
    }
  }
};

}  // namespace medk2n
