#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "medk2n/core/rng.hpp"
#include "medk2n/core/tensor.hpp"

namespace medk2n {

// Named parameter store with accumulated gradients. The name manifest is
// fixed by the architecture config and doubles as the checkpoint schema.
template <class T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
  };

  // Registers (or fetches) a parameter. New parameters are initialized with
  // Kaiming-style normal noise scaled by 1/sqrt(fan_in), seeded by name.
  Tensor<T>& get_or_create(const std::string& name, std::vector<int> shape,
                           std::uint64_t seed, int fan_in, T gain = T(1)) {
    auto it = index_.find(name);
    if (it != index_.end()) {
      if (entries_[it->second].value.shape != shape)
        throw std::invalid_argument("param shape changed: " + name);
      return entries_[it->second].value;
    }
    Entry e;
    e.name = name;
    e.value = Tensor<T>(shape);
    e.grad = Tensor<T>(shape);
    if (fan_in > 0) {
      auto eng = make_engine(hash_combine(seed, hash_str(name)));
      std::normal_distribution<double> dist(0.0, 1.0);
      T s = gain / std::sqrt(static_cast<T>(fan_in));
      for (auto& v : e.value.x) v = static_cast<T>(dist(eng)) * s;
    }
    index_[name] = entries_.size();
    entries_.push_back(std::move(e));
    return entries_.back().value;
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  Entry& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown param: " + name);
    return entries_[it->second];
  }
  const Entry& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown param: " + name);
    return entries_[it->second];
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t count() const { return entries_.size(); }

  void zero_grad() {
    for (auto& e : entries_) e.grad.fill(T(0));
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

// Adam with decoupled schedule: caller passes the current learning rate.
template <class T>
class AdamOptimizer {
 public:
  AdamOptimizer(T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8))
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamStore<T>& store, T lr) {
    ++t_;
    if (m_.size() != store.count()) {
      m_.assign(store.count(), {});
      v_.assign(store.count(), {});
      for (std::size_t i = 0; i < store.count(); ++i) {
        m_[i] = Tensor<T>(store.entries()[i].value.shape);
        v_[i] = Tensor<T>(store.entries()[i].value.shape);
      }
    }
    T bc1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
    T bc2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
    for (std::size_t i = 0; i < store.count(); ++i) {
      auto& e = store.entries()[i];
      for (std::size_t j = 0; j < e.value.numel(); ++j) {
        T g = e.grad.x[j];
        m_[i].x[j] = beta1_ * m_[i].x[j] + (T(1) - beta1_) * g;
        v_[i].x[j] = beta2_ * v_[i].x[j] + (T(1) - beta2_) * g * g;
        T mhat = m_[i].x[j] / bc1;
        T vhat = v_[i].x[j] / bc2;
        e.value.x[j] -= lr * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

 private:
  T beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

}  // namespace medk2n
