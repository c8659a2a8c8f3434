#pragma once

#include <cassert>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace medk2n {

// Dense row-major tensor. Rank 0 is a scalar, rank 1 a vector,
// rank 3 a (channels, height, width) feature map.
template <class T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> x;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), x(numel_of(shape), T(0)) {}
  Tensor(std::vector<int> s, std::vector<T> v) : shape(std::move(s)), x(std::move(v)) {
    if (x.size() != numel_of(shape)) throw std::invalid_argument("tensor: data/shape mismatch");
  }

  static std::size_t numel_of(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) {
      if (d < 0) throw std::invalid_argument("tensor: negative dim");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  static Tensor scalar(T v) { return Tensor({}, {v}); }

  std::size_t numel() const { return x.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  T& operator[](std::size_t i) { return x[i]; }
  const T& operator[](std::size_t i) const { return x[i]; }

  // (c, h, w) indexing for rank-3 maps.
  T& at(int c, int h, int w) {
    return x[(static_cast<std::size_t>(c) * shape[1] + h) * shape[2] + w];
  }
  const T& at(int c, int h, int w) const {
    return x[(static_cast<std::size_t>(c) * shape[1] + h) * shape[2] + w];
  }

  void fill(T v) { std::fill(x.begin(), x.end(), v); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

template <class T>
Tensor<T> zeros_like(const Tensor<T>& t) {
  return Tensor<T>(t.shape);
}

inline std::string shape_str(const std::vector<int>& s) {
  std::string r = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) r += ",";
    r += std::to_string(s[i]);
  }
  return r + ")";
}

}  // namespace medk2n
