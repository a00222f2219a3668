#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "bcfnet/errors.hpp"
#include "bcfnet/rng.hpp"

namespace bcfnet {

// Flat dense tensor. Training uses T = float; the gradient-check path
// instantiates T = double so finite differences are not drowned by
// single-precision rounding.
template <typename T>
struct TensorT {
  std::vector<int> shape;
  std::vector<T> data;

  TensorT() = default;
  explicit TensorT(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(element_count(shape)), T(0));
  }

  static int64_t element_count(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) {
      if (d <= 0) throw ShapeError("tensor dimension must be positive");
      n *= d;
    }
    return n;
  }

  int64_t size() const { return static_cast<int64_t>(data.size()); }
  int rows() const { return shape.empty() ? 0 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  bool all_finite() const {
    for (T v : data) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }
};

using Tensor = TensorT<float>;

// Gaussian-initialized tensor (defaults mean 0, std 0.01 via
// ParameterT::init_gaussian). Deterministic per seed; the draw order is
// row-major over the flat buffer.
template <typename T>
TensorT<T> gaussian_init(std::vector<int> shape, double mean, double std,
                         uint64_t seed) {
  if (std <= 0.0) throw DomainError("gaussian_init: std must be > 0");
  TensorT<T> t(std::move(shape));
  Pcg32 rng(seed);
  for (auto& v : t.data) v = static_cast<T>(mean + std * normal_draw(rng));
  return t;
}

// Trainable array: value plus gradient accumulator plus Adam moments.
// Moment buffers are allocated lazily on the first Adam step so SGD-only
// parameters stay small.
template <typename T>
struct ParameterT {
  std::string name;
  TensorT<T> value;
  TensorT<T> grad;
  TensorT<T> m;  // Adam first moment
  TensorT<T> v;  // Adam second moment

  ParameterT() = default;
  ParameterT(std::string n, TensorT<T> init)
      : name(std::move(n)), value(std::move(init)), grad(value.shape) {}

  void init_gaussian(std::vector<int> shape, uint64_t seed, double mean = 0.0,
                     double std = 0.01) {
    value = gaussian_init<T>(shape, mean, std, seed);
    grad = TensorT<T>(value.shape);
    m = TensorT<T>();
    v = TensorT<T>();
  }

  int64_t size() const { return value.size(); }
  void zero_grad() { grad.fill(T(0)); }
};

using Parameter = ParameterT<float>;

}  // namespace bcfnet
