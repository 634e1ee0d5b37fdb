#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "abmapper/common.hpp"

namespace abm::nn {

/// Dense row-major float32 tensor. Plain value type: copies copy data.
struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(numel_of(shape), 0.0f);
  }
  Tensor(std::vector<int> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != static_cast<size_t>(numel_of(shape)))
      throw Error(ErrorKind::ShapeMismatch, "tensor data length does not match shape");
  }

  static long numel_of(const std::vector<int>& s) {
    long n = 1;
    for (int d : s) n *= d;
    return n;
  }

  long numel() const { return static_cast<long>(data.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(shape.size()); }

  float* ptr() { return data.data(); }
  const float* ptr() const { return data.data(); }

  float& operator[](long i) { return data[static_cast<size_t>(i)]; }
  float operator[](long i) const { return data[static_cast<size_t>(i)]; }

  // 2-D accessors; callers are expected to know the rank.
  float& at(int r, int c) { return data[static_cast<size_t>(r) * shape[1] + c]; }
  float at(int r, int c) const { return data[static_cast<size_t>(r) * shape[1] + c]; }

  void fill(float v) { std::fill(data.begin(), data.end(), v); }
  void zero() { fill(0.0f); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

inline void require_shape(const Tensor& t, const std::vector<int>& s, const char* what) {
  if (t.shape != s) throw Error(ErrorKind::ShapeMismatch, std::string("shape mismatch: ") + what);
}

}  // namespace abm::nn
