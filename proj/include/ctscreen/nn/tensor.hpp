#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "ctscreen/error.hpp"

namespace ctscreen::nn {

using Shape5 = std::array<std::size_t, 5>;  // (batch, channels, depth, height, width)
using Dims3 = std::array<std::size_t, 3>;   // (depth, height, width)

inline std::string shape_str(const Shape5& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < 5; ++i) out += std::to_string(s[i]) + (i + 1 < 5 ? "," : ")");
  return out;
}

inline std::size_t volume_of(const Shape5& s) { return s[0] * s[1] * s[2] * s[3] * s[4]; }

/// Rank-5 dense tensor, width fastest. Kernels, biases and feature vectors use
/// trailing singleton axes.
template <typename T>
struct Tensor {
  Shape5 shape{0, 0, 0, 0, 0};
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape5 s, T fill = T{}) : shape(s), data(volume_of(s), fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t n() const { return shape[0]; }
  std::size_t c() const { return shape[1]; }
  std::size_t d() const { return shape[2]; }
  std::size_t h() const { return shape[3]; }
  std::size_t w() const { return shape[4]; }
  /// Elements per batch item.
  std::size_t item_size() const { return shape[1] * shape[2] * shape[3] * shape[4]; }
  std::size_t spatial() const { return shape[2] * shape[3] * shape[4]; }

  std::size_t index(std::size_t n, std::size_t c, std::size_t d, std::size_t h, std::size_t w) const {
    return (((n * shape[1] + c) * shape[2] + d) * shape[3] + h) * shape[4] + w;
  }
  T& operator()(std::size_t n, std::size_t c, std::size_t d, std::size_t h, std::size_t w) {
    return data[index(n, c, d, h, w)];
  }
  const T& operator()(std::size_t n, std::size_t c, std::size_t d, std::size_t h, std::size_t w) const {
    return data[index(n, c, d, h, w)];
  }
  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape == b.shape && a.data == b.data; }
};

template <typename T>
void expect_shape(const Tensor<T>& t, const Shape5& s, const char* what) {
  if (t.shape != s) fail(ErrorCode::ShapeMismatch, std::string(what) + " has shape " + shape_str(t.shape) +
                                                       ", expected " + shape_str(s));
}

}  // namespace ctscreen::nn
