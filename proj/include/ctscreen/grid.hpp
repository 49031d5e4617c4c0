#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "ctscreen/error.hpp"

namespace ctscreen {

/// Voxel extents (R, C, S): rows vary fastest in memory, then columns, then slices.
struct Shape3 {
  std::size_t r = 0;
  std::size_t c = 0;
  std::size_t s = 0;

  constexpr std::size_t voxels() const { return r * c * s; }
  constexpr std::size_t operator[](std::size_t axis) const { return axis == 0 ? r : axis == 1 ? c : s; }
  friend constexpr bool operator==(const Shape3&, const Shape3&) = default;

  std::string str() const {
    return std::to_string(r) + "x" + std::to_string(c) + "x" + std::to_string(s);
  }
};

/// Dense 3D array in NIfTI storage order: index = r + R * (c + C * s).
template <typename T>
class Grid3 {
 public:
  using value_type = T;

  Grid3() = default;
  explicit Grid3(Shape3 shape, T fill = T{}) : shape_(shape), data_(shape.voxels(), fill) {}
  Grid3(Shape3 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    require(data_.size() == shape_.voxels(), ErrorCode::ShapeMismatch,
            "grid data length " + std::to_string(data_.size()) + " != " + shape_.str());
  }

  const Shape3& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t index(std::size_t r, std::size_t c, std::size_t s) const {
    return r + shape_.r * (c + shape_.c * s);
  }
  std::array<std::size_t, 3> coords(std::size_t idx) const {
    return {idx % shape_.r, (idx / shape_.r) % shape_.c, idx / (shape_.r * shape_.c)};
  }
  bool contains(long r, long c, long s) const {
    return r >= 0 && c >= 0 && s >= 0 && static_cast<std::size_t>(r) < shape_.r &&
           static_cast<std::size_t>(c) < shape_.c && static_cast<std::size_t>(s) < shape_.s;
  }

  T& operator()(std::size_t r, std::size_t c, std::size_t s) { return data_[index(r, c, s)]; }
  const T& operator()(std::size_t r, std::size_t c, std::size_t s) const { return data_[index(r, c, s)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  friend bool operator==(const Grid3& a, const Grid3& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  Shape3 shape_{};
  std::vector<T> data_;
};

struct Spacing {
  double r = 1.0;
  double c = 1.0;
  double s = 1.0;
};

/// CT volume in Hounsfield units.
struct Volume {
  Grid3<float> voxels;
  Spacing spacing;
  std::string source_id;

  const Shape3& shape() const { return voxels.shape(); }
};

/// Binary lung mask aligned to a Volume. Bits are stored as 0/1 bytes.
struct Mask {
  Grid3<std::uint8_t> bits;
  std::string source_id;

  Mask() = default;
  explicit Mask(Shape3 shape, std::string id = {}) : bits(shape, 0), source_id(std::move(id)) {}
  Mask(Grid3<std::uint8_t> b, std::string id) : bits(std::move(b)), source_id(std::move(id)) {}

  const Shape3& shape() const { return bits.shape(); }
  std::size_t count() const {
    return static_cast<std::size_t>(std::count_if(bits.data().begin(), bits.data().end(),
                                                  [](std::uint8_t v) { return v != 0; }));
  }
  friend bool operator==(const Mask& a, const Mask& b) { return a.bits == b.bits; }
};

}  // namespace ctscreen
