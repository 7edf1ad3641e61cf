#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "salted/error.hpp"

namespace salted {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major tensor. A rank-0 tensor holds one value.
template <typename T>
class Tensor {
 public:
  Tensor() : data_(1, T{}) {}

  explicit Tensor(Shape shape, T fill = T{}) : shape_(std::move(shape)) {
    check_dims(shape_);
    data_.assign(shape_numel(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_dims(shape_);
    if (data_.size() != shape_numel(shape_)) {
      throw Error(Errc::LengthMismatch, "tensor of shape " + shape_str(shape_) + " needs " +
                                            std::to_string(shape_numel(shape_)) +
                                            " values, got " + std::to_string(data_.size()));
    }
  }

  static Tensor from(std::initializer_list<T> values) {
    return Tensor(Shape{values.size()}, std::vector<T>(values));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// Same values, new shape with equal element count.
  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size()) {
      throw Error(Errc::ShapeMismatch,
                  "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  /// Bitwise equality of shape and values (distinguishes -0.0 and NaN payloads).
  bool identical(const Tensor& other) const {
    return shape_ == other.shape_ &&
           std::equal(data_.begin(), data_.end(), other.data_.begin(), other.data_.end(),
                      [](T a, T b) { return std::memcmp(&a, &b, sizeof(T)) == 0; });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static void check_dims(const Shape& shape) {
    for (std::size_t d : shape) {
      if (d == 0) throw Error(Errc::InvalidShape, "zero-sized dimension in " + shape_str(shape));
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensorf = Tensor<float>;

/// Prepends a batch dimension.
inline Shape batched(std::size_t n, const Shape& sample) {
  Shape out;
  out.reserve(sample.size() + 1);
  out.push_back(n);
  out.insert(out.end(), sample.begin(), sample.end());
  return out;
}

/// Strips the leading batch dimension.
inline Shape sample_shape(const Shape& batch) { return Shape(batch.begin() + 1, batch.end()); }

template <typename T>
std::size_t argmax(std::span<const T> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace salted
