#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "rtify/error.hpp"

namespace rtify::diff {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major array. Operations treat any array as a matrix whose column
/// count is the last dimension (1 for rank 0) and whose row count is the
/// product of the remaining dimensions.
template <class T>
class BasicArray {
 public:
  using value_type = T;

  BasicArray() : shape_{0} {}

  explicit BasicArray(Shape shape, T fill = T{0}) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

  BasicArray(Shape shape, std::vector<T> values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (shape_size(shape_) != data_.size()) {
      throw ShapeError("array: shape " + shape_string(shape_) + " does not match " +
                       std::to_string(data_.size()) + " values");
    }
  }

  static BasicArray scalar(T v) { return BasicArray(Shape{1, 1}, std::vector<T>{v}); }
  static BasicArray matrix(std::size_t rows, std::size_t cols, T fill = T{0}) {
    return BasicArray(Shape{rows, cols}, fill);
  }
  static BasicArray column(std::vector<T> values) {
    const auto n = values.size();
    return BasicArray(Shape{n, 1}, std::move(values));
  }
  static BasicArray row(std::vector<T> values) {
    const auto n = values.size();
    return BasicArray(Shape{1, n}, std::move(values));
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }
  std::size_t rows() const {
    const auto c = cols();
    return c == 0 ? 0 : data_.size() / c;
  }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  /// Value of a single-element array.
  T item() const {
    if (data_.size() != 1) throw ShapeError("array: item() on " + shape_string(shape_));
    return data_[0];
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  BasicArray reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
      throw ShapeError("reshape: cannot view " + shape_string(shape_) + " as " + shape_string(shape));
    }
    return BasicArray(std::move(shape), data_);
  }

  template <class U>
  BasicArray<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicArray<U>(shape_, std::move(out));
  }

  bool operator==(const BasicArray&) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Array = BasicArray<float>;

}  // namespace rtify::diff
