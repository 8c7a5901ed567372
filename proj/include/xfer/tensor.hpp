#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "xfer/error.hpp"
#include "xfer/random.hpp"

namespace xfer {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

/// Dense row-major tensor. Value semantics; copying copies the data.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)), data_(numel(shape_), fill) {
    check_dims();
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_dims();
    require(numel(shape_) == data_.size(), ErrorKind::ShapeError,
            "data length " + std::to_string(data_.size()) + " does not match shape " + shape_str(shape_));
  }

  static Tensor scalar(T value) { return Tensor(Shape{1}, std::vector<T>{value}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t r, std::size_t c) { return data_[r * shape_.back() + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data_[r * shape_.back() + c]; }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  // Same data, new shape with equal element count.
  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  bool all_finite() const {
    for (const T& x : data_) {
      if (!std::isfinite(x)) return false;
    }
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  void check_dims() const {
    for (std::size_t d : shape_) {
      require(d > 0, ErrorKind::InvalidShape, "zero dimension in shape " + shape_str(shape_));
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

/// Bitwise hash of a tensor's shape and payload.
template <typename T>
std::uint64_t checksum(const Tensor<T>& t, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (std::size_t d : t.shape()) {
    const std::uint64_t d64 = d;
    h = fnv1a(&d64, sizeof d64, h);
  }
  return fnv1a(t.data().data(), t.size() * sizeof(T), h);
}

/// Xavier/Glorot uniform: U(-b, b) with b = sqrt(6 / (fan_in + fan_out)) for a
/// (fan_in, fan_out) matrix. Rank-1 shapes are biases and start at zero.
template <typename T>
Tensor<T> xavier_init(const Shape& shape, std::uint64_t seed) {
  require(shape.size() == 1 || shape.size() == 2, ErrorKind::InvalidShape,
          "xavier_init needs a 1-D or 2-D shape, got " + shape_str(shape));
  Tensor<T> out(shape);
  if (shape.size() == 1) return out;
  const double bound = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
  Rng rng(seed);
  for (T& x : out.data()) x = static_cast<T>(rng.uniform(-bound, bound));
  return out;
}

template <typename T>
Tensor<T> uniform_init(const Shape& shape, std::uint64_t seed, double half_width) {
  require(half_width > 0.0 && std::isfinite(half_width), ErrorKind::InvalidArgument,
          "uniform_init half_width must be positive");
  Tensor<T> out(shape);
  Rng rng(seed);
  for (T& x : out.data()) x = static_cast<T>(rng.uniform(-half_width, half_width));
  return out;
}

}  // namespace xfer
