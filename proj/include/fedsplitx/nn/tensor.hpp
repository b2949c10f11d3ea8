#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fedsplitx::nn {

using Shape = std::vector<std::size_t>;

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

// Raised when two shapes that must agree do not. `layer_index` is the
// position in the layer list, or npos when the mismatch is not layer-bound.
class ShapeError : public std::invalid_argument {
 public:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  ShapeError(std::size_t layer_index, Shape expected, Shape actual, const std::string& what)
      : std::invalid_argument(format(layer_index, expected, actual, what)),
        layer_index_(layer_index),
        expected_(std::move(expected)),
        actual_(std::move(actual)) {}

  std::size_t layer_index() const noexcept { return layer_index_; }
  const Shape& expected() const noexcept { return expected_; }
  const Shape& actual() const noexcept { return actual_; }

 private:
  static std::string format(std::size_t idx, const Shape& e, const Shape& a, const std::string& what) {
    std::ostringstream os;
    os << what << ": ";
    if (idx != npos) os << "layer " << idx << " ";
    os << "expected " << to_string(e) << ", got " << to_string(a);
    return os.str();
  }

  std::size_t layer_index_;
  Shape expected_;
  Shape actual_;
};

class NonFiniteError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Dense row-major tensor.
template <std::floating_point T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

  BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (element_count(shape_) != data_.size()) {
      throw ShapeError(ShapeError::npos, shape_, {data_.size()}, "tensor data length");
    }
  }

  static BasicTensor vector(std::vector<T> values) {
    Shape s{values.size()};
    return BasicTensor(std::move(s), std::move(values));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& values() noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  // Rows of a rank-2 tensor.
  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t row_width() const { return shape_.empty() ? 0 : data_.size() / std::max<std::size_t>(shape_[0], 1); }

  std::span<T> row(std::size_t r) {
    const std::size_t w = row_width();
    return std::span<T>(data_).subspan(r * w, w);
  }
  std::span<const T> row(std::size_t r) const {
    const std::size_t w = row_width();
    return std::span<const T>(data_).subspan(r * w, w);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    for (T v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

// Gathers the given rows of a rank>=1 tensor into a new tensor.
template <typename T>
BasicTensor<T> gather_rows(const BasicTensor<T>& src, std::span<const std::size_t> rows) {
  Shape shape = src.shape();
  shape[0] = rows.size();
  BasicTensor<T> out(shape);
  const std::size_t w = src.row_width();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto from = src.row(rows[i]);
    std::copy(from.begin(), from.end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * w));
  }
  return out;
}

template <typename T>
void add_into(BasicTensor<T>& dst, const BasicTensor<T>& src) {
  if (dst.shape() != src.shape()) {
    throw ShapeError(ShapeError::npos, dst.shape(), src.shape(), "accumulate");
  }
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename U, typename T>
BasicTensor<U> tensor_cast(const BasicTensor<T>& src) {
  std::vector<U> data(src.values().begin(), src.values().end());
  return BasicTensor<U>(src.shape(), std::move(data));
}

using Tensor = BasicTensor<float>;

}  // namespace fedsplitx::nn
