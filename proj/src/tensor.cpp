#include "imac/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "imac/error.hpp"

namespace imac {

std::string shape_to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  for (auto d : shape_) {
    if (d == 0) throw DimensionError("Tensor: zero-length dimension in " + shape_to_string(shape_));
  }
  values_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  for (auto d : shape_) {
    if (d == 0) throw DimensionError("Tensor: zero-length dimension in " + shape_to_string(shape_));
  }
  if (shape_size(shape_) != values_.size()) {
    throw DimensionError("Tensor: shape " + shape_to_string(shape_) + " needs " +
                         std::to_string(shape_size(shape_)) + " values, got " +
                         std::to_string(values_.size()));
  }
}

Tensor Tensor::vector(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> v;
  v.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("Tensor::matrix: ragged rows");
    v.insert(v.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(v));
}

std::size_t Tensor::rows() const {
  if (shape_.size() == 1) return 1;
  if (shape_.size() != 2) throw DimensionError("rows(): expected rank 2, got " + shape_to_string(shape_));
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.size() == 1) return shape_[0];
  if (shape_.size() != 2) throw DimensionError("cols(): expected rank 2, got " + shape_to_string(shape_));
  return shape_[1];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != values_.size()) {
    throw DimensionError("reshape: cannot view " + shape_to_string(shape_) + " as " +
                         shape_to_string(shape));
  }
  return Tensor(std::move(shape), values_);
}

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("max_abs_diff: " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace imac
