#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace imac {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

// Dense row-major array of doubles. Plain value type; differentiation lives
// in Graph.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor vector(std::vector<double> v);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  // Rank-2 accessors. A rank-1 tensor is treated as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return values_[r * shape_.back() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * shape_.back() + c]; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::vector<double>& storage() { return values_; }
  const std::vector<double>& storage() const { return values_; }

  Tensor reshaped(Shape shape) const;
  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> values_;
};

// Largest absolute elementwise difference; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace imac
