#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace specdiff::nn {

using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles. Layouts used throughout the project are
/// channels-last: sequences are [batch, time, channels] and images are
/// [batch, height, width, channels].
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::vector<double> values);

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  int rank() const { return static_cast<int>(shape.size()); }
  /// Extent of an axis; negative axes count from the end.
  int dim(int axis) const;

  double* ptr() { return data.data(); }
  const double* ptr() const { return data.data(); }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  bool all_finite() const;
  double max_abs() const;
};

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace specdiff::nn
