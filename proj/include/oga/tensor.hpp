#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace oga {

class Rng;

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);
bool shape_eq(const Shape& a, const Shape& b);

/// Dense row-major 64-bit real tensor. Plain value type: copy/move do the
/// obvious thing, and all layout questions are settled by row-major order.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);

  static Tensor scalar(double v);
  static Tensor from(Shape s, std::vector<double> values);
  static Tensor uniform(Shape s, Rng& rng, double lo = 0.0, double hi = 1.0);
  static Tensor normal(Shape s, Rng& rng, double stddev = 1.0);

  int64_t numel() const { return int64_t(data.size()); }
  int rank() const { return int(shape.size()); }
  int dim(int i) const { return shape[size_t(i)]; }

  double& operator[](int64_t i) { return data[size_t(i)]; }
  double operator[](int64_t i) const { return data[size_t(i)]; }

  // Rank-specific accessors used by the geometry and model code.
  double& at2(int i, int j) { return data[size_t(i) * shape[1] + j]; }
  double at2(int i, int j) const { return data[size_t(i) * shape[1] + j]; }
  double& at3(int i, int j, int k) {
    return data[(size_t(i) * shape[1] + j) * shape[2] + k];
  }
  double at3(int i, int j, int k) const {
    return data[(size_t(i) * shape[1] + j) * shape[2] + k];
  }

  bool all_finite() const;
  double max_abs() const;
  double min() const;
  double max() const;
  double sum() const;

  /// Flat L2 norm.
  double norm() const;
};

/// Flat dot product; shapes must have equal numel.
double dot(const Tensor& a, const Tensor& b);

}  // namespace oga
