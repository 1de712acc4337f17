#include "oga/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "oga/rng.hpp"

namespace oga {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

bool shape_eq(const Shape& a, const Shape& b) { return a == b; }

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)) {
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor dims must be positive");
  }
  data.assign(size_t(shape_numel(shape)), fill);
}

Tensor Tensor::scalar(double v) {
  Tensor t(Shape{1});
  t.data[0] = v;
  return t;
}

Tensor Tensor::from(Shape s, std::vector<double> values) {
  Tensor t;
  t.shape = std::move(s);
  if (int64_t(values.size()) != shape_numel(t.shape)) {
    throw std::invalid_argument("value count does not match shape " +
                                shape_str(t.shape));
  }
  t.data = std::move(values);
  return t;
}

Tensor Tensor::uniform(Shape s, Rng& rng, double lo, double hi) {
  Tensor t(std::move(s));
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

Tensor Tensor::normal(Shape s, Rng& rng, double stddev) {
  Tensor t(std::move(s));
  for (double& v : t.data) v = rng.normal() * stddev;
  return t;
}

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double Tensor::max_abs() const {
  double m = 0.0;
  for (double v : data) m = std::max(m, std::fabs(v));
  return m;
}

double Tensor::min() const {
  double m = data.empty() ? 0.0 : data[0];
  for (double v : data) m = std::min(m, v);
  return m;
}

double Tensor::max() const {
  double m = data.empty() ? 0.0 : data[0];
  for (double v : data) m = std::max(m, v);
  return m;
}

double Tensor::sum() const {
  double s = 0.0;
  for (double v : data) s += v;
  return s;
}

double Tensor::norm() const {
  double s = 0.0;
  for (double v : data) s += v * v;
  return std::sqrt(s);
}

double dot(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) {
    throw std::invalid_argument("dot: size mismatch");
  }
  double s = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

}  // namespace oga
