#include "himix/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

namespace himix {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), data(numel(shape), fill) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dims must be positive, got " + shape_str(shape));
  }
}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dims must be positive, got " + shape_str(shape));
  }
  if (numel(shape) != data.size()) {
    throw ShapeError("shape " + shape_str(shape) + " holds " + std::to_string(numel(shape)) + " values, got " +
                     std::to_string(data.size()));
  }
}

void Tensor::fill(double v) { std::fill(data.begin(), data.end(), v); }

}  // namespace himix
