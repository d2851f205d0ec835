#include "interpalg/tensor.h"

#include <cmath>
#include <sstream>

#include "interpalg/error.h"

namespace interpalg {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t dim : shape) n *= dim;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.empty()) throw ShapeError("tensor shape must have at least one dimension");
  for (std::size_t dim : shape_) {
    if (dim == 0) {
      throw ShapeError("tensor shape " + shape_to_string(shape_) +
                       " has a zero dimension");
    }
  }
  if (data_.size() != numel(shape_)) {
    throw ShapeError("tensor of shape " + shape_to_string(shape_) + " needs " +
                     std::to_string(numel(shape_)) + " values, got " +
                     std::to_string(data_.size()));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      throw ConfigError("tensor element " + std::to_string(i) + " is not finite");
    }
  }
}

Tensor Tensor::zeros(const Shape& shape) { return filled(shape, 0.0); }

Tensor Tensor::filled(const Shape& shape, double value) {
  return Tensor(shape, std::vector<double>(numel(shape), value));
}

void require_same_shape(const Shape& expected, const Shape& actual,
                        const char* what) {
  if (expected != actual) {
    throw ShapeError(std::string(what) + ": expected shape " +
                     shape_to_string(expected) + ", got " +
                     shape_to_string(actual));
  }
}

}  // namespace interpalg
