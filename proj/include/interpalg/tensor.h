#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace interpalg {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Shape-tagged, finite, row-major array of doubles. Immutable once built.
class Tensor {
 public:
  Tensor() = default;
  // Throws ShapeError if data.size() != numel(shape) or any dimension is 0,
  // and ConfigError if any element is NaN or infinite.
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(const Shape& shape);
  static Tensor filled(const Shape& shape, double value);

  const Shape& shape() const { return shape_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }
  std::size_t size() const { return data_.size(); }
  double operator[](std::size_t i) const { return data_[i]; }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Raises ShapeError naming both shapes when they differ.
void require_same_shape(const Shape& expected, const Shape& actual,
                        const char* what);

}  // namespace interpalg
