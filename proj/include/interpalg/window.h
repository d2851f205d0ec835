#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "interpalg/tensor.h"

namespace interpalg {

// Inclusive rectangle on an input's 2-D grid.
struct Rect {
  std::size_t r0 = 0;
  std::size_t c0 = 0;
  std::size_t r1 = 0;
  std::size_t c1 = 0;

  friend bool operator==(const Rect&, const Rect&) = default;
};

// Grid interpretation of an input shape: {d} is 1 x d, {h, w} is h x w and
// {ch, h, w} is h x w replicated over channels. Other ranks are not spatial.
struct Grid {
  std::size_t channels = 1;
  std::size_t rows = 0;
  std::size_t cols = 0;
};
// Throws ShapeError for shapes without a grid interpretation.
Grid grid_of(const Shape& shape);

// Duplicate-free, sorted set of feature indices into a flattened input.
class Window {
 public:
  Window() = default;
  explicit Window(std::vector<std::size_t> indices);

  static Window all(std::size_t d);
  // Every channel's cells inside `rect`. Throws RangeError if the rectangle
  // is inverted or leaves the grid.
  static Window from_rect(const Shape& shape, const Rect& rect);

  const std::vector<std::size_t>& indices() const { return indices_; }
  const std::optional<Rect>& rect() const { return rect_; }
  std::size_t size() const { return indices_.size(); }
  bool empty() const { return indices_.empty(); }
  bool contains(std::size_t i) const;
  bool covers_all(std::size_t d) const;

  Window intersect(const Window& other) const;
  Window complement(std::size_t d) const;
  // Throws RangeError when an index is >= d.
  void check_bounds(std::size_t d) const;

  // Equality is on the index set; rect provenance is informational.
  friend bool operator==(const Window& a, const Window& b) {
    return a.indices_ == b.indices_;
  }

 private:
  std::vector<std::size_t> indices_;
  std::optional<Rect> rect_;
};

}  // namespace interpalg
