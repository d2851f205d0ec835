#include "interpalg/window.h"

#include <algorithm>
#include <iterator>

#include "interpalg/error.h"

namespace interpalg {

Grid grid_of(const Shape& shape) {
  switch (shape.size()) {
    case 1:
      return {1, 1, shape[0]};
    case 2:
      return {1, shape[0], shape[1]};
    case 3:
      return {shape[0], shape[1], shape[2]};
    default:
      throw ShapeError("shape " + shape_to_string(shape) + " has no 2-D grid");
  }
}

Window::Window(std::vector<std::size_t> indices) : indices_(std::move(indices)) {
  std::sort(indices_.begin(), indices_.end());
  indices_.erase(std::unique(indices_.begin(), indices_.end()), indices_.end());
}

Window Window::all(std::size_t d) {
  std::vector<std::size_t> idx(d);
  for (std::size_t i = 0; i < d; ++i) idx[i] = i;
  return Window(std::move(idx));
}

Window Window::from_rect(const Shape& shape, const Rect& rect) {
  const Grid g = grid_of(shape);
  if (rect.r0 > rect.r1 || rect.c0 > rect.c1) {
    throw RangeError("rect(" + std::to_string(rect.r0) + "," + std::to_string(rect.c0) +
                     "," + std::to_string(rect.r1) + "," + std::to_string(rect.c1) +
                     ") is inverted");
  }
  if (rect.r1 >= g.rows || rect.c1 >= g.cols) {
    throw RangeError("rect(" + std::to_string(rect.r0) + "," + std::to_string(rect.c0) +
                     "," + std::to_string(rect.r1) + "," + std::to_string(rect.c1) +
                     ") leaves the " + std::to_string(g.rows) + "x" +
                     std::to_string(g.cols) + " grid");
  }
  std::vector<std::size_t> idx;
  for (std::size_t ch = 0; ch < g.channels; ++ch) {
    for (std::size_t r = rect.r0; r <= rect.r1; ++r) {
      for (std::size_t c = rect.c0; c <= rect.c1; ++c) {
        idx.push_back((ch * g.rows + r) * g.cols + c);
      }
    }
  }
  Window w(std::move(idx));
  w.rect_ = rect;
  return w;
}

bool Window::contains(std::size_t i) const {
  return std::binary_search(indices_.begin(), indices_.end(), i);
}

bool Window::covers_all(std::size_t d) const {
  return indices_.size() == d && (d == 0 || indices_.back() == d - 1);
}

Window Window::intersect(const Window& other) const {
  std::vector<std::size_t> out;
  std::set_intersection(indices_.begin(), indices_.end(), other.indices_.begin(),
                        other.indices_.end(), std::back_inserter(out));
  Window w(std::move(out));
  if (rect_ && other.rect_) {
    const Rect r{std::max(rect_->r0, other.rect_->r0), std::max(rect_->c0, other.rect_->c0),
                 std::min(rect_->r1, other.rect_->r1), std::min(rect_->c1, other.rect_->c1)};
    if (r.r0 <= r.r1 && r.c0 <= r.c1) w.rect_ = r;
  }
  return w;
}

Window Window::complement(std::size_t d) const {
  std::vector<std::size_t> out;
  std::size_t k = 0;
  for (std::size_t i = 0; i < d; ++i) {
    while (k < indices_.size() && indices_[k] < i) ++k;
    if (k < indices_.size() && indices_[k] == i) continue;
    out.push_back(i);
  }
  return Window(std::move(out));
}

void Window::check_bounds(std::size_t d) const {
  if (!indices_.empty() && indices_.back() >= d) {
    throw RangeError("window index " + std::to_string(indices_.back()) +
                     " out of range for " + std::to_string(d) + " features");
  }
}

}  // namespace interpalg
