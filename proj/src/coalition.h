#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "interpalg/nn.h"

namespace interpalg::internal {

// The coalitional game v(S) = logit_cls(masked input). Coalitions are built
// one feature at a time. When the network opens with an affine dense layer
// (optionally behind flattens) the state is that layer's pre-activation and
// adding a feature costs one column update; otherwise the state is the masked
// input and every value() is a full forward pass.
class CoalitionGame {
 public:
  CoalitionGame(const Model& model, std::span<const double> x,
                std::span<const double> base, std::size_t cls);

  using State = std::vector<double>;

  State empty_state() const;
  void add(State& state, std::size_t feature) const;
  double value(const State& state) const;

 private:
  const Model& model_;
  std::span<const double> x_;
  std::span<const double> base_;
  std::size_t cls_;
  bool affine_ = false;
  std::size_t tail_begin_ = 0;
  std::size_t width_ = 0;           // outputs of the leading dense layer
  std::vector<double> base_pre_;    // leading layer applied to `base`
  std::vector<double> columns_;     // leading weight, feature-major
};

}  // namespace interpalg::internal
