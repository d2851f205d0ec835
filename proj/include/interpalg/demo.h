#pragma once

#include <cstdint>

#include "interpalg/analysis.h"
#include "interpalg/nn.h"
#include "interpalg/tensor.h"

namespace interpalg {

// Bundled demo data: 8x8 bar images in three classes (horizontal, vertical,
// diagonal) and a 3-stage MLP whose last layer is trained on them.
struct DemoBundle {
  Model model;
  Dataset data;
  Tensor x;   // a horizontal bar
  Tensor x2;  // a vertical bar
  // Spectral fixture as a model + dataset: the penultimate stage of
  // `planted_model` is its input plus a constant, so the spectral report on
  // class 0 of `planted_data` matches the one on `planted.matrix`.
  Model planted_model;
  Dataset planted_data;
  PlantedFixture planted;
};

Tensor bar_image(std::size_t cls, std::size_t pos, double noise, std::uint64_t seed);
DemoBundle make_demo(std::uint64_t seed = 0);

}  // namespace interpalg
