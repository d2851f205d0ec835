#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "interpalg/nn.h"

namespace interpalg {

// Seeded generators for fixtures, demos and tests.

// Dense/relu network with layer widths {d, h1, ..., classes}. He-normal
// weights and small uniform biases, all drawn from `seed`.
Model make_mlp(std::span<const std::size_t> widths, std::uint64_t seed,
               std::string name = "mlp");

// Single dense layer: logits = weight * x + bias, weight is classes x d.
Model make_linear(std::size_t d, std::size_t classes, std::vector<double> weight,
                  std::vector<double> bias, std::string name = "linear");

// conv2d(3x3) -> relu -> maxpool2 -> flatten -> dense -> relu -> dense.
Model make_cnn(const Shape& input_shape, std::size_t channels,
               std::size_t hidden, std::size_t classes, std::uint64_t seed,
               std::string name = "cnn");

// Isotropic Gaussian blobs, one per center, `per_class` points each.
Dataset make_blobs(const std::vector<std::vector<double>>& centers,
                   std::size_t per_class, double spread, std::uint64_t seed);

Tensor random_tensor(const Shape& shape, double lo, double hi, std::uint64_t seed);

}  // namespace interpalg
