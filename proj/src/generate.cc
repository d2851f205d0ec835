#include "interpalg/generate.h"

#include <cmath>
#include <random>

#include "interpalg/error.h"

namespace interpalg {

namespace {

std::vector<std::string> default_labels(std::size_t classes) {
  std::vector<std::string> labels;
  for (std::size_t c = 0; c < classes; ++c) labels.push_back("class" + std::to_string(c));
  return labels;
}

LayerSpec random_dense(std::size_t out, std::size_t in, std::mt19937_64& rng) {
  std::normal_distribution<double> weight(0.0, std::sqrt(2.0 / static_cast<double>(in)));
  std::uniform_real_distribution<double> bias(-0.1, 0.1);
  std::vector<double> w(out * in);
  for (double& v : w) v = weight(rng);
  std::vector<double> b(out);
  for (double& v : b) v = bias(rng);
  return LayerSpec::dense(out, in, std::move(w), std::move(b));
}

}  // namespace

Model make_mlp(std::span<const std::size_t> widths, std::uint64_t seed,
               std::string name) {
  if (widths.size() < 2) throw ConfigError("an MLP needs at least input and output widths");
  std::mt19937_64 rng(seed);
  ModelSpec spec;
  spec.name = std::move(name);
  spec.input_shape = {widths.front()};
  spec.class_labels = default_labels(widths.back());
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    spec.layers.push_back(random_dense(widths[i + 1], widths[i], rng));
    if (i + 2 < widths.size()) spec.layers.push_back(LayerSpec::relu());
  }
  spec.stage_boundaries = default_stage_boundaries(spec.layers);
  return Model(std::move(spec));
}

Model make_linear(std::size_t d, std::size_t classes, std::vector<double> weight,
                  std::vector<double> bias, std::string name) {
  ModelSpec spec;
  spec.name = std::move(name);
  spec.input_shape = {d};
  spec.class_labels = default_labels(classes);
  spec.layers.push_back(LayerSpec::dense(classes, d, std::move(weight), std::move(bias)));
  spec.stage_boundaries = {0};
  return Model(std::move(spec));
}

Model make_cnn(const Shape& input_shape, std::size_t channels, std::size_t hidden,
               std::size_t classes, std::uint64_t seed, std::string name) {
  if (input_shape.size() != 3) throw ShapeError("make_cnn needs a {ch, h, w} input");
  std::mt19937_64 rng(seed);
  const std::size_t in_ch = input_shape[0];
  std::normal_distribution<double> kernel(0.0, std::sqrt(2.0 / static_cast<double>(in_ch * 9)));
  std::vector<double> k(channels * in_ch * 9);
  for (double& v : k) v = kernel(rng);
  std::vector<double> kb(channels, 0.0);

  ModelSpec spec;
  spec.name = std::move(name);
  spec.input_shape = input_shape;
  spec.class_labels = default_labels(classes);
  spec.layers.push_back(LayerSpec::conv2d(channels, in_ch, 3, 3, std::move(k), std::move(kb)));
  spec.layers.push_back(LayerSpec::relu());
  spec.layers.push_back(LayerSpec::maxpool2());
  spec.layers.push_back(LayerSpec::flatten());
  const std::size_t pooled =
      channels * ((input_shape[1] - 2) / 2) * ((input_shape[2] - 2) / 2);
  spec.layers.push_back(random_dense(hidden, pooled, rng));
  spec.layers.push_back(LayerSpec::relu());
  spec.layers.push_back(random_dense(classes, hidden, rng));
  spec.stage_boundaries = default_stage_boundaries(spec.layers);
  return Model(std::move(spec));
}

Dataset make_blobs(const std::vector<std::vector<double>>& centers,
                   std::size_t per_class, double spread, std::uint64_t seed) {
  if (centers.empty()) throw ConfigError("make_blobs needs at least one center");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, spread);
  Dataset data;
  const std::size_t d = centers.front().size();
  for (std::size_t n = 0; n < per_class; ++n) {
    for (std::size_t c = 0; c < centers.size(); ++c) {
      std::vector<double> x(d);
      for (std::size_t i = 0; i < d; ++i) x[i] = centers[c][i] + noise(rng);
      data.inputs.emplace_back(Shape{d}, std::move(x));
      data.labels.push_back(c);
    }
  }
  return data;
}

Tensor random_tensor(const Shape& shape, double lo, double hi, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor(shape, std::move(v));
}

}  // namespace interpalg
