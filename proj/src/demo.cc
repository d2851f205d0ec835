#include "interpalg/demo.h"

#include <random>

#include "interpalg/error.h"
#include "interpalg/generate.h"

namespace interpalg {

namespace {

constexpr std::size_t kSide = 8;

Model identity_plus_constant(std::size_t d) {
  ModelSpec spec;
  spec.name = "planted";
  spec.input_shape = {d};
  spec.class_labels = {"class0", "class1"};
  std::vector<double> eye(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) eye[i * d + i] = 1.0;
  spec.layers.push_back(LayerSpec::dense(d, d, eye, std::vector<double>(d, 100.0)));
  spec.layers.push_back(LayerSpec::relu());
  spec.layers.push_back(LayerSpec::dense(2, d, std::vector<double>(2 * d, 0.0), {0.0, 0.0}));
  spec.stage_boundaries = default_stage_boundaries(spec.layers);
  return Model(std::move(spec));
}

}  // namespace

Tensor bar_image(std::size_t cls, std::size_t pos, double noise, std::uint64_t seed) {
  if (cls > 2) throw RangeError("bar images have classes 0, 1 and 2");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, noise);
  std::vector<double> v(kSide * kSide, 0.0);
  for (std::size_t i = 0; i < kSide; ++i) {
    std::size_t r = pos % kSide, c = i;
    if (cls == 1) std::swap(r, c);
    if (cls == 2) r = c = i;
    v[r * kSide + c] = 1.0;
  }
  if (noise > 0.0) {
    for (double& e : v) e += n(rng);
  }
  return Tensor({kSide, kSide}, std::move(v));
}

DemoBundle make_demo(std::uint64_t seed) {
  Dataset data;
  std::mt19937_64 rng(seed);
  for (std::size_t cls = 0; cls < 3; ++cls) {
    for (std::size_t k = 0; k < 30; ++k) {
      data.inputs.push_back(bar_image(cls, rng() % kSide, 0.1, rng()));
      data.labels.push_back(cls);
    }
  }
  const std::size_t widths[] = {kSide * kSide, 32, 16, 3};
  ModelSpec spec = make_mlp(widths, seed + 1, "demo").spec();
  spec.input_shape = {kSide, kSide};
  spec.class_labels = {"horizontal", "vertical", "diagonal"};
  const Model base(std::move(spec));
  ModelSpec trained = truncate(base, 2, data, HeadHyper{1000, 0.2, seed}).model.spec();
  trained.name = "demo";

  PlantedFixture planted = make_planted_outliers(seed);
  Dataset planted_data;
  const std::size_t cols = planted.matrix.cols;
  for (std::size_t r = 0; r < planted.matrix.rows; ++r) {
    const auto row = planted.matrix.data.begin() + static_cast<std::ptrdiff_t>(r * cols);
    planted_data.inputs.emplace_back(Shape{cols},
                                     std::vector<double>(row, row + static_cast<std::ptrdiff_t>(cols)));
    planted_data.labels.push_back(0);
  }
  return DemoBundle{Model(std::move(trained)),
                    std::move(data),
                    bar_image(0, 2, 0.0, 0),
                    bar_image(1, 5, 0.0, 0),
                    identity_plus_constant(planted.matrix.cols),
                    std::move(planted_data),
                    std::move(planted)};
}

}  // namespace interpalg
