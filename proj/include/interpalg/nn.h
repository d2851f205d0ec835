#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "interpalg/tensor.h"

namespace interpalg {

enum class LayerKind { kDense, kRelu, kFlatten, kConv2d, kMaxPool2 };

std::string_view layer_kind_name(LayerKind kind);
// Throws ConfigError for unknown names.
LayerKind parse_layer_kind(std::string_view name);

// One layer of a feed-forward network.
//
// dense:   weight_shape {out, in}, bias {out}. Accepts any input whose element
//          count is `in` (the input is read in row-major order).
// conv2d:  weight_shape {out_ch, in_ch, kh, kw}, bias {out_ch}; valid padding,
//          stride 1, input laid out as {in_ch, h, w}.
// maxpool2: 2x2 window, stride 2, input {ch, h, w}; odd trailing rows/cols drop.
// relu, flatten: no parameters.
struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  Shape weight_shape;
  std::vector<double> weight;
  std::vector<double> bias;

  static LayerSpec dense(std::size_t out, std::size_t in,
                         std::vector<double> weight, std::vector<double> bias);
  static LayerSpec conv2d(std::size_t out_ch, std::size_t in_ch, std::size_t kh,
                          std::size_t kw, std::vector<double> weight,
                          std::vector<double> bias);
  static LayerSpec relu() { return {LayerKind::kRelu, {}, {}, {}}; }
  static LayerSpec flatten() { return {LayerKind::kFlatten, {}, {}, {}}; }
  static LayerSpec maxpool2() { return {LayerKind::kMaxPool2, {}, {}, {}}; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

// Plain description of a network as stored on disk.
//
// Stages partition the layer list: stage s covers the layers after the
// boundary of stage s-1 up to and including layer stage_boundaries[s-1].
// A stage ends after every relu/maxpool2 layer and the last stage ends at the
// final (logit) layer, so stage n-1 is the penultimate representation.
struct ModelSpec {
  std::string name;
  Shape input_shape;
  std::vector<std::string> class_labels;
  std::vector<LayerSpec> layers;
  std::vector<std::size_t> stage_boundaries;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

// Stage boundaries following the "end after each activation" rule.
std::vector<std::size_t> default_stage_boundaries(
    std::span<const LayerSpec> layers);

// A validated, immutable network. Safe to share across threads.
class Model {
 public:
  // Throws ShapeError when parameter shapes do not chain from input_shape,
  // ConfigError when the logit layer or stage boundaries are malformed.
  explicit Model(ModelSpec spec);

  const ModelSpec& spec() const { return spec_; }
  const std::string& name() const { return spec_.name; }
  const Shape& input_shape() const { return spec_.input_shape; }
  std::size_t input_size() const { return numel(spec_.input_shape); }
  std::size_t num_layers() const { return spec_.layers.size(); }
  std::size_t num_classes() const { return spec_.class_labels.size(); }
  std::size_t num_stages() const { return spec_.stage_boundaries.size(); }
  const LayerSpec& layer(std::size_t i) const { return spec_.layers[i]; }

  // Shape entering layer i; layer_input_shape(num_layers()) is the logit shape.
  const Shape& layer_input_shape(std::size_t i) const { return shapes_[i]; }
  // Index of the last layer of 1-based `stage`. Throws RangeError.
  std::size_t stage_end(std::size_t stage) const;
  const Shape& stage_shape(std::size_t stage) const;

 private:
  ModelSpec spec_;
  std::vector<Shape> shapes_;
};

Tensor forward(const Model& model, const Tensor& x);
// Activation at the end of 1-based stage `stage` (1 <= stage <= n).
Tensor forward_to_stage(const Model& model, const Tensor& x, std::size_t stage);
// d logit_cls / dx by reverse-mode accumulation.
Tensor gradient(const Model& model, const Tensor& x, std::size_t cls);
std::size_t predict(const Model& model, const Tensor& x);

// Flat-buffer variants used by the attribution kernels. The caller guarantees
// that `x` has model.input_size() elements.
double logit(const Model& model, std::span<const double> x, std::size_t cls);
std::vector<double> input_gradient(const Model& model, std::span<const double> x,
                                   std::size_t cls);
// Runs layers [first, last) on an activation shaped like layer_input_shape(first).
std::vector<double> run_layers(const Model& model, std::size_t first,
                               std::size_t last, std::vector<double> activation);

struct Dataset {
  std::vector<Tensor> inputs;
  std::vector<std::size_t> labels;
};

// Checks sizes, shapes against `input_shape` and labels < num_classes.
void validate_dataset(const Dataset& data, const Shape& input_shape,
                      std::size_t num_classes);

struct HeadHyper {
  std::size_t epochs = 200;
  double learning_rate = 0.05;
  std::uint64_t seed = 0;
};

// Full-batch gradient descent on softmax cross-entropy. Weights start uniform
// in [-0.05, 0.05] drawn from `hyper.seed`; biases start at zero.
LayerSpec train_linear_head(std::span<const Tensor> features,
                            std::span<const std::size_t> labels,
                            std::size_t num_classes, const HeadHyper& hyper);
double head_accuracy(const LayerSpec& head, std::span<const Tensor> features,
                     std::span<const std::size_t> labels);

struct Truncation {
  Model model;
  double train_accuracy;
};

// Stages 1..stage of `model`, then flatten and a freshly trained dense head.
// Requires 1 <= stage < num_stages().
Truncation truncate(const Model& model, std::size_t stage, const Dataset& data,
                    const HeadHyper& hyper);

}  // namespace interpalg
