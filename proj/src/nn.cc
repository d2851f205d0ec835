#include "interpalg/nn.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "interpalg/error.h"

namespace interpalg {

namespace {

constexpr std::string_view kKindNames[] = {"dense", "relu", "flatten", "conv2d",
                                           "maxpool2"};

Shape layer_output_shape(const LayerSpec& layer, const Shape& in,
                         std::size_t index) {
  auto where = [&] { return "layer " + std::to_string(index) + " (" +
                            std::string(layer_kind_name(layer.kind)) + ")"; };
  switch (layer.kind) {
    case LayerKind::kDense: {
      if (layer.weight_shape.size() != 2) {
        throw ShapeError(where() + ": dense weight must be 2-D");
      }
      const std::size_t out = layer.weight_shape[0];
      const std::size_t in_dim = layer.weight_shape[1];
      if (layer.weight.size() != out * in_dim || layer.bias.size() != out) {
        throw ShapeError(where() + ": parameter sizes do not match weight shape");
      }
      if (numel(in) != in_dim) {
        throw ShapeError(where() + ": expects " + std::to_string(in_dim) +
                         " inputs, previous layer yields " + shape_to_string(in));
      }
      return {out};
    }
    case LayerKind::kRelu:
      return in;
    case LayerKind::kFlatten:
      return {numel(in)};
    case LayerKind::kConv2d: {
      if (layer.weight_shape.size() != 4) {
        throw ShapeError(where() + ": conv2d kernel must be 4-D");
      }
      const auto& k = layer.weight_shape;
      if (layer.weight.size() != numel(k) || layer.bias.size() != k[0]) {
        throw ShapeError(where() + ": parameter sizes do not match kernel shape");
      }
      if (in.size() != 3 || in[0] != k[1] || in[1] < k[2] || in[2] < k[3]) {
        throw ShapeError(where() + ": kernel " + shape_to_string(k) +
                         " does not fit input " + shape_to_string(in));
      }
      return {k[0], in[1] - k[2] + 1, in[2] - k[3] + 1};
    }
    case LayerKind::kMaxPool2:
      if (in.size() != 3 || in[1] < 2 || in[2] < 2) {
        throw ShapeError(where() + ": maxpool2 needs a {ch, h>=2, w>=2} input, got " +
                         shape_to_string(in));
      }
      return {in[0], in[1] / 2, in[2] / 2};
  }
  throw ConfigError(where() + ": unknown layer kind");
}

std::vector<double> apply_layer(const LayerSpec& layer, const Shape& in_shape,
                                const std::vector<double>& in) {
  switch (layer.kind) {
    case LayerKind::kDense: {
      const std::size_t out = layer.weight_shape[0];
      const std::size_t n = layer.weight_shape[1];
      std::vector<double> y(out);
      for (std::size_t o = 0; o < out; ++o) {
        const double* row = layer.weight.data() + o * n;
        double acc = layer.bias[o];
        for (std::size_t i = 0; i < n; ++i) acc += row[i] * in[i];
        y[o] = acc;
      }
      return y;
    }
    case LayerKind::kRelu: {
      std::vector<double> y(in.size());
      for (std::size_t i = 0; i < in.size(); ++i) y[i] = in[i] > 0.0 ? in[i] : 0.0;
      return y;
    }
    case LayerKind::kFlatten:
      return in;
    case LayerKind::kConv2d: {
      const auto& k = layer.weight_shape;
      const std::size_t oc = k[0], ic = k[1], kh = k[2], kw = k[3];
      const std::size_t h = in_shape[1], w = in_shape[2];
      const std::size_t oh = h - kh + 1, ow = w - kw + 1;
      std::vector<double> y(oc * oh * ow);
      for (std::size_t o = 0; o < oc; ++o) {
        for (std::size_t r = 0; r < oh; ++r) {
          for (std::size_t c = 0; c < ow; ++c) {
            double acc = layer.bias[o];
            for (std::size_t ch = 0; ch < ic; ++ch) {
              for (std::size_t dr = 0; dr < kh; ++dr) {
                for (std::size_t dc = 0; dc < kw; ++dc) {
                  acc += layer.weight[((o * ic + ch) * kh + dr) * kw + dc] *
                         in[(ch * h + r + dr) * w + c + dc];
                }
              }
            }
            y[(o * oh + r) * ow + c] = acc;
          }
        }
      }
      return y;
    }
    case LayerKind::kMaxPool2: {
      const std::size_t ch = in_shape[0], h = in_shape[1], w = in_shape[2];
      const std::size_t oh = h / 2, ow = w / 2;
      std::vector<double> y(ch * oh * ow);
      for (std::size_t k = 0; k < ch; ++k) {
        for (std::size_t r = 0; r < oh; ++r) {
          for (std::size_t c = 0; c < ow; ++c) {
            const double* base = in.data() + (k * h + 2 * r) * w + 2 * c;
            y[(k * oh + r) * ow + c] =
                std::max(std::max(base[0], base[1]), std::max(base[w], base[w + 1]));
          }
        }
      }
      return y;
    }
  }
  return {};
}

// Maps the gradient w.r.t. a layer's output to the gradient w.r.t. its input.
std::vector<double> backprop_layer(const LayerSpec& layer, const Shape& in_shape,
                                   const std::vector<double>& in,
                                   const std::vector<double>& grad_out) {
  switch (layer.kind) {
    case LayerKind::kDense: {
      const std::size_t out = layer.weight_shape[0];
      const std::size_t n = layer.weight_shape[1];
      std::vector<double> g(n, 0.0);
      for (std::size_t o = 0; o < out; ++o) {
        const double go = grad_out[o];
        if (go == 0.0) continue;
        const double* row = layer.weight.data() + o * n;
        for (std::size_t i = 0; i < n; ++i) g[i] += row[i] * go;
      }
      return g;
    }
    case LayerKind::kRelu: {
      std::vector<double> g(in.size());
      for (std::size_t i = 0; i < in.size(); ++i) g[i] = in[i] > 0.0 ? grad_out[i] : 0.0;
      return g;
    }
    case LayerKind::kFlatten:
      return grad_out;
    case LayerKind::kConv2d: {
      const auto& k = layer.weight_shape;
      const std::size_t oc = k[0], ic = k[1], kh = k[2], kw = k[3];
      const std::size_t h = in_shape[1], w = in_shape[2];
      const std::size_t oh = h - kh + 1, ow = w - kw + 1;
      std::vector<double> g(in.size(), 0.0);
      for (std::size_t o = 0; o < oc; ++o) {
        for (std::size_t r = 0; r < oh; ++r) {
          for (std::size_t c = 0; c < ow; ++c) {
            const double go = grad_out[(o * oh + r) * ow + c];
            if (go == 0.0) continue;
            for (std::size_t ch = 0; ch < ic; ++ch) {
              for (std::size_t dr = 0; dr < kh; ++dr) {
                for (std::size_t dc = 0; dc < kw; ++dc) {
                  g[(ch * h + r + dr) * w + c + dc] +=
                      layer.weight[((o * ic + ch) * kh + dr) * kw + dc] * go;
                }
              }
            }
          }
        }
      }
      return g;
    }
    case LayerKind::kMaxPool2: {
      const std::size_t ch = in_shape[0], h = in_shape[1], w = in_shape[2];
      const std::size_t oh = h / 2, ow = w / 2;
      std::vector<double> g(in.size(), 0.0);
      for (std::size_t k = 0; k < ch; ++k) {
        for (std::size_t r = 0; r < oh; ++r) {
          for (std::size_t c = 0; c < ow; ++c) {
            const std::size_t top = (k * h + 2 * r) * w + 2 * c;
            const std::size_t cand[4] = {top, top + 1, top + w, top + w + 1};
            std::size_t best = cand[0];
            for (std::size_t idx : cand) {
              if (in[idx] > in[best]) best = idx;
            }
            g[best] += grad_out[(k * oh + r) * ow + c];
          }
        }
      }
      return g;
    }
  }
  return {};
}

void require_input(const Model& model, const Tensor& x) {
  require_same_shape(model.input_shape(), x.shape(), "model input");
}

void require_class(const Model& model, std::size_t cls) {
  if (cls >= model.num_classes()) {
    throw RangeError("class index " + std::to_string(cls) + " out of range for " +
                     std::to_string(model.num_classes()) + " classes");
  }
}

std::vector<double> flat_features(const Tensor& t) { return t.values(); }

std::vector<double> softmax(std::vector<double> z) {
  const double mx = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : z) v /= sum;
  return z;
}

}  // namespace

std::string_view layer_kind_name(LayerKind kind) {
  return kKindNames[static_cast<int>(kind)];
}

LayerKind parse_layer_kind(std::string_view name) {
  for (int i = 0; i < 5; ++i) {
    if (kKindNames[i] == name) return static_cast<LayerKind>(i);
  }
  throw ConfigError("unknown layer kind '" + std::string(name) + "'");
}

LayerSpec LayerSpec::dense(std::size_t out, std::size_t in,
                           std::vector<double> weight, std::vector<double> bias) {
  return {LayerKind::kDense, {out, in}, std::move(weight), std::move(bias)};
}

LayerSpec LayerSpec::conv2d(std::size_t out_ch, std::size_t in_ch,
                            std::size_t kh, std::size_t kw,
                            std::vector<double> weight, std::vector<double> bias) {
  return {LayerKind::kConv2d, {out_ch, in_ch, kh, kw}, std::move(weight),
          std::move(bias)};
}

std::vector<std::size_t> default_stage_boundaries(
    std::span<const LayerSpec> layers) {
  std::vector<std::size_t> bounds;
  for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
    if (layers[i].kind == LayerKind::kRelu || layers[i].kind == LayerKind::kMaxPool2) {
      bounds.push_back(i);
    }
  }
  if (!layers.empty()) bounds.push_back(layers.size() - 1);
  return bounds;
}

Model::Model(ModelSpec spec) : spec_(std::move(spec)) {
  if (spec_.layers.empty()) throw ConfigError("model '" + spec_.name + "' has no layers");
  if (spec_.input_shape.empty() || numel(spec_.input_shape) == 0) {
    throw ShapeError("model '" + spec_.name + "' has an empty input shape");
  }
  shapes_.reserve(spec_.layers.size() + 1);
  shapes_.push_back(spec_.input_shape);
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    shapes_.push_back(layer_output_shape(spec_.layers[i], shapes_.back(), i));
    for (double v : spec_.layers[i].weight) {
      if (!std::isfinite(v)) throw ConfigError("non-finite weight in layer " + std::to_string(i));
    }
    for (double v : spec_.layers[i].bias) {
      if (!std::isfinite(v)) throw ConfigError("non-finite bias in layer " + std::to_string(i));
    }
  }
  const LayerSpec& last = spec_.layers.back();
  if (last.kind != LayerKind::kDense) {
    throw ConfigError("model '" + spec_.name + "': final layer must be dense");
  }
  if (last.weight_shape[0] != spec_.class_labels.size()) {
    throw ConfigError("model '" + spec_.name + "': final layer has " +
                      std::to_string(last.weight_shape[0]) + " outputs but " +
                      std::to_string(spec_.class_labels.size()) + " class labels");
  }
  const auto& b = spec_.stage_boundaries;
  if (b.empty() || b.back() != spec_.layers.size() - 1) {
    throw ConfigError("model '" + spec_.name +
                      "': stage boundaries must end at the final layer");
  }
  for (std::size_t i = 1; i < b.size(); ++i) {
    if (b[i] <= b[i - 1]) {
      throw ConfigError("model '" + spec_.name +
                        "': stage boundaries must be strictly increasing");
    }
  }
}

std::size_t Model::stage_end(std::size_t stage) const {
  if (stage < 1 || stage > num_stages()) {
    throw RangeError("stage " + std::to_string(stage) + " out of range 1.." +
                     std::to_string(num_stages()) + " for model '" + name() + "'");
  }
  return spec_.stage_boundaries[stage - 1];
}

const Shape& Model::stage_shape(std::size_t stage) const {
  return shapes_[stage_end(stage) + 1];
}

std::vector<double> run_layers(const Model& model, std::size_t first,
                               std::size_t last, std::vector<double> activation) {
  for (std::size_t i = first; i < last; ++i) {
    activation = apply_layer(model.layer(i), model.layer_input_shape(i), activation);
  }
  return activation;
}

double logit(const Model& model, std::span<const double> x, std::size_t cls) {
  return run_layers(model, 0, model.num_layers(),
                    std::vector<double>(x.begin(), x.end()))[cls];
}

std::vector<double> input_gradient(const Model& model, std::span<const double> x,
                                   std::size_t cls) {
  const std::size_t n = model.num_layers();
  std::vector<std::vector<double>> acts;
  acts.reserve(n);
  acts.emplace_back(x.begin(), x.end());
  for (std::size_t i = 0; i + 1 < n; ++i) {
    acts.push_back(apply_layer(model.layer(i), model.layer_input_shape(i), acts.back()));
  }
  std::vector<double> g(model.num_classes(), 0.0);
  g[cls] = 1.0;
  for (std::size_t i = n; i-- > 0;) {
    g = backprop_layer(model.layer(i), model.layer_input_shape(i), acts[i], g);
  }
  return g;
}

Tensor forward(const Model& model, const Tensor& x) {
  require_input(model, x);
  return Tensor({model.num_classes()},
                run_layers(model, 0, model.num_layers(), x.values()));
}

Tensor forward_to_stage(const Model& model, const Tensor& x, std::size_t stage) {
  require_input(model, x);
  const std::size_t end = model.stage_end(stage);
  return Tensor(model.layer_input_shape(end + 1),
                run_layers(model, 0, end + 1, x.values()));
}

Tensor gradient(const Model& model, const Tensor& x, std::size_t cls) {
  require_input(model, x);
  require_class(model, cls);
  return Tensor(x.shape(), input_gradient(model, x.data(), cls));
}

std::size_t predict(const Model& model, const Tensor& x) {
  const Tensor z = forward(model, x);
  return static_cast<std::size_t>(
      std::max_element(z.values().begin(), z.values().end()) - z.values().begin());
}

void validate_dataset(const Dataset& data, const Shape& input_shape,
                      std::size_t num_classes) {
  if (data.inputs.size() != data.labels.size()) {
    throw ShapeError("dataset has " + std::to_string(data.inputs.size()) +
                     " inputs but " + std::to_string(data.labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < data.inputs.size(); ++i) {
    require_same_shape(input_shape, data.inputs[i].shape(), "dataset input");
    if (data.labels[i] >= num_classes) {
      throw RangeError("dataset label " + std::to_string(data.labels[i]) +
                       " at row " + std::to_string(i) + " exceeds " +
                       std::to_string(num_classes) + " classes");
    }
  }
}

LayerSpec train_linear_head(std::span<const Tensor> features,
                            std::span<const std::size_t> labels,
                            std::size_t num_classes, const HeadHyper& hyper) {
  if (features.empty()) throw ConfigError("cannot train a head on an empty dataset");
  if (features.size() != labels.size()) {
    throw ShapeError("feature/label length mismatch: " +
                     std::to_string(features.size()) + " vs " +
                     std::to_string(labels.size()));
  }
  if (num_classes == 0) throw ConfigError("head needs at least one class");
  if (!(hyper.learning_rate > 0.0) || !std::isfinite(hyper.learning_rate)) {
    throw ConfigError("learning rate must be positive");
  }
  const std::size_t dim = features[0].size();
  for (std::size_t i = 0; i < features.size(); ++i) {
    require_same_shape(features[0].shape(), features[i].shape(), "head feature");
    if (labels[i] >= num_classes) {
      throw RangeError("label " + std::to_string(labels[i]) + " out of range for " +
                       std::to_string(num_classes) + " classes");
    }
  }

  std::mt19937_64 rng(hyper.seed);
  std::uniform_real_distribution<double> init(-0.05, 0.05);
  std::vector<double> w(num_classes * dim);
  for (double& v : w) v = init(rng);
  std::vector<double> b(num_classes, 0.0);

  const double scale = 1.0 / static_cast<double>(features.size());
  std::vector<double> gw(w.size());
  std::vector<double> gb(num_classes);
  std::vector<double> z(num_classes);
  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::fill(gw.begin(), gw.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
    for (std::size_t n = 0; n < features.size(); ++n) {
      const auto x = features[n].data();
      for (std::size_t c = 0; c < num_classes; ++c) {
        double acc = b[c];
        for (std::size_t i = 0; i < dim; ++i) acc += w[c * dim + i] * x[i];
        z[c] = acc;
      }
      std::vector<double> p = softmax(z);
      p[labels[n]] -= 1.0;
      for (std::size_t c = 0; c < num_classes; ++c) {
        gb[c] += p[c];
        for (std::size_t i = 0; i < dim; ++i) gw[c * dim + i] += p[c] * x[i];
      }
    }
    for (std::size_t k = 0; k < w.size(); ++k) w[k] -= hyper.learning_rate * scale * gw[k];
    for (std::size_t c = 0; c < num_classes; ++c) b[c] -= hyper.learning_rate * scale * gb[c];
  }
  return LayerSpec::dense(num_classes, dim, std::move(w), std::move(b));
}

double head_accuracy(const LayerSpec& head, std::span<const Tensor> features,
                     std::span<const std::size_t> labels) {
  if (features.empty()) return 0.0;
  const std::size_t classes = head.weight_shape[0];
  const std::size_t dim = head.weight_shape[1];
  std::size_t correct = 0;
  for (std::size_t n = 0; n < features.size(); ++n) {
    if (features[n].size() != dim) throw ShapeError("feature size does not match head");
    std::size_t best = 0;
    double best_z = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      double acc = head.bias[c];
      for (std::size_t i = 0; i < dim; ++i) acc += head.weight[c * dim + i] * features[n][i];
      if (c == 0 || acc > best_z) {
        best_z = acc;
        best = c;
      }
    }
    if (best == labels[n]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(features.size());
}

Truncation truncate(const Model& model, std::size_t stage, const Dataset& data,
                    const HeadHyper& hyper) {
  if (stage < 1 || stage >= model.num_stages()) {
    throw RangeError("truncation stage " + std::to_string(stage) +
                     " out of range 1.." + std::to_string(model.num_stages() - 1) +
                     " for model '" + model.name() +
                     "' (the last stage needs no truncation)");
  }
  validate_dataset(data, model.input_shape(), model.num_classes());

  std::vector<Tensor> features;
  features.reserve(data.inputs.size());
  for (const Tensor& x : data.inputs) {
    Tensor a = forward_to_stage(model, x, stage);
    features.emplace_back(Shape{a.size()}, flat_features(a));
  }
  LayerSpec head = train_linear_head(features, data.labels, model.num_classes(), hyper);
  const double acc = head_accuracy(head, features, data.labels);

  ModelSpec spec;
  spec.name = model.name() + "@" + std::to_string(stage);
  spec.input_shape = model.input_shape();
  spec.class_labels = model.spec().class_labels;
  const std::size_t end = model.stage_end(stage);
  spec.layers.assign(model.spec().layers.begin(),
                     model.spec().layers.begin() + static_cast<std::ptrdiff_t>(end + 1));
  spec.layers.push_back(LayerSpec::flatten());
  spec.layers.push_back(std::move(head));
  spec.stage_boundaries.assign(model.spec().stage_boundaries.begin(),
                               model.spec().stage_boundaries.begin() +
                                   static_cast<std::ptrdiff_t>(stage));
  spec.stage_boundaries.push_back(spec.layers.size() - 1);
  return {Model(std::move(spec)), acc};
}

}  // namespace interpalg
