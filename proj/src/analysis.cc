#include "interpalg/analysis.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "interpalg/attribution.h"
#include "interpalg/error.h"

namespace interpalg {

Tensor nullify(const Tensor& x, const Window& w, const Tensor& xbar) {
  require_same_shape(x.shape(), xbar.shape(), "nullify baseline");
  w.check_bounds(x.size());
  return masked_input(x, xbar, w.complement(x.size()).indices());
}

Tensor substitute(const Tensor& x, const Window& w, const Tensor& src) {
  require_same_shape(x.shape(), src.shape(), "substitute source");
  w.check_bounds(x.size());
  std::vector<double> out = x.values();
  for (std::size_t i : w.indices()) out[i] = src[i];
  return Tensor(x.shape(), std::move(out));
}

std::string_view transform_op_name(TransformOp op) {
  switch (op) {
    case TransformOp::kScale:
      return "scale";
    case TransformOp::kRotate90:
      return "rotate90";
    case TransformOp::kShift:
      return "shift";
  }
  return "?";
}

TransformOp parse_transform_op(std::string_view name) {
  if (name == "scale") return TransformOp::kScale;
  if (name == "rotate90") return TransformOp::kRotate90;
  if (name == "shift") return TransformOp::kShift;
  throw ConfigError("unknown transform '" + std::string(name) +
                    "' (expected scale, rotate90 or shift)");
}

namespace {

Grid spatial_grid(const Shape& shape, TransformOp op) {
  if (shape.size() != 2 && shape.size() != 3) {
    throw ShapeError(std::string(transform_op_name(op)) + " needs an {h, w} or {ch, h, w} input, got " +
                     shape_to_string(shape));
  }
  return grid_of(shape);
}

Tensor rotate90(const Tensor& x, int turns) {
  const Grid g = spatial_grid(x.shape(), TransformOp::kRotate90);
  if (turns < 1 || turns > 3) {
    throw ConfigError("rotate90 quarter_turns must be 1, 2 or 3, got " + std::to_string(turns));
  }
  if (turns % 2 == 1 && g.rows != g.cols) {
    throw ShapeError("rotate90 by an odd number of quarter-turns needs a square grid, got " +
                     shape_to_string(x.shape()));
  }
  const std::size_t n_r = g.rows;
  const std::size_t n_c = g.cols;
  std::vector<double> out(x.size());
  for (std::size_t ch = 0; ch < g.channels; ++ch) {
    const std::size_t base = ch * n_r * n_c;
    for (std::size_t r = 0; r < n_r; ++r) {
      for (std::size_t c = 0; c < n_c; ++c) {
        std::size_t sr = r;
        std::size_t sc = c;
        switch (turns) {
          case 1:  // counter-clockwise
            sr = c;
            sc = n_c - 1 - r;
            break;
          case 2:
            sr = n_r - 1 - r;
            sc = n_c - 1 - c;
            break;
          case 3:
            sr = n_r - 1 - c;
            sc = r;
            break;
        }
        out[base + r * n_c + c] = x[base + sr * n_c + sc];
      }
    }
  }
  return Tensor(x.shape(), std::move(out));
}

Tensor shift(const Tensor& x, long long dr, long long dc) {
  const Grid g = spatial_grid(x.shape(), TransformOp::kShift);
  const auto n_r = static_cast<long long>(g.rows);
  const auto n_c = static_cast<long long>(g.cols);
  std::vector<double> out(x.size(), 0.0);
  for (std::size_t ch = 0; ch < g.channels; ++ch) {
    const std::size_t base = ch * g.rows * g.cols;
    for (long long r = 0; r < n_r; ++r) {
      const long long sr = r - dr;
      if (sr < 0 || sr >= n_r) continue;
      for (long long c = 0; c < n_c; ++c) {
        const long long sc = c - dc;
        if (sc < 0 || sc >= n_c) continue;
        out[base + static_cast<std::size_t>(r * n_c + c)] =
            x[base + static_cast<std::size_t>(sr * n_c + sc)];
      }
    }
  }
  return Tensor(x.shape(), std::move(out));
}

}  // namespace

Tensor transform(const Tensor& x, const TransformSpec& spec) {
  switch (spec.op) {
    case TransformOp::kScale: {
      if (!std::isfinite(spec.factor)) throw ConfigError("scale factor must be finite");
      std::vector<double> out = x.values();
      for (double& v : out) v *= spec.factor;
      return Tensor(x.shape(), std::move(out));
    }
    case TransformOp::kRotate90:
      return rotate90(x, spec.quarter_turns);
    case TransformOp::kShift:
      return shift(x, spec.dr, spec.dc);
  }
  throw ConfigError("unknown transform");
}

std::string_view edit_kind_name(EditKind kind) {
  switch (kind) {
    case EditKind::kNullify:
      return "nullify";
    case EditKind::kSubstitute:
      return "substitute";
    case EditKind::kTransform:
      return "transform";
  }
  return "?";
}

EditKind parse_edit_kind(std::string_view name) {
  if (name == "nullify") return EditKind::kNullify;
  if (name == "substitute") return EditKind::kSubstitute;
  if (name == "transform") return EditKind::kTransform;
  throw ConfigError("unknown edit '" + std::string(name) +
                    "' (expected nullify, substitute or transform)");
}

void Edit::validate() const {
  if (kind == EditKind::kSubstitute && !source_input) {
    throw ConfigError("substitute edit requires source_input");
  }
  if (kind == EditKind::kTransform && !transform) {
    throw ConfigError("transform edit requires a transform spec");
  }
}

Tensor apply_edit(const Edit& edit, const Tensor& x, const Tensor& xbar, const Tensor* source) {
  edit.validate();
  switch (edit.kind) {
    case EditKind::kNullify:
      return nullify(x, edit.window, xbar);
    case EditKind::kSubstitute:
      if (source == nullptr) {
        throw NotFoundError("substitute source '" + *edit.source_input + "' was not resolved");
      }
      return substitute(x, edit.window, *source);
    case EditKind::kTransform:
      return transform(x, *edit.transform);
  }
  throw ConfigError("unknown edit");
}

Representation deep_representation(const Model& model, const Dataset& data, std::size_t cls) {
  validate_dataset(data, model.input_shape(), model.num_classes());
  if (cls >= model.num_classes()) {
    throw RangeError("class " + std::to_string(cls) + " is outside [0, " +
                     std::to_string(model.num_classes()) + ")");
  }
  if (model.num_stages() < 2) {
    throw RangeError("model '" + model.name() + "' has a single stage and no penultimate stage");
  }
  Representation rep;
  rep.stage = model.num_stages() - 1;
  rep.matrix.cols = numel(model.stage_shape(rep.stage));
  for (std::size_t i = 0; i < data.inputs.size(); ++i) {
    if (data.labels[i] != cls) continue;
    const Tensor a = forward_to_stage(model, data.inputs[i], rep.stage);
    rep.matrix.data.insert(rep.matrix.data.end(), a.values().begin(), a.values().end());
    rep.examples.push_back(i);
  }
  rep.matrix.rows = rep.examples.size();
  if (rep.matrix.rows == 0) {
    throw ConfigError("class " + std::to_string(cls) + " has no examples in the dataset");
  }
  return rep;
}

namespace {

double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double e : v) s += e * e;
  return std::sqrt(s);
}

// u = M'(M v) for the centered matrix.
std::vector<double> gram_apply(const Matrix& m, const std::vector<double>& v) {
  std::vector<double> u(m.cols, 0.0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double* row = m.data.data() + r * m.cols;
    double dot = 0.0;
    for (std::size_t c = 0; c < m.cols; ++c) dot += row[c] * v[c];
    for (std::size_t c = 0; c < m.cols; ++c) u[c] += dot * row[c];
  }
  return u;
}

double rayleigh_residual(const std::vector<double>& u, const std::vector<double>& v) {
  const double un = norm(u);
  if (un == 0.0) return 0.0;
  double lambda = 0.0;
  for (std::size_t c = 0; c < v.size(); ++c) lambda += v[c] * u[c];
  double s = 0.0;
  for (std::size_t c = 0; c < v.size(); ++c) {
    const double d = u[c] - lambda * v[c];
    s += d * d;
  }
  return std::sqrt(s) / un;
}

}  // namespace

SpectralReport spectral_signature(const Matrix& r, const SpectralOptions& opts) {
  if (r.rows < 2) {
    throw ConfigError("spectral signature needs at least 2 rows, got " + std::to_string(r.rows));
  }
  if (r.cols == 0 || r.data.size() != r.rows * r.cols) {
    throw ShapeError("representation matrix is " + std::to_string(r.rows) + "x" +
                     std::to_string(r.cols) + " with " + std::to_string(r.data.size()) +
                     " values");
  }
  if (std::isnan(opts.k)) throw ConfigError("threshold k must not be NaN");
  if (!(opts.tolerance > 0.0) || opts.max_iterations == 0) {
    throw ConfigError("power iteration needs a positive tolerance and iteration budget");
  }

  Matrix m = r;
  std::vector<double> mean(m.cols, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t c = 0; c < m.cols; ++c) mean[c] += m.at(i, c);
  }
  for (double& v : mean) v /= static_cast<double>(m.rows);
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t c = 0; c < m.cols; ++c) m.at(i, c) -= mean[c];
  }

  // Start from the centered row of largest norm; ties go to the first row.
  std::size_t start = 0;
  double best = -1.0;
  for (std::size_t i = 0; i < m.rows; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < m.cols; ++c) s += m.at(i, c) * m.at(i, c);
    if (s > best) {
      best = s;
      start = i;
    }
  }

  SpectralReport rep;
  rep.threshold_k = opts.k;
  std::vector<double> v(m.cols, 0.0);
  if (best == 0.0) {
    v[0] = 1.0;
  } else {
    for (std::size_t c = 0; c < m.cols; ++c) v[c] = m.at(start, c) / std::sqrt(best);
    bool converged = false;
    for (std::size_t it = 1; it <= opts.max_iterations; ++it) {
      std::vector<double> u = gram_apply(m, v);
      const double un = norm(u);
      if (un == 0.0) {
        converged = true;
        rep.iterations = it;
        break;
      }
      for (std::size_t c = 0; c < m.cols; ++c) v[c] = u[c] / un;
      rep.residual = rayleigh_residual(gram_apply(m, v), v);
      rep.iterations = it;
      if (rep.residual <= opts.tolerance) {
        converged = true;
        break;
      }
    }
    if (!converged) {
      throw ConvergenceError("power iteration did not converge in " +
                                 std::to_string(opts.max_iterations) +
                                 " iterations (residual " + std::to_string(rep.residual) + ")",
                             rep.residual);
    }
  }
  rep.direction = v;

  rep.scores.resize(m.rows);
  for (std::size_t i = 0; i < m.rows; ++i) {
    double dot = 0.0;
    for (std::size_t c = 0; c < m.cols; ++c) dot += m.at(i, c) * v[c];
    rep.scores[i] = opts.square_scores ? dot * dot : std::abs(dot);
  }
  const double n = static_cast<double>(m.rows);
  rep.mean = std::accumulate(rep.scores.begin(), rep.scores.end(), 0.0) / n;
  double var = 0.0;
  for (double s : rep.scores) var += (s - rep.mean) * (s - rep.mean);
  rep.std = std::sqrt(var / n);
  const double cut = rep.mean + opts.k * rep.std;
  for (std::size_t i = 0; i < m.rows; ++i) {
    if (rep.scores[i] > cut) rep.flagged.push_back(i);
  }
  return rep;
}

PlantedFixture make_planted_outliers(std::uint64_t seed, std::size_t inliers,
                                     std::size_t outliers, std::size_t dims) {
  if (dims == 0) throw ConfigError("planted fixture needs at least one dimension");
  const std::size_t rows = inliers + outliers;
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(rows);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  PlantedFixture fx;
  fx.planted.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(outliers));
  std::sort(fx.planted.begin(), fx.planted.end());

  std::normal_distribution<double> noise(0.0, std::sqrt(0.1));
  fx.matrix.rows = rows;
  fx.matrix.cols = dims;
  fx.matrix.data.resize(rows * dims);
  for (double& v : fx.matrix.data) v = noise(rng);
  for (std::size_t i : fx.planted) fx.matrix.at(i, 0) += 5.0;
  return fx;
}

}  // namespace interpalg
