#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "interpalg/nn.h"
#include "interpalg/tensor.h"
#include "interpalg/window.h"

namespace interpalg {

// Inside `w` becomes the baseline; everything else keeps x.
Tensor nullify(const Tensor& x, const Window& w, const Tensor& xbar);
// Inside `w` is copied from `src`; everything else keeps x.
Tensor substitute(const Tensor& x, const Window& w, const Tensor& src);

enum class TransformOp { kScale, kRotate90, kShift };

std::string_view transform_op_name(TransformOp op);
TransformOp parse_transform_op(std::string_view name);

struct TransformSpec {
  TransformOp op = TransformOp::kScale;
  double factor = 1.0;     // scale
  int quarter_turns = 1;   // rotate90, counter-clockwise, 1..3
  long long dr = 0;        // shift rows (positive moves content down)
  long long dc = 0;        // shift cols (positive moves content right)

  friend bool operator==(const TransformSpec&, const TransformSpec&) = default;
};

// scale: x * factor. rotate90/shift act on the 2-D grid of every channel of an
// {h, w} or {ch, h, w} input; vacated cells become 0. An odd number of
// quarter-turns needs a square grid so the shape is preserved.
Tensor transform(const Tensor& x, const TransformSpec& spec);

enum class EditKind { kNullify, kSubstitute, kTransform };

std::string_view edit_kind_name(EditKind kind);
EditKind parse_edit_kind(std::string_view name);

struct Edit {
  EditKind kind = EditKind::kNullify;
  Window window;
  std::optional<std::string> source_input;  // substitute
  std::optional<TransformSpec> transform;   // transform

  // Throws ConfigError when the fields required by `kind` are missing.
  void validate() const;
};

// Applies `edit` to x. `source` is the resolved source_input of a substitute.
Tensor apply_edit(const Edit& edit, const Tensor& x, const Tensor& xbar,
                  const Tensor* source = nullptr);

// Dense row-major matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
};

struct Representation {
  Matrix matrix;                      // one row per example of the class
  std::vector<std::size_t> examples;  // dataset index of each row
  std::size_t stage = 0;
};

// Rows are forward_to_stage(model, x, n-1) flattened for every example whose
// label is `cls`. Throws RangeError for single-stage models or an unknown
// class and ConfigError when the class has no examples.
Representation deep_representation(const Model& model, const Dataset& data,
                                   std::size_t cls);

struct SpectralOptions {
  double k = 1.5;
  bool square_scores = false;
  double tolerance = 1e-10;
  std::size_t max_iterations = 1000;
};

struct SpectralReport {
  std::vector<double> scores;
  double mean = 0.0;
  double std = 0.0;
  double threshold_k = 1.5;
  std::vector<std::size_t> flagged;
  std::vector<double> direction;  // top right singular vector of the centered matrix
  double residual = 0.0;          // ||A v - (v'Av) v|| / ||A v||, A = M'M
  std::size_t iterations = 0;
};

// Centers the rows, finds the top right singular vector by power iteration on
// M'M (started from the largest centered row) and flags rows whose score
// exceeds mean + k * std (population std). Throws ConfigError for fewer than
// two rows and ConvergenceError with the final residual when the iteration
// does not reach `tolerance`.
SpectralReport spectral_signature(const Matrix& r, const SpectralOptions& opts = {});

// Planted-outlier fixture: 95 rows drawn from N(0, 0.1 I_8) and 5 rows drawn
// the same way and shifted by 5 e_1, placed at seed-chosen positions.
struct PlantedFixture {
  Matrix matrix;
  std::vector<std::size_t> planted;  // sorted
};

PlantedFixture make_planted_outliers(std::uint64_t seed, std::size_t inliers = 95,
                                     std::size_t outliers = 5, std::size_t dims = 8);

}  // namespace interpalg
