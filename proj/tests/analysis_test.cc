#include "interpalg/analysis.h"

#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "interpalg/attribution.h"
#include "interpalg/error.h"
#include "interpalg/generate.h"
#include "test_util.h"

namespace interpalg {
namespace {

Tensor vec(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

Tensor grid(std::size_t ch, std::size_t h, std::size_t w) {
  std::vector<double> v(ch * h * w);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i + 1);
  if (ch == 1) return Tensor({h, w}, std::move(v));
  return Tensor({ch, h, w}, std::move(v));
}

TEST(EditTest, NullifyExamples) {
  const Tensor x = vec({1, 2, 3});
  const Tensor zero = Tensor::zeros({3});
  EXPECT_EQ(nullify(x, Window({1}), zero), vec({1, 0, 3}));
  EXPECT_EQ(nullify(x, Window::all(3), zero), zero);
  EXPECT_EQ(nullify(x, Window(), zero), x);
  EXPECT_THROW(nullify(x, Window({0}), Tensor::zeros({4})), ShapeError);
  EXPECT_THROW(nullify(x, Window({3}), zero), RangeError);
}

TEST(EditTest, NullifyAgreesWithMaskedInput) {
  const Tensor x = random_tensor({10}, -1, 1, 3);
  const Tensor xbar = random_tensor({10}, -1, 1, 4);
  const Window w({0, 2, 3, 9});
  EXPECT_EQ(nullify(x, w, xbar), masked_input(x, xbar, w.complement(10).indices()));
}

TEST(EditTest, SubstituteExamples) {
  EXPECT_EQ(substitute(vec({1, 2}), Window({0}), vec({9, 9})), vec({9, 2}));
  EXPECT_EQ(substitute(vec({1, 2}), Window(), vec({9, 9})), vec({1, 2}));
  EXPECT_EQ(substitute(vec({1, 2}), Window::all(2), vec({9, 8})), vec({9, 8}));
  EXPECT_THROW(substitute(vec({1, 2}), Window({0}), vec({9})), ShapeError);
}

TEST(EditTest, ScaleIsElementwise) {
  const Tensor x = vec({1, -2, 3});
  EXPECT_EQ(transform(x, {TransformOp::kScale, 1.0}), x);
  EXPECT_EQ(transform(x, {TransformOp::kScale, -2.0}), vec({-2, 4, -6}));
  EXPECT_THROW(transform(x, {TransformOp::kScale, std::numeric_limits<double>::infinity()}),
               ConfigError);
}

TEST(EditTest, RotateQuarterTurnCounterClockwise) {
  // 1 2      2 4
  // 3 4  ->  1 3
  TransformSpec spec{TransformOp::kRotate90};
  spec.quarter_turns = 1;
  EXPECT_EQ(transform(grid(1, 2, 2), spec), Tensor({2, 2}, {2, 4, 1, 3}));
  spec.quarter_turns = 2;
  EXPECT_EQ(transform(grid(1, 2, 2), spec), Tensor({2, 2}, {4, 3, 2, 1}));
  spec.quarter_turns = 3;
  EXPECT_EQ(transform(grid(1, 2, 2), spec), Tensor({2, 2}, {3, 1, 4, 2}));
}

TEST(EditTest, RotateFourTimesIsIdentity) {
  for (const Tensor& x : {grid(1, 3, 3), grid(2, 4, 4)}) {
    TransformSpec spec{TransformOp::kRotate90};
    Tensor y = x;
    for (int i = 0; i < 4; ++i) y = transform(y, spec);
    EXPECT_EQ(y, x);
    spec.quarter_turns = 3;
    TransformSpec once{TransformOp::kRotate90};
    EXPECT_EQ(transform(transform(x, spec), once), x);
  }
  TransformSpec half{TransformOp::kRotate90};
  half.quarter_turns = 2;
  const Tensor rect = grid(1, 2, 3);
  EXPECT_EQ(transform(transform(rect, half), half), rect);
}

TEST(EditTest, RotateRejectsBadInputs) {
  TransformSpec spec{TransformOp::kRotate90};
  EXPECT_THROW(transform(vec({1, 2, 3, 4}), spec), ShapeError);
  EXPECT_THROW(transform(grid(1, 2, 3), spec), ShapeError);
  spec.quarter_turns = 4;
  EXPECT_THROW(transform(grid(1, 2, 2), spec), ConfigError);
}

TEST(EditTest, ShiftFillsWithZero) {
  TransformSpec spec{TransformOp::kShift};
  const Tensor x = grid(2, 2, 3);
  EXPECT_EQ(transform(x, spec), x);
  spec.dr = 1;
  spec.dc = -1;
  // channel 0: 1 2 3 / 4 5 6 -> 0 0 0 / 2 3 0
  EXPECT_EQ(transform(x, spec), Tensor({2, 2, 3}, {0, 0, 0, 2, 3, 0, 0, 0, 0, 8, 9, 0}));
  spec.dr = 5;
  EXPECT_EQ(transform(x, spec), Tensor::zeros({2, 2, 3}));
  EXPECT_THROW(transform(vec({1, 2}), spec), ShapeError);
}

TEST(EditTest, ApplyEditChecksRequiredFields) {
  const Tensor x = vec({1, 2, 3});
  const Tensor zero = Tensor::zeros({3});
  Edit e{EditKind::kSubstitute, Window({0})};
  EXPECT_THROW(apply_edit(e, x, zero), ConfigError);
  e.source_input = "other";
  EXPECT_THROW(apply_edit(e, x, zero), NotFoundError);
  const Tensor src = vec({7, 7, 7});
  EXPECT_EQ(apply_edit(e, x, zero, &src), vec({7, 2, 3}));
  Edit t{EditKind::kTransform, Window()};
  EXPECT_THROW(apply_edit(t, x, zero), ConfigError);
  t.transform = TransformSpec{TransformOp::kScale, 2.0};
  EXPECT_EQ(apply_edit(t, x, zero), vec({2, 4, 6}));
  EXPECT_EQ(apply_edit(Edit{EditKind::kNullify, Window({2})}, x, zero), vec({1, 2, 0}));
  EXPECT_EQ(parse_edit_kind(edit_kind_name(EditKind::kTransform)), EditKind::kTransform);
  EXPECT_EQ(parse_transform_op("shift"), TransformOp::kShift);
  EXPECT_THROW(parse_transform_op("flip"), ConfigError);
}

TEST(DeepRepresentationTest, RowsMatchPenultimateStage) {
  const Model model = testing::fixture_mlp(2);
  const Dataset data = make_blobs({{0, 0, 0, 0, 0, 0}, {2, 2, 2, 2, 2, 2}, {-2, 0, 2, 0, -2, 0}},
                                  7, 0.3, 5);
  const Representation rep = deep_representation(model, data, 1);
  ASSERT_EQ(rep.stage, model.num_stages() - 1);
  ASSERT_EQ(rep.matrix.cols, numel(model.stage_shape(rep.stage)));
  ASSERT_EQ(rep.matrix.rows, rep.examples.size());
  ASSERT_GT(rep.matrix.rows, 0u);
  for (std::size_t r = 0; r < rep.matrix.rows; ++r) {
    EXPECT_EQ(data.labels[rep.examples[r]], 1u);
    const Tensor a = forward_to_stage(model, data.inputs[rep.examples[r]], rep.stage);
    for (std::size_t c = 0; c < rep.matrix.cols; ++c) EXPECT_EQ(rep.matrix.at(r, c), a[c]);
  }
}

TEST(DeepRepresentationTest, Errors) {
  const Model model = testing::fixture_mlp(2);
  Dataset one;
  one.inputs.push_back(random_tensor({6}, -1, 1, 1));
  one.labels.push_back(0);
  EXPECT_EQ(deep_representation(model, one, 0).matrix.rows, 1u);
  EXPECT_THROW(deep_representation(model, one, 2), ConfigError);
  EXPECT_THROW(deep_representation(model, one, 3), RangeError);
  const Model linear = make_linear(6, 3, std::vector<double>(18, 0.1), std::vector<double>(3, 0.0), "lin");
  EXPECT_THROW(deep_representation(linear, one, 0), RangeError);
}

// Top eigenvector of M'M for the centered matrix by a dense symmetric solver.
std::vector<double> oracle_direction(const Matrix& r) {
  Eigen::MatrixXd m(r.rows, r.cols);
  for (std::size_t i = 0; i < r.rows; ++i) {
    for (std::size_t c = 0; c < r.cols; ++c) m(i, c) = r.at(i, c);
  }
  m.rowwise() -= m.colwise().mean();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m.transpose() * m);
  const Eigen::VectorXd v = es.eigenvectors().col(r.cols - 1);
  return {v.data(), v.data() + v.size()};
}

TEST(SpectralTest, PlantedOutliersFlaggedExactly) {
  for (std::uint64_t seed : {0u, 1u, 2u, 3u, 4u}) {
    const PlantedFixture fx = make_planted_outliers(seed);
    ASSERT_EQ(fx.matrix.rows, 100u);
    ASSERT_EQ(fx.matrix.cols, 8u);
    ASSERT_EQ(fx.planted.size(), 5u);
    const SpectralReport rep = spectral_signature(fx.matrix);
    EXPECT_EQ(rep.flagged, fx.planted) << "seed " << seed;
    EXPECT_LE(rep.residual, 1e-8);

    // Direct projections on e_1 give the same flags.
    double mean0 = 0.0;
    for (std::size_t i = 0; i < 100; ++i) mean0 += fx.matrix.at(i, 0);
    mean0 /= 100.0;
    std::vector<double> proj(100);
    for (std::size_t i = 0; i < 100; ++i) proj[i] = std::abs(fx.matrix.at(i, 0) - mean0);
    double m = 0.0;
    for (double p : proj) m += p;
    m /= 100.0;
    double var = 0.0;
    for (double p : proj) var += (p - m) * (p - m);
    const double cut = m + 1.5 * std::sqrt(var / 100.0);
    std::vector<std::size_t> direct;
    for (std::size_t i = 0; i < 100; ++i) {
      if (proj[i] > cut) direct.push_back(i);
    }
    EXPECT_EQ(direct, fx.planted);
  }
}

TEST(SpectralTest, DirectionMatchesEigenSolver) {
  for (std::uint64_t seed : {0u, 5u, 9u}) {
    const PlantedFixture fx = make_planted_outliers(seed);
    const SpectralReport rep = spectral_signature(fx.matrix);
    const std::vector<double> v = oracle_direction(fx.matrix);
    double dot = 0.0;
    for (std::size_t c = 0; c < v.size(); ++c) dot += v[c] * rep.direction[c];
    EXPECT_NEAR(std::abs(dot), 1.0, 1e-9);
  }
}

TEST(SpectralTest, ScoresOracleAndFlagRule) {
  const PlantedFixture fx = make_planted_outliers(11, 40, 3, 5);
  const SpectralReport rep = spectral_signature(fx.matrix, {.k = 1.0});
  const std::vector<double> v = oracle_direction(fx.matrix);
  std::vector<double> mean(5, 0.0);
  for (std::size_t i = 0; i < 43; ++i) {
    for (std::size_t c = 0; c < 5; ++c) mean[c] += fx.matrix.at(i, c) / 43.0;
  }
  std::vector<std::size_t> expect_flags;
  for (std::size_t i = 0; i < 43; ++i) {
    double dot = 0.0;
    for (std::size_t c = 0; c < 5; ++c) dot += (fx.matrix.at(i, c) - mean[c]) * v[c];
    EXPECT_NEAR(rep.scores[i], std::abs(dot), 1e-9);
    if (rep.scores[i] > rep.mean + 1.0 * rep.std) expect_flags.push_back(i);
  }
  EXPECT_EQ(rep.flagged, expect_flags);
  EXPECT_EQ(rep.threshold_k, 1.0);
}

TEST(SpectralTest, SignFlipInvariance) {
  const PlantedFixture fx = make_planted_outliers(3);
  const SpectralReport rep = spectral_signature(fx.matrix);
  std::vector<double> flipped(fx.matrix.rows);
  std::vector<double> mean(fx.matrix.cols, 0.0);
  for (std::size_t i = 0; i < fx.matrix.rows; ++i) {
    for (std::size_t c = 0; c < fx.matrix.cols; ++c) {
      mean[c] += fx.matrix.at(i, c) / static_cast<double>(fx.matrix.rows);
    }
  }
  for (std::size_t i = 0; i < fx.matrix.rows; ++i) {
    double dot = 0.0;
    for (std::size_t c = 0; c < fx.matrix.cols; ++c) {
      dot += (fx.matrix.at(i, c) - mean[c]) * -rep.direction[c];
    }
    flipped[i] = std::abs(dot);
  }
  EXPECT_LE(testing::max_abs_diff(flipped, rep.scores), 1e-9);
}

TEST(SpectralTest, SquaredScores) {
  const PlantedFixture fx = make_planted_outliers(0);
  const SpectralReport plain = spectral_signature(fx.matrix);
  const SpectralReport sq = spectral_signature(fx.matrix, {.square_scores = true});
  for (std::size_t i = 0; i < plain.scores.size(); ++i) {
    EXPECT_NEAR(sq.scores[i], plain.scores[i] * plain.scores[i], 1e-12);
  }
}

TEST(SpectralTest, TrivialCases) {
  Matrix same{3, 2, {1, 2, 1, 2, 1, 2}};
  const SpectralReport rep = spectral_signature(same);
  EXPECT_EQ(rep.scores, std::vector<double>(3, 0.0));
  EXPECT_TRUE(rep.flagged.empty());

  const PlantedFixture fx = make_planted_outliers(0);
  EXPECT_TRUE(
      spectral_signature(fx.matrix, {.k = std::numeric_limits<double>::infinity()}).flagged.empty());

  EXPECT_THROW(spectral_signature(Matrix{1, 2, {1, 2}}), ConfigError);
  EXPECT_THROW(spectral_signature(Matrix{2, 2, {1, 2, 3}}), ShapeError);
  EXPECT_THROW(spectral_signature(fx.matrix, {.k = std::nan("")}), ConfigError);
}

TEST(SpectralTest, NonConvergenceReportsResidual) {
  const PlantedFixture fx = make_planted_outliers(0);
  try {
    spectral_signature(fx.matrix, {.tolerance = 1e-300, .max_iterations = 2});
    FAIL() << "expected ConvergenceError";
  } catch (const ConvergenceError& e) {
    EXPECT_GT(e.residual(), 0.0);
  }
}

TEST(SpectralTest, Deterministic) {
  const PlantedFixture a = make_planted_outliers(4);
  const PlantedFixture b = make_planted_outliers(4);
  EXPECT_EQ(a.matrix.data, b.matrix.data);
  const SpectralReport ra = spectral_signature(a.matrix);
  const SpectralReport rb = spectral_signature(b.matrix);
  EXPECT_EQ(ra.scores, rb.scores);
  EXPECT_EQ(ra.direction, rb.direction);
}

}  // namespace
}  // namespace interpalg
