#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <random>

#include "interpalg/attribution.h"
#include "interpalg/error.h"
#include "interpalg/generate.h"
#include "interpalg/nn.h"
#include "test_util.h"

namespace interpalg {
namespace {

using testing::fixture_mlp;
using testing::max_abs;
using testing::max_abs_diff;
using testing::permutation_oracle;
using testing::reference_logit;
using testing::sum;

std::vector<std::size_t> all_players(std::size_t d) {
  std::vector<std::size_t> p(d);
  for (std::size_t i = 0; i < d; ++i) p[i] = i;
  return p;
}

struct LinearFixture {
  Model model;
  std::vector<double> w;  // row of the target class
  Tensor x;
  Tensor xbar;
  std::size_t cls;
};

LinearFixture random_linear(std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-2, 2);
  const std::size_t classes = 3;
  std::vector<double> weight(classes * d), bias(classes);
  for (double& v : weight) v = u(rng);
  for (double& v : bias) v = u(rng);
  const std::size_t cls = seed % classes;
  std::vector<double> row(weight.begin() + cls * d, weight.begin() + (cls + 1) * d);
  return {make_linear(d, classes, weight, bias), row, random_tensor({d}, -3, 3, seed + 1),
          random_tensor({d}, -1, 1, seed + 2), cls};
}

std::vector<double> linear_closed_form(const LinearFixture& f) {
  std::vector<double> out(f.w.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f.w[i] * (f.x[i] - f.xbar[i]);
  return out;
}

TEST(MaskedInput, Definition) {
  const Tensor x({3}, {1, 2, 3});
  const Tensor xbar = Tensor::zeros({3});
  EXPECT_EQ(masked_input(x, xbar, {}), xbar);
  const std::vector<std::size_t> all = {0, 1, 2};
  EXPECT_EQ(masked_input(x, xbar, all), x);
  const std::vector<std::size_t> s = {0, 2};
  EXPECT_EQ(masked_input(x, xbar, s).values(), (std::vector<double>{1, 0, 3}));
  const std::vector<std::size_t> bad = {3};
  EXPECT_THROW(masked_input(x, xbar, bad), RangeError);
}

TEST(ShapleyExact, MatchesPermutationOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Model m = fixture_mlp(seed);
    const Tensor x = random_tensor({6}, -1, 1, 10 + seed);
    const Tensor xbar = Tensor::zeros({6});
    for (std::size_t c = 0; c < 3; ++c) {
      const auto oracle = permutation_oracle(m, x.values(), xbar.values(), c, all_players(6));
      const auto got = shapley_exact(m, x, xbar, c, Window::all(6));
      EXPECT_LE(max_abs_diff(got.values, oracle), 1e-12) << "seed " << seed;
    }
  }
}

TEST(ShapleyExact, WindowedMatchesOracleAndIsZeroOutside) {
  const Model m = fixture_mlp(3);
  const Tensor x = random_tensor({6}, -1, 1, 4);
  const Tensor xbar = random_tensor({6}, -0.5, 0.5, 5);
  const std::vector<std::size_t> players = {1, 2, 4};
  const auto oracle = permutation_oracle(m, x.values(), xbar.values(), 1, players);
  const auto got = shapley_exact(m, x, xbar, 1, Window(players));
  EXPECT_LE(max_abs_diff(got.values, oracle), 1e-12);
  for (std::size_t i : {0, 3, 5}) EXPECT_EQ(got.values[i], 0.0);
}

TEST(ShapleyExact, EfficiencyOnRandomFixtures) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const Model m = fixture_mlp(trial % 5);
    const Tensor x = random_tensor({6}, -2, 2, 1000 + trial);
    const Tensor xbar = random_tensor({6}, -1, 1, 2000 + trial);
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < 6; ++i) {
      if (rng() % 2) idx.push_back(i);
    }
    const Window w(idx);
    const std::size_t c = trial % 3;
    const auto map = shapley_exact(m, x, xbar, c, w);
    const double vw = reference_logit(m, masked_input(x, xbar, idx).values(), c);
    const double v0 = reference_logit(m, xbar.values(), c);
    EXPECT_NEAR(sum(map.values), vw - v0, 1e-9) << "trial " << trial;
  }
}

TEST(ShapleyExact, EqualInputsGiveZero) {
  const Model m = fixture_mlp(1);
  const Tensor x = random_tensor({6}, -1, 1, 8);
  EXPECT_EQ(shapley_exact(m, x, x, 0, Window::all(6)).values, std::vector<double>(6, 0.0));
}

TEST(ShapleyExact, DummyFeatureGetsExactlyZero) {
  LinearFixture f = random_linear(5, 3);
  std::vector<double> weight = f.model.spec().layers[0].weight;
  for (std::size_t c = 0; c < 3; ++c) weight[c * 5 + 2] = 0.0;
  const Model m = make_linear(5, 3, weight, f.model.spec().layers[0].bias);
  EXPECT_EQ(shapley_exact(m, f.x, f.xbar, 0, Window::all(5)).values[2], 0.0);
}

TEST(ShapleyExact, WindowGuard) {
  const std::size_t widths[] = {16, 4, 2};
  const Model m = make_mlp(widths, 0);
  const Tensor x = Tensor::zeros({16});
  EXPECT_THROW(shapley_exact(m, x, x, 0, Window::all(16)), ConfigError);
  const std::vector<std::size_t> fifteen = all_players(15);
  EXPECT_NO_THROW(shapley_exact(m, x, x, 0, Window(fifteen)));
}

TEST(ShapleyExact, ConvolutionalModelMatchesOracle) {
  const Model m = make_cnn({1, 4, 4}, 2, 4, 2, 3);
  const Tensor x = random_tensor({1, 4, 4}, -1, 1, 1);
  const Tensor xbar = Tensor::zeros({1, 4, 4});
  const std::vector<std::size_t> players = {0, 5, 6, 10, 15};
  // Oracle by full forward passes through the runtime.
  std::vector<std::size_t> order(players.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> phi(16, 0.0);
  double count = 0;
  do {
    std::vector<double> cur = xbar.values();
    double prev = logit(m, cur, 1);
    for (std::size_t j : order) {
      cur[players[j]] = x[players[j]];
      const double v = logit(m, cur, 1);
      phi[players[j]] += v - prev;
      prev = v;
    }
    ++count;
  } while (std::next_permutation(order.begin(), order.end()));
  for (double& p : phi) p /= count;
  EXPECT_LE(max_abs_diff(shapley_exact(m, x, xbar, 1, Window(players)).values, phi), 1e-12);
}

TEST(ShapleySampled, ConvergesToExact) {
  const auto start = std::chrono::steady_clock::now();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Model m = fixture_mlp(seed);
    const Tensor x = random_tensor({6}, -1, 1, 10 + seed);
    const Tensor xbar = Tensor::zeros({6});
    const std::size_t c = predict(m, x);
    const auto exact = shapley_exact(m, x, xbar, c, Window::all(6));
    const auto sampled = shapley_sampled(m, x, xbar, c, Window::all(6), 20000, 7);
    EXPECT_LE(max_abs_diff(sampled.values, exact.values), 0.02 * (max_abs(exact.values) + 1e-12));
  }
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 30.0);
}

TEST(ShapleySampled, UnbiasedAcrossSeeds) {
  const std::size_t widths[] = {8, 8, 8, 3};
  const Model m = make_mlp(widths, 5);
  const Tensor x = random_tensor({8}, -1, 1, 6);
  const Tensor xbar = Tensor::zeros({8});
  const auto exact = shapley_exact(m, x, xbar, 2, Window::all(8));
  const int runs = 50;
  std::vector<double> mean(8, 0.0), sq(8, 0.0);
  for (int s = 0; s < runs; ++s) {
    const auto est = shapley_sampled(m, x, xbar, 2, Window::all(8), 20, 100 + s);
    for (std::size_t i = 0; i < 8; ++i) {
      mean[i] += est.values[i];
      sq[i] += est.values[i] * est.values[i];
    }
  }
  for (std::size_t i = 0; i < 8; ++i) {
    mean[i] /= runs;
    const double var = (sq[i] / runs - mean[i] * mean[i]) * runs / (runs - 1);
    const double se = std::sqrt(std::max(var, 0.0) / runs);
    EXPECT_LE(std::abs(mean[i] - exact.values[i]), 3 * se + 1e-12) << "feature " << i;
  }
}

TEST(ShapleySampled, EqualInputsGiveZero) {
  const Model m = fixture_mlp(2);
  const Tensor x = random_tensor({6}, -1, 1, 3);
  for (std::size_t perms : {1, 7, 500}) {
    EXPECT_EQ(shapley_sampled(m, x, x, 0, Window::all(6), perms, 1).values,
              std::vector<double>(6, 0.0));
  }
}

TEST(ShapleySampled, DeterministicAndWorkerIndependent) {
  const std::size_t widths[] = {20, 16, 3};
  const Model m = make_mlp(widths, 1);
  const Tensor x = random_tensor({20}, -1, 1, 2);
  const Tensor xbar = Tensor::zeros({20});
  const auto a = shapley_sampled(m, x, xbar, 1, Window::all(20), 300, 9, 1);
  EXPECT_EQ(a, shapley_sampled(m, x, xbar, 1, Window::all(20), 300, 9, 1));
  EXPECT_EQ(a, shapley_sampled(m, x, xbar, 1, Window::all(20), 300, 9, 3));
  EXPECT_EQ(a, shapley_sampled(m, x, xbar, 1, Window::all(20), 300, 9, 8));
  EXPECT_NE(a, shapley_sampled(m, x, xbar, 1, Window::all(20), 300, 10, 1));
}

TEST(ShapleySampled, EfficiencyHoldsPerPermutation) {
  const Model m = fixture_mlp(4);
  const Tensor x = random_tensor({6}, -1, 1, 1);
  const Tensor xbar = random_tensor({6}, -1, 1, 2);
  const auto map = shapley_sampled(m, x, xbar, 0, Window::all(6), 37, 3);
  EXPECT_NEAR(sum(map.values), logit(m, x.data(), 0) - logit(m, xbar.data(), 0), 1e-9);
}

TEST(IntegratedGradients, CompletenessOnSeedZeroMlps) {
  const std::size_t widths[] = {8, 4, 3};
  for (const Model& m : {fixture_mlp(0), make_mlp(widths, 0)}) {
    const Tensor x = random_tensor(m.input_shape(), -1, 1, 10);
    const Tensor xbar = Tensor::zeros(m.input_shape());
    const std::size_t c = predict(m, x);
    const auto map = integrated_gradients(m, x, xbar, c, 300, Window::all(x.size()));
    const double delta = reference_logit(m, x.values(), c) - reference_logit(m, xbar.values(), c);
    EXPECT_LE(std::abs(sum(map.values) - delta), 1e-3 * (std::abs(delta) + 1));
  }
}

TEST(IntegratedGradients, CompletenessErrorShrinksWithSteps) {
  const Model m = fixture_mlp(0);
  const Tensor x = random_tensor({6}, -1, 1, 10);
  const Tensor xbar = Tensor::zeros({6});
  const std::size_t c = predict(m, x);
  const double delta = logit(m, x.data(), c) - logit(m, xbar.data(), c);
  double prev = INFINITY;
  for (std::size_t k : {10, 40, 160, 640}) {
    const double err =
        std::abs(sum(integrated_gradients(m, x, xbar, c, k, Window::all(6)).values) - delta);
    EXPECT_LE(err, prev + 1e-12) << "K=" << k;
    prev = err;
  }
}

TEST(IntegratedGradients, EqualInputsGiveZero) {
  const Model m = fixture_mlp(1);
  const Tensor x = random_tensor({6}, -1, 1, 1);
  EXPECT_EQ(integrated_gradients(m, x, x, 0, 13, Window::all(6)).values,
            std::vector<double>(6, 0.0));
}

TEST(IntegratedGradients, MatchesDirectRiemannSum) {
  const Model m = fixture_mlp(2);
  const Tensor x = random_tensor({6}, -1, 1, 5);
  const Tensor xbar = random_tensor({6}, -0.3, 0.3, 6);
  const std::vector<std::size_t> idx = {0, 3, 4};
  const std::size_t k = 25;
  const Tensor xw = masked_input(x, xbar, idx);
  std::vector<double> expected(6, 0.0);
  for (std::size_t step = 1; step <= k; ++step) {
    std::vector<double> p(6);
    for (std::size_t i = 0; i < 6; ++i) {
      p[i] = xbar[i] + (static_cast<double>(step) / k) * (xw[i] - xbar[i]);
    }
    const auto g = input_gradient(m, p, 1);
    for (std::size_t i : idx) expected[i] += g[i] / k;
  }
  for (std::size_t i : idx) expected[i] *= xw[i] - xbar[i];
  EXPECT_LE(max_abs_diff(integrated_gradients(m, x, xbar, 1, k, Window(idx)).values, expected),
            1e-12);
}

TEST(SmoothGrad, ZeroSigmaIsPlainGradient) {
  const Model m = fixture_mlp(3);
  const Tensor x = random_tensor({6}, -1, 1, 2);
  const Tensor xbar = Tensor::zeros({6});
  for (std::size_t n : {1, 5, 40}) {
    EXPECT_EQ(smoothgrad(m, x, 2, n, 0.0, 4, Window::all(6), xbar).values,
              gradient(m, x, 2).values());
  }
}

// Per-coordinate gradient samples drawn with an independent generator.
std::vector<std::vector<double>> gradient_samples(const Model& m, const Tensor& x,
                                                  std::size_t cls, std::size_t n,
                                                  double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  std::vector<std::vector<double>> out;
  for (std::size_t s = 0; s < n; ++s) {
    std::vector<double> p = x.values();
    for (double& v : p) v += noise(rng);
    out.push_back(input_gradient(m, p, cls));
  }
  return out;
}

TEST(SmoothGrad, AgreesWithIndependentResample) {
  const Model m = fixture_mlp(0);
  const Tensor x = random_tensor({6}, -1, 1, 11);
  const Tensor xbar = Tensor::zeros({6});
  const std::size_t n = 2000;
  const std::size_t c = predict(m, x);
  const auto map = smoothgrad(m, x, c, n, 0.1, 5, Window::all(6), xbar);
  const auto samples = gradient_samples(m, x, c, n, 0.1, 987654321);
  for (std::size_t i = 0; i < 6; ++i) {
    double mean = 0, sq = 0;
    for (const auto& g : samples) {
      mean += g[i];
      sq += g[i] * g[i];
    }
    mean /= n;
    const double var = (sq / n - mean * mean) * n / (n - 1);
    const double se_diff = std::sqrt(2.0 * std::max(var, 0.0) / n);
    EXPECT_LE(std::abs(map.values[i] - mean), 3 * se_diff + 1e-12) << "feature " << i;
  }
}

TEST(SmoothGrad, DeterministicGivenSeed) {
  const Model m = fixture_mlp(1);
  const Tensor x = random_tensor({6}, -1, 1, 3);
  const Tensor xbar = Tensor::zeros({6});
  EXPECT_EQ(smoothgrad(m, x, 0, 30, 0.2, 8, Window::all(6), xbar),
            smoothgrad(m, x, 0, 30, 0.2, 8, Window::all(6), xbar));
}

BackendConfig config_for(Backend b) {
  BackendConfig cfg;
  cfg.backend = b;
  cfg.samples = 64;
  cfg.steps = 17;
  cfg.noise_count = 9;
  cfg.noise_sigma = 0.3;
  cfg.seed = 12;
  return cfg;
}

constexpr Backend kAllBackends[] = {Backend::kShapleyExact, Backend::kShapleySampled,
                                    Backend::kIntegratedGradients, Backend::kSmoothGrad};

TEST(LinearClosedForm, AllBackends) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const std::size_t d = 2 + seed % 15;
    const LinearFixture f = random_linear(d, seed);
    const auto expected = linear_closed_form(f);
    const Window all = Window::all(d);
    if (d <= kMaxExactWindow) {
      const auto exact = shapley_exact(f.model, f.x, f.xbar, f.cls, all);
      EXPECT_LE(max_abs_diff(exact.values, expected), 1e-12 * (max_abs(expected) + 1));
    }
    const auto sampled = shapley_sampled(f.model, f.x, f.xbar, f.cls, all, 50, seed);
    EXPECT_LE(max_abs_diff(sampled.values, expected), 1e-9);
    for (std::size_t k : {1, 7, 50}) {
      EXPECT_LE(max_abs_diff(integrated_gradients(f.model, f.x, f.xbar, f.cls, k, all).values,
                             expected),
                1e-12 * (max_abs(expected) + 1));
    }
    for (double sigma : {0.0, 0.5, 3.0}) {
      EXPECT_EQ(smoothgrad(f.model, f.x, f.cls, 11, sigma, seed, all, f.xbar).values, f.w);
    }
  }
}

TEST(Projection, SupportAndLocalityAllBackends) {
  const Model m = fixture_mlp(2);
  const Tensor x = random_tensor({6}, -1, 1, 21);
  const Tensor xbar = Tensor::zeros({6});
  const Window w(std::vector<std::size_t>{1, 2, 5});
  std::vector<double> mutated = x.values();
  mutated[0] += 3.0;
  mutated[3] -= 1.5;
  mutated[4] = 0.25;
  const Tensor x2(x.shape(), mutated);
  for (Backend b : kAllBackends) {
    const BackendConfig cfg = config_for(b);
    const auto a = attribute(cfg, m, x, xbar, 1, w);
    for (std::size_t i : {0, 3, 4}) EXPECT_EQ(a.values[i], 0.0) << backend_name(b);
    EXPECT_EQ(a, attribute(cfg, m, x2, xbar, 1, w)) << backend_name(b);
  }
}

TEST(IdentityAttr, TargetsPredictedClass) {
  const Model m = fixture_mlp(0);
  const Tensor x = random_tensor({6}, -1, 1, 3);
  const Tensor xbar = Tensor::zeros({6});
  BackendConfig cfg = config_for(Backend::kShapleyExact);
  const std::size_t c = predict(m, x);
  EXPECT_EQ(resolve_target(cfg, m, x), c);
  EXPECT_EQ(identity_attr(cfg, m, x, xbar), shapley_exact(m, x, xbar, c, Window::all(6)));
  cfg.target_class = (c + 1) % 3;
  EXPECT_EQ(identity_attr(cfg, m, x, xbar),
            shapley_exact(m, x, xbar, (c + 1) % 3, Window::all(6)));
  cfg.target_class = 3;
  EXPECT_THROW(identity_attr(cfg, m, x, xbar), RangeError);
}

TEST(IdentityAttr, EqualInputsGiveZeroForShapleyAndIg) {
  const Model m = fixture_mlp(4);
  const Tensor x = random_tensor({6}, -1, 1, 3);
  for (Backend b : {Backend::kShapleyExact, Backend::kShapleySampled,
                    Backend::kIntegratedGradients}) {
    EXPECT_EQ(identity_attr(config_for(b), m, x, x).values, std::vector<double>(6, 0.0));
  }
}

TEST(SelectAttr, EfficiencyAgainstTruncatedModel) {
  const std::size_t widths[] = {6, 8, 8, 3};
  const Model m = make_mlp(widths, 0);
  const Dataset data = make_blobs({{-2, 0, 0, 1, 0, 0}, {2, 0, 1, 0, 0, 0}, {0, 2, 0, 0, 1, 1}},
                                  20, 0.5, 1);
  const Truncation t = truncate(m, 1, data, HeadHyper{});
  const Tensor x = data.inputs[3];
  const Tensor xbar = Tensor::zeros({6});
  const BackendConfig cfg = config_for(Backend::kShapleyExact);
  const auto map = select_attr(cfg, t.model, x, xbar);
  const std::size_t c = predict(t.model, x);
  EXPECT_NEAR(sum(map.values), logit(t.model, x.data(), c) - logit(t.model, xbar.data(), c),
              1e-9);
  EXPECT_EQ(select_attr(cfg, t.model, x, x).values, std::vector<double>(6, 0.0));
}

TEST(JoinMaps, Arithmetic) {
  const AttributionMap m{{2}, {2, 0}};
  const AttributionMap m2{{2}, {0, 2}};
  EXPECT_EQ(join_maps(m, m2, 1.0), m);
  EXPECT_EQ(join_maps(m, m2, 0.0), m2);
  EXPECT_EQ(join_maps(m, m2, 0.5).values, (std::vector<double>{1, 1}));
  EXPECT_THROW(join_maps(m, m2, 1.5), ConfigError);
  EXPECT_THROW(join_maps(m, AttributionMap{{3}, {0, 0, 0}}, 0.5), ShapeError);
}

TEST(JoinMaps, CommutationIdentity) {
  const AttributionMap m{{4}, {0.3, -1.7, 2.25, 9.1}};
  const AttributionMap m2{{4}, {-4.5, 0.01, 3.3, -0.2}};
  for (double eps : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    EXPECT_EQ(join_maps(m, m2, eps), join_maps(m2, m, 1.0 - eps)) << eps;
  }
}

TEST(AntiJoin, Semantics) {
  const Model m = fixture_mlp(1);
  const Tensor x = random_tensor({6}, -1, 1, 1);
  const Tensor x2 = random_tensor({6}, -1, 1, 2);
  for (Backend b : kAllBackends) {
    const BackendConfig cfg = config_for(b);
    const auto r = antijoin(cfg, m, x, x2);
    ASSERT_EQ(r.kind, ResultKind::kPair);
    EXPECT_EQ(r.left(), identity_attr(cfg, m, x, x2)) << backend_name(b);
    EXPECT_EQ(r.right(), identity_attr(cfg, m, x2, x)) << backend_name(b);
    const auto swapped = antijoin(cfg, m, x2, x);
    EXPECT_EQ(r.left(), swapped.right());
    EXPECT_EQ(r.right(), swapped.left());
  }
  const auto same = antijoin(config_for(Backend::kShapleyExact), m, x, x);
  EXPECT_EQ(same.left().values, std::vector<double>(6, 0.0));
  EXPECT_EQ(same.right().values, std::vector<double>(6, 0.0));
}

TEST(AntiJoin, LeftEfficiency) {
  const Model m = fixture_mlp(2);
  const Tensor x = random_tensor({6}, -1, 1, 7);
  const Tensor x2 = random_tensor({6}, -1, 1, 8);
  const auto r = antijoin(config_for(Backend::kShapleyExact), m, x, x2);
  const std::size_t c = predict(m, x);
  EXPECT_NEAR(sum(r.left().values), logit(m, x.data(), c) - logit(m, x2.data(), c), 1e-9);
}

TEST(AntiJoin, SharedBaselineFlag) {
  const Model m = fixture_mlp(3);
  const Tensor x = random_tensor({6}, -1, 1, 7);
  const Tensor x2 = random_tensor({6}, -1, 1, 8);
  BackendConfig cfg = config_for(Backend::kIntegratedGradients);
  cfg.antijoin_shared_baseline = true;
  const Tensor zero = Tensor::zeros({6});
  const auto r = antijoin(cfg, m, x, x2);
  EXPECT_EQ(r.left(), identity_attr(cfg, m, x, zero));
  EXPECT_EQ(r.right(), identity_attr(cfg, m, x2, zero));
}

// Literal coalition formula: average over sizes k of the mean over size-k
// coalitions of f(S + i) - f2(S).
std::vector<double> cross_model_oracle(const Model& f, const Model& f2, const Tensor& x,
                                       const Tensor& xbar, std::size_t cls) {
  const std::size_t d = x.size();
  std::vector<double> out(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    std::vector<double> by_size(d, 0.0), count(d, 0.0);
    for (std::size_t mask = 0; mask < (1u << d); ++mask) {
      if (mask & (1u << i)) continue;
      std::vector<double> s = xbar.values();
      std::size_t size = 0;
      for (std::size_t j = 0; j < d; ++j) {
        if (mask & (1u << j)) {
          s[j] = x[j];
          ++size;
        }
      }
      std::vector<double> si = s;
      si[i] = x[i];
      by_size[size] += reference_logit(f, si, cls) - reference_logit(f2, s, cls);
      count[size] += 1;
    }
    for (std::size_t k = 0; k < d; ++k) out[i] += by_size[k] / count[k] / d;
  }
  return out;
}

TEST(CrossModel, LinearModelsMatchCoalitionOracle) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const LinearFixture a = random_linear(5, seed);
    const LinearFixture b = random_linear(5, seed + 50);
    BackendConfig cfg = config_for(Backend::kShapleyExact);
    cfg.target_class = 1;
    const auto got = antijoin_cross_model(cfg, a.model, b.model, a.x, a.xbar);
    EXPECT_LE(max_abs_diff(got.values, cross_model_oracle(a.model, b.model, a.x, a.xbar, 1)),
              1e-12);
  }
}

TEST(CrossModel, MlpMatchesCoalitionOracle) {
  const Model f = fixture_mlp(0);
  const Model f2 = fixture_mlp(1);
  const Tensor x = random_tensor({6}, -1, 1, 3);
  const Tensor xbar = Tensor::zeros({6});
  BackendConfig cfg = config_for(Backend::kShapleyExact);
  cfg.target_class = 2;
  EXPECT_LE(max_abs_diff(antijoin_cross_model(cfg, f, f2, x, xbar).values,
                         cross_model_oracle(f, f2, x, xbar, 2)),
            1e-12);
}

TEST(CrossModel, SameModelReducesToIdentity) {
  const Model f = fixture_mlp(2);
  const Tensor x = random_tensor({6}, -1, 1, 3);
  const Tensor xbar = random_tensor({6}, -1, 1, 4);
  for (Backend b : {Backend::kShapleyExact, Backend::kShapleySampled}) {
    const BackendConfig cfg = config_for(b);
    EXPECT_LE(max_abs_diff(antijoin_cross_model(cfg, f, f, x, xbar).values,
                           identity_attr(cfg, f, x, xbar).values),
              1e-12)
        << backend_name(b);
  }
}

TEST(CrossModel, SampledIsDeterministicAndConverges) {
  const Model f = fixture_mlp(0);
  const Model f2 = fixture_mlp(3);
  const Tensor x = random_tensor({6}, -1, 1, 3);
  const Tensor xbar = Tensor::zeros({6});
  BackendConfig cfg = config_for(Backend::kShapleySampled);
  cfg.samples = 20000;
  cfg.target_class = 0;
  const auto a = antijoin_cross_model(cfg, f, f2, x, xbar);
  EXPECT_EQ(a, antijoin_cross_model(cfg, f, f2, x, xbar));
  const auto oracle = cross_model_oracle(f, f2, x, xbar, 0);
  EXPECT_LE(max_abs_diff(a.values, oracle), 0.02 * (max_abs(oracle) + 1e-12));
}

TEST(CrossModel, Errors) {
  const Model f = fixture_mlp(0);
  const Tensor x = Tensor::zeros({6});
  EXPECT_THROW(antijoin_cross_model(config_for(Backend::kIntegratedGradients), f, f, x, x),
               ConfigError);
  const std::size_t widths[] = {6, 4, 2};
  EXPECT_THROW(antijoin_cross_model(config_for(Backend::kShapleyExact), f, make_mlp(widths, 0),
                                    x, x),
               ShapeError);
}

TEST(BackendConfig, Validation) {
  BackendConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.epsilon = -0.1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.samples = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.steps = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.noise_sigma = -1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.noise_count = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  for (Backend b : kAllBackends) EXPECT_EQ(parse_backend(backend_name(b)), b);
  EXPECT_THROW(parse_backend("gradcam"), ConfigError);
}

}  // namespace
}  // namespace interpalg
