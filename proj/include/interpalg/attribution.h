#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "interpalg/nn.h"
#include "interpalg/tensor.h"
#include "interpalg/window.h"

namespace interpalg {

// Per-feature importance scores for one input, shaped like the input.
struct AttributionMap {
  Shape shape;
  std::vector<double> values;

  friend bool operator==(const AttributionMap&, const AttributionMap&) = default;
};

enum class ResultKind { kSingle, kPair, kTuple };

// One map, an ordered (left, right) pair from an anti-join, or one map per
// operand of a longer anti-join chain.
struct AttributionResult {
  ResultKind kind = ResultKind::kSingle;
  std::vector<AttributionMap> maps;

  static AttributionResult single(AttributionMap m);
  static AttributionResult pair(AttributionMap left, AttributionMap right);
  static AttributionResult tuple(std::vector<AttributionMap> maps);

  const AttributionMap& left() const { return maps.front(); }
  const AttributionMap& right() const { return maps.back(); }

  friend bool operator==(const AttributionResult&, const AttributionResult&) = default;
};

enum class Backend { kShapleyExact, kShapleySampled, kIntegratedGradients, kSmoothGrad };

std::string_view backend_name(Backend b);
// Accepts shapley-exact, shapley-sampled, integrated-gradients, smoothgrad.
Backend parse_backend(std::string_view name);

struct BackendConfig {
  Backend backend = Backend::kShapleySampled;
  std::size_t samples = 2000;      // permutations, shapley-sampled
  std::size_t steps = 50;          // integration steps, integrated-gradients
  double noise_sigma = 0.1;        // smoothgrad
  std::size_t noise_count = 50;    // smoothgrad
  std::uint64_t seed = 0;
  double epsilon = 0.5;            // join weight of the left operand
  std::optional<std::size_t> target_class;  // unset: argmax of the prediction
  std::size_t workers = 1;         // 0 picks the hardware concurrency
  bool antijoin_shared_baseline = false;

  // Throws ConfigError on out-of-domain values.
  void validate() const;
};

// Largest window shapley_exact will enumerate (2^15 coalitions).
inline constexpr std::size_t kMaxExactWindow = 15;

// out[i] = x[i] for i in coalition, xbar[i] otherwise.
Tensor masked_input(const Tensor& x, const Tensor& xbar,
                    std::span<const std::size_t> coalition);

// Exact Shapley values of v(S) = logit_cls(masked_input(x, xbar, S)) over the
// players in `window`; zero outside the window.
AttributionMap shapley_exact(const Model& model, const Tensor& x, const Tensor& xbar,
                             std::size_t cls, const Window& window);

// Monte-Carlo Shapley estimate from `permutations` random orderings of the
// window. Permutations are drawn in fixed-size chunks, each from its own
// stream seeded by (seed, chunk index), and chunk sums are reduced in chunk
// order, so the result does not depend on `workers`.
AttributionMap shapley_sampled(const Model& model, const Tensor& x,
                               const Tensor& xbar, std::size_t cls,
                               const Window& window, std::size_t permutations,
                               std::uint64_t seed, std::size_t workers = 1);

// Right Riemann sum of the path integral from xbar to the window-masked x.
AttributionMap integrated_gradients(const Model& model, const Tensor& x,
                                    const Tensor& xbar, std::size_t cls,
                                    std::size_t steps, const Window& window);

// Mean input gradient over `samples` Gaussian perturbations of the
// window-masked input.
AttributionMap smoothgrad(const Model& model, const Tensor& x, std::size_t cls,
                          std::size_t samples, double sigma, std::uint64_t seed,
                          const Window& window, const Tensor& xbar);

std::size_t resolve_target(const BackendConfig& cfg, const Model& model,
                           const Tensor& x);

// Dispatches to the configured backend.
AttributionMap attribute(const BackendConfig& cfg, const Model& model,
                         const Tensor& x, const Tensor& xbar, std::size_t cls,
                         const Window& window);

AttributionMap identity_attr(const BackendConfig& cfg, const Model& model,
                             const Tensor& x, const Tensor& xbar);
AttributionMap select_attr(const BackendConfig& cfg, const Model& truncated,
                           const Tensor& x, const Tensor& xbar);

// epsilon * m + (1 - epsilon) * m2.
AttributionMap join_maps(const AttributionMap& m, const AttributionMap& m2,
                         double epsilon);

// (attribution of x against baseline x2, attribution of x2 against x).
// With cfg.antijoin_shared_baseline both sides use `shared_baseline`
// (zeros when absent) instead.
AttributionResult antijoin(const BackendConfig& cfg, const Model& model,
                           const Tensor& x, const Tensor& x2,
                           const std::optional<Window>& window = std::nullopt,
                           const std::optional<Tensor>& shared_baseline = std::nullopt);

// Contrasts two models on one input: each marginal is
// logit_f(S + {i}) - logit_f2(S). Shapley backends only.
AttributionMap antijoin_cross_model(const BackendConfig& cfg, const Model& f,
                                    const Model& f2, const Tensor& x,
                                    const Tensor& xbar,
                                    const std::optional<Window>& window = std::nullopt);

}  // namespace interpalg
