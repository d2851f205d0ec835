#include "interpalg/attribution.h"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <exception>
#include <mutex>
#include <random>
#include <thread>

#include "coalition.h"
#include "interpalg/error.h"

namespace interpalg {

namespace internal {

CoalitionGame::CoalitionGame(const Model& model, std::span<const double> x,
                             std::span<const double> base, std::size_t cls)
    : model_(model), x_(x), base_(base), cls_(cls) {
  std::size_t first = 0;
  while (first < model.num_layers() && model.layer(first).kind == LayerKind::kFlatten) {
    ++first;
  }
  if (first < model.num_layers() && model.layer(first).kind == LayerKind::kDense) {
    affine_ = true;
    tail_begin_ = first + 1;
    const LayerSpec& dense = model.layer(first);
    width_ = dense.weight_shape[0];
    const std::size_t in = dense.weight_shape[1];
    base_pre_ = run_layers(model, 0, first + 1,
                           std::vector<double>(base.begin(), base.end()));
    columns_.resize(in * width_);
    for (std::size_t o = 0; o < width_; ++o) {
      for (std::size_t i = 0; i < in; ++i) columns_[i * width_ + o] = dense.weight[o * in + i];
    }
  }
}

CoalitionGame::State CoalitionGame::empty_state() const {
  if (affine_) return base_pre_;
  return State(base_.begin(), base_.end());
}

void CoalitionGame::add(State& state, std::size_t feature) const {
  if (!affine_) {
    state[feature] = x_[feature];
    return;
  }
  const double delta = x_[feature] - base_[feature];
  if (delta == 0.0) return;
  const double* col = columns_.data() + feature * width_;
  for (std::size_t o = 0; o < width_; ++o) state[o] += col[o] * delta;
}

double CoalitionGame::value(const State& state) const {
  if (!affine_) return logit(model_, state, cls_);
  return run_layers(model_, tail_begin_, model_.num_layers(), state)[cls_];
}

}  // namespace internal

namespace {

constexpr std::size_t kPermutationChunk = 64;

void check_pair(const Model& model, const Tensor& x, const Tensor& xbar) {
  require_same_shape(model.input_shape(), x.shape(), "attributed input");
  require_same_shape(x.shape(), xbar.shape(), "baseline");
}

void check_class(const Model& model, std::size_t cls) {
  if (cls >= model.num_classes()) {
    throw RangeError("target class " + std::to_string(cls) + " out of range for " +
                     std::to_string(model.num_classes()) + " classes");
  }
}

// Shapley weight |S|! (m - |S| - 1)! / m! for every coalition size.
std::vector<double> shapley_weights(std::size_t m) {
  std::vector<double> w(m, 0.0);
  for (std::size_t s = 0; s < m; ++s) {
    // 1 / (m * C(m-1, s))
    double binom = 1.0;
    for (std::size_t k = 1; k <= s; ++k) {
      binom = binom * static_cast<double>(m - 1 - s + k) / static_cast<double>(k);
    }
    w[s] = 1.0 / (static_cast<double>(m) * binom);
  }
  return w;
}

std::vector<double> masked_values(std::span<const double> x, std::span<const double> base,
                                  const std::vector<std::size_t>& players,
                                  std::size_t mask) {
  std::vector<double> v(base.begin(), base.end());
  for (std::size_t j = 0; j < players.size(); ++j) {
    if (mask >> j & 1u) v[players[j]] = x[players[j]];
  }
  return v;
}

// v(S) for every subset S of `players`, indexed by bitmask.
std::vector<double> enumerate_values(const Model& model, std::span<const double> x,
                                     std::span<const double> base,
                                     const std::vector<std::size_t>& players,
                                     std::size_t cls) {
  const std::size_t count = std::size_t{1} << players.size();
  std::vector<double> v(count);
  for (std::size_t mask = 0; mask < count; ++mask) {
    v[mask] = logit(model, masked_values(x, base, players, mask), cls);
  }
  return v;
}

void check_exact_window(const Window& w) {
  if (w.size() > kMaxExactWindow) {
    throw ConfigError("shapley-exact enumerates at most " +
                      std::to_string(kMaxExactWindow) + " window features, got " +
                      std::to_string(w.size()) +
                      "; shrink the window or use shapley-sampled");
  }
}

std::size_t resolve_workers(std::size_t requested, std::size_t chunks) {
  std::size_t n = requested == 0 ? std::max(1u, std::thread::hardware_concurrency())
                                 : requested;
  return std::max<std::size_t>(1, std::min(n, chunks));
}

// Runs fn(chunk) for chunk in [0, chunks) across `workers` threads.
template <typename Fn>
void for_each_chunk(std::size_t chunks, std::size_t workers, Fn&& fn) {
  if (workers <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) fn(c);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::mutex failure_mu;
  for (std::size_t t = 0; t < workers; ++t) {
    pool.emplace_back([&] {
      try {
        for (std::size_t c = next++; c < chunks; c = next++) fn(c);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

std::mt19937_64 chunk_stream(std::uint64_t seed, std::size_t chunk) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(chunk),
                    static_cast<std::uint32_t>(static_cast<std::uint64_t>(chunk) >> 32)};
  return std::mt19937_64(seq);
}

// Sums marginal contributions over `permutations` random orderings. `walk`
// gets one ordering of window positions and the chunk's accumulator.
template <typename Walk>
std::vector<double> sample_permutations(std::size_t m, std::size_t permutations,
                                        std::uint64_t seed, std::size_t workers,
                                        Walk&& walk) {
  const std::size_t chunks = (permutations + kPermutationChunk - 1) / kPermutationChunk;
  std::vector<std::vector<double>> partial(chunks, std::vector<double>(m, 0.0));
  for_each_chunk(chunks, resolve_workers(workers, chunks), [&](std::size_t c) {
    std::mt19937_64 rng = chunk_stream(seed, c);
    std::vector<std::size_t> order(m);
    const std::size_t begin = c * kPermutationChunk;
    const std::size_t end = std::min(permutations, begin + kPermutationChunk);
    for (std::size_t p = begin; p < end; ++p) {
      for (std::size_t j = 0; j < m; ++j) order[j] = j;
      std::shuffle(order.begin(), order.end(), rng);
      walk(order, partial[c]);
    }
  });
  std::vector<double> total(m, 0.0);
  for (const auto& part : partial) {
    for (std::size_t j = 0; j < m; ++j) total[j] += part[j];
  }
  return total;
}

AttributionMap scatter(const Shape& shape, const Window& w, const std::vector<double>& per_player) {
  AttributionMap out{shape, std::vector<double>(numel(shape), 0.0)};
  for (std::size_t j = 0; j < w.size(); ++j) out.values[w.indices()[j]] = per_player[j];
  return out;
}

void check_shapley_backend(const BackendConfig& cfg) {
  if (cfg.backend != Backend::kShapleyExact && cfg.backend != Backend::kShapleySampled) {
    throw ConfigError("cross-model anti-join needs a Shapley backend, got " +
                      std::string(backend_name(cfg.backend)));
  }
}

}  // namespace

AttributionResult AttributionResult::single(AttributionMap m) {
  return {ResultKind::kSingle, {std::move(m)}};
}

AttributionResult AttributionResult::pair(AttributionMap left, AttributionMap right) {
  require_same_shape(left.shape, right.shape, "anti-join pair");
  return {ResultKind::kPair, {std::move(left), std::move(right)}};
}

AttributionResult AttributionResult::tuple(std::vector<AttributionMap> maps) {
  for (const auto& m : maps) require_same_shape(maps.front().shape, m.shape, "anti-join tuple");
  return {ResultKind::kTuple, std::move(maps)};
}

std::string_view backend_name(Backend b) {
  switch (b) {
    case Backend::kShapleyExact:
      return "shapley-exact";
    case Backend::kShapleySampled:
      return "shapley-sampled";
    case Backend::kIntegratedGradients:
      return "integrated-gradients";
    case Backend::kSmoothGrad:
      return "smoothgrad";
  }
  return "?";
}

Backend parse_backend(std::string_view name) {
  for (Backend b : {Backend::kShapleyExact, Backend::kShapleySampled,
                    Backend::kIntegratedGradients, Backend::kSmoothGrad}) {
    if (backend_name(b) == name) return b;
  }
  throw ConfigError("unknown backend '" + std::string(name) +
                    "' (expected shapley-exact, shapley-sampled, "
                    "integrated-gradients or smoothgrad)");
}

void BackendConfig::validate() const {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
    throw ConfigError("epsilon must lie in [0, 1], got " + std::to_string(epsilon));
  }
  if (samples < 1) throw ConfigError("samples must be at least 1");
  if (steps < 1) throw ConfigError("steps must be at least 1");
  if (noise_count < 1) throw ConfigError("noise count must be at least 1");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw ConfigError("noise sigma must be finite and non-negative");
  }
}

Tensor masked_input(const Tensor& x, const Tensor& xbar,
                    std::span<const std::size_t> coalition) {
  require_same_shape(x.shape(), xbar.shape(), "masked input baseline");
  std::vector<double> out = xbar.values();
  for (std::size_t i : coalition) {
    if (i >= out.size()) {
      throw RangeError("coalition index " + std::to_string(i) + " out of range for " +
                       std::to_string(out.size()) + " features");
    }
    out[i] = x[i];
  }
  return Tensor(x.shape(), std::move(out));
}

AttributionMap shapley_exact(const Model& model, const Tensor& x, const Tensor& xbar,
                             std::size_t cls, const Window& window) {
  check_pair(model, x, xbar);
  check_class(model, cls);
  window.check_bounds(x.size());
  check_exact_window(window);
  const auto& players = window.indices();
  const std::size_t m = players.size();
  if (m == 0) return {x.shape(), std::vector<double>(x.size(), 0.0)};

  const std::vector<double> v = enumerate_values(model, x.data(), xbar.data(), players, cls);
  const std::vector<double> weight = shapley_weights(m);
  std::vector<double> phi(m, 0.0);
  for (std::size_t mask = 0; mask < v.size(); ++mask) {
    const auto size = static_cast<std::size_t>(std::popcount(mask));
    for (std::size_t j = 0; j < m; ++j) {
      if (mask >> j & 1u) continue;
      phi[j] += weight[size] * (v[mask | (std::size_t{1} << j)] - v[mask]);
    }
  }
  return scatter(x.shape(), window, phi);
}

AttributionMap shapley_sampled(const Model& model, const Tensor& x,
                               const Tensor& xbar, std::size_t cls,
                               const Window& window, std::size_t permutations,
                               std::uint64_t seed, std::size_t workers) {
  check_pair(model, x, xbar);
  check_class(model, cls);
  window.check_bounds(x.size());
  if (permutations < 1) throw ConfigError("shapley-sampled needs at least one permutation");
  const auto& players = window.indices();
  const std::size_t m = players.size();
  if (m == 0) return {x.shape(), std::vector<double>(x.size(), 0.0)};

  const internal::CoalitionGame game(model, x.data(), xbar.data(), cls);
  const double v_empty = game.value(game.empty_state());
  std::vector<double> total = sample_permutations(
      m, permutations, seed, workers,
      [&](const std::vector<std::size_t>& order, std::vector<double>& acc) {
        auto state = game.empty_state();
        double prev = v_empty;
        for (std::size_t j : order) {
          game.add(state, players[j]);
          const double cur = game.value(state);
          acc[j] += cur - prev;
          prev = cur;
        }
      });
  for (double& t : total) t /= static_cast<double>(permutations);
  return scatter(x.shape(), window, total);
}

AttributionMap integrated_gradients(const Model& model, const Tensor& x,
                                    const Tensor& xbar, std::size_t cls,
                                    std::size_t steps, const Window& window) {
  check_pair(model, x, xbar);
  check_class(model, cls);
  window.check_bounds(x.size());
  if (steps < 1) throw ConfigError("integrated-gradients needs at least one step");
  const Tensor xw = masked_input(x, xbar, window.indices());
  const std::size_t d = x.size();

  std::vector<double> mean(d, 0.0);
  std::vector<double> point(d);
  for (std::size_t k = 1; k <= steps; ++k) {
    const double alpha = static_cast<double>(k) / static_cast<double>(steps);
    for (std::size_t i = 0; i < d; ++i) point[i] = xbar[i] + alpha * (xw[i] - xbar[i]);
    const std::vector<double> g = input_gradient(model, point, cls);
    for (std::size_t i = 0; i < d; ++i) mean[i] += (g[i] - mean[i]) / static_cast<double>(k);
  }
  AttributionMap out{x.shape(), std::vector<double>(d, 0.0)};
  for (std::size_t i : window.indices()) out.values[i] = (xw[i] - xbar[i]) * mean[i];
  return out;
}

AttributionMap smoothgrad(const Model& model, const Tensor& x, std::size_t cls,
                          std::size_t samples, double sigma, std::uint64_t seed,
                          const Window& window, const Tensor& xbar) {
  check_pair(model, x, xbar);
  check_class(model, cls);
  window.check_bounds(x.size());
  if (samples < 1) throw ConfigError("smoothgrad needs at least one sample");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    throw ConfigError("smoothgrad sigma must be finite and non-negative");
  }
  const Tensor base = masked_input(x, xbar, window.indices());
  const std::size_t d = x.size();

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma > 0.0 ? sigma : 1.0);
  std::vector<double> mean(d, 0.0);
  std::vector<double> point(d);
  for (std::size_t s = 1; s <= samples; ++s) {
    for (std::size_t i = 0; i < d; ++i) point[i] = base[i] + (sigma > 0.0 ? noise(rng) : 0.0);
    const std::vector<double> g = input_gradient(model, point, cls);
    for (std::size_t i = 0; i < d; ++i) mean[i] += (g[i] - mean[i]) / static_cast<double>(s);
  }
  AttributionMap out{x.shape(), std::vector<double>(d, 0.0)};
  for (std::size_t i : window.indices()) out.values[i] = mean[i];
  return out;
}

std::size_t resolve_target(const BackendConfig& cfg, const Model& model,
                           const Tensor& x) {
  if (cfg.target_class) {
    check_class(model, *cfg.target_class);
    return *cfg.target_class;
  }
  return predict(model, x);
}

AttributionMap attribute(const BackendConfig& cfg, const Model& model,
                         const Tensor& x, const Tensor& xbar, std::size_t cls,
                         const Window& window) {
  cfg.validate();
  switch (cfg.backend) {
    case Backend::kShapleyExact:
      return shapley_exact(model, x, xbar, cls, window);
    case Backend::kShapleySampled:
      return shapley_sampled(model, x, xbar, cls, window, cfg.samples, cfg.seed, cfg.workers);
    case Backend::kIntegratedGradients:
      return integrated_gradients(model, x, xbar, cls, cfg.steps, window);
    case Backend::kSmoothGrad:
      return smoothgrad(model, x, cls, cfg.noise_count, cfg.noise_sigma, cfg.seed, window, xbar);
  }
  throw ConfigError("unknown backend");
}

AttributionMap identity_attr(const BackendConfig& cfg, const Model& model,
                             const Tensor& x, const Tensor& xbar) {
  check_pair(model, x, xbar);
  return attribute(cfg, model, x, xbar, resolve_target(cfg, model, x), Window::all(x.size()));
}

AttributionMap select_attr(const BackendConfig& cfg, const Model& truncated,
                           const Tensor& x, const Tensor& xbar) {
  return identity_attr(cfg, truncated, x, xbar);
}

AttributionMap join_maps(const AttributionMap& m, const AttributionMap& m2,
                         double epsilon) {
  require_same_shape(m.shape, m2.shape, "join operand");
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
    throw ConfigError("join epsilon must lie in [0, 1], got " + std::to_string(epsilon));
  }
  AttributionMap out{m.shape, std::vector<double>(m.values.size())};
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    out.values[i] = epsilon * m.values[i] + (1.0 - epsilon) * m2.values[i];
  }
  return out;
}

AttributionResult antijoin(const BackendConfig& cfg, const Model& model,
                           const Tensor& x, const Tensor& x2,
                           const std::optional<Window>& window,
                           const std::optional<Tensor>& shared_baseline) {
  require_same_shape(x.shape(), x2.shape(), "anti-join operand");
  const Window w = window ? *window : Window::all(x.size());
  if (cfg.antijoin_shared_baseline) {
    const Tensor base = shared_baseline ? *shared_baseline : Tensor::zeros(x.shape());
    return AttributionResult::pair(
        attribute(cfg, model, x, base, resolve_target(cfg, model, x), w),
        attribute(cfg, model, x2, base, resolve_target(cfg, model, x2), w));
  }
  return AttributionResult::pair(
      attribute(cfg, model, x, x2, resolve_target(cfg, model, x), w),
      attribute(cfg, model, x2, x, resolve_target(cfg, model, x2), w));
}

AttributionMap antijoin_cross_model(const BackendConfig& cfg, const Model& f,
                                    const Model& f2, const Tensor& x,
                                    const Tensor& xbar,
                                    const std::optional<Window>& window) {
  cfg.validate();
  check_shapley_backend(cfg);
  check_pair(f, x, xbar);
  require_same_shape(f.input_shape(), f2.input_shape(), "cross-model input");
  if (f.num_classes() != f2.num_classes()) {
    throw ShapeError("cross-model anti-join needs equal class counts, got " +
                     std::to_string(f.num_classes()) + " and " +
                     std::to_string(f2.num_classes()));
  }
  const std::size_t cls = resolve_target(cfg, f, x);
  const Window w = window ? *window : Window::all(x.size());
  w.check_bounds(x.size());
  const auto& players = w.indices();
  const std::size_t m = players.size();
  if (m == 0) return {x.shape(), std::vector<double>(x.size(), 0.0)};

  if (cfg.backend == Backend::kShapleyExact) {
    check_exact_window(w);
    const auto vf = enumerate_values(f, x.data(), xbar.data(), players, cls);
    const auto vf2 = enumerate_values(f2, x.data(), xbar.data(), players, cls);
    const std::vector<double> weight = shapley_weights(m);
    std::vector<double> phi(m, 0.0);
    for (std::size_t mask = 0; mask < vf.size(); ++mask) {
      const auto size = static_cast<std::size_t>(std::popcount(mask));
      for (std::size_t j = 0; j < m; ++j) {
        if (mask >> j & 1u) continue;
        phi[j] += weight[size] * (vf[mask | (std::size_t{1} << j)] - vf2[mask]);
      }
    }
    return scatter(x.shape(), w, phi);
  }

  const internal::CoalitionGame game(f, x.data(), xbar.data(), cls);
  const internal::CoalitionGame game2(f2, x.data(), xbar.data(), cls);
  std::vector<double> total = sample_permutations(
      m, cfg.samples, cfg.seed, cfg.workers,
      [&](const std::vector<std::size_t>& order, std::vector<double>& acc) {
        auto state = game.empty_state();
        auto state2 = game2.empty_state();
        for (std::size_t j : order) {
          const double before = game2.value(state2);
          game.add(state, players[j]);
          game2.add(state2, players[j]);
          acc[j] += game.value(state) - before;
        }
      });
  for (double& t : total) t /= static_cast<double>(cfg.samples);
  return scatter(x.shape(), w, total);
}

}  // namespace interpalg
