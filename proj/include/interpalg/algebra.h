#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <variant>
#include <vector>

#include "interpalg/attribution.h"
#include "interpalg/error.h"
#include "interpalg/nn.h"
#include "interpalg/tensor.h"
#include "interpalg/window.h"

namespace interpalg {

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

// phi(x; xbar, f) with f and x named by registry refs.
struct IdentityNode {
  std::string model;
  std::string input;
};
struct ProjectNode {
  ExprPtr child;
  Window window;
};
struct SelectNode {
  ExprPtr child;
  std::size_t layer = 0;
};
struct JoinNode {
  ExprPtr left;
  ExprPtr right;
};
struct AntiJoinNode {
  ExprPtr left;
  ExprPtr right;
  bool cross_model = false;
};

// Immutable operator tree. Nodes are shared, never mutated.
struct Expr {
  std::variant<IdentityNode, ProjectNode, SelectNode, JoinNode, AntiJoinNode> node;
};

ExprPtr make_identity(std::string model, std::string input);
ExprPtr make_project(ExprPtr child, Window window);
ExprPtr make_select(ExprPtr child, std::size_t layer);
ExprPtr make_join(ExprPtr left, ExprPtr right);
ExprPtr make_antijoin(ExprPtr left, ExprPtr right, bool cross_model = false);

bool expr_equal(const Expr& a, const Expr& b);
// Constructor-tree text, e.g. "join(select(identity(f, x), 2), identity(f, x'))".
std::string to_string(const Expr& e);

// A normalized leaf: Project(Select(Identity)) with either wrapper optional.
struct LeafPlan {
  std::string model;
  std::string input;
  std::optional<std::size_t> layer;
  std::optional<Window> window;

  friend bool operator==(const LeafPlan&, const LeafPlan&) = default;
};

// Returns the plan when `e` is a canonical leaf, nullopt otherwise.
std::optional<LeafPlan> as_leaf(const Expr& e);
// Leaves of a normalized expression, left to right.
std::vector<LeafPlan> leaf_plans(const Expr& e);

// Caches truncated models per (model, stage, training data, hyperparameters).
// Concurrent readers share finished entries; concurrent requests for one key
// train once.
class TruncationCache {
 public:
  struct Entry {
    std::shared_ptr<const Model> model;
    double train_accuracy = 0.0;
  };

  Entry get(const std::string& model_ref, const Model& model, std::size_t stage,
            const Dataset& data, const HeadHyper& hyper);
  std::size_t size() const;

 private:
  struct Slot {
    std::once_flag once;
    Entry entry;
  };
  using Key = std::tuple<std::string, std::uint64_t, std::size_t, std::uint64_t>;

  mutable std::mutex mu_;
  std::map<Key, std::shared_ptr<Slot>> slots_;
};

std::uint64_t fingerprint(const Model& model);
std::uint64_t fingerprint(const Dataset& data, const HeadHyper& hyper);

// Models, inputs and truncations that expressions refer to by name.
class Registry {
 public:
  void add_model(const std::string& ref, std::shared_ptr<const Model> model);
  void add_input(const std::string& ref, Tensor input);
  void add_truncated(const std::string& model_ref, std::size_t stage,
                     std::shared_ptr<const Model> truncated);
  // Lets truncated(model_ref, l) train missing heads through `cache`.
  void attach_training_data(const std::string& model_ref, Dataset data,
                            HeadHyper hyper, std::shared_ptr<TruncationCache> cache);
  void set_baseline(Tensor baseline);

  const Model* find_model(const std::string& ref) const;
  const Tensor* find_input(const std::string& ref) const;
  const Model& model(const std::string& ref) const;
  const Tensor& input(const std::string& ref) const;
  // Model used for stage `stage` of `model_ref`: the original model when
  // stage is its last stage, else a registered or cached truncation.
  // Throws NotFoundError when neither exists.
  std::shared_ptr<const Model> model_at(const std::string& model_ref,
                                        std::size_t stage) const;
  bool has_truncation(const std::string& model_ref, std::size_t stage) const;
  // Configured baseline or zeros shaped like `like`.
  Tensor baseline_for(const Tensor& like) const;
  const std::optional<Tensor>& baseline() const { return baseline_; }

 private:
  struct Training {
    Dataset data;
    HeadHyper hyper;
    std::shared_ptr<TruncationCache> cache;
  };

  std::map<std::string, std::shared_ptr<const Model>> models_;
  std::map<std::string, Tensor> inputs_;
  std::map<std::pair<std::string, std::size_t>, std::shared_ptr<const Model>> truncated_;
  std::map<std::string, Training> training_;
  std::optional<Tensor> baseline_;
};

enum class ErrorKind {
  kWindowMismatch,
  kLayerOrder,
  kMixedJoinAntiJoin,
  kUndefinedComposition,
  kUnknownRef,
  kShapeMismatch,
  kLayerRange,
};

std::string_view error_kind_name(ErrorKind kind);
// Fixed per kind.
std::string_view remediation(ErrorKind kind);
// The composition rule a kind enforces.
std::string_view violated_rule(ErrorKind kind);

struct ValidationError {
  ErrorKind kind;
  std::string path;  // "" for the root, then "/left", "/child", ...
  const Expr* node = nullptr;
  std::string message;
};

std::string describe(const ValidationError& e);

// Every rule violation in `e`; empty when the expression is valid.
std::vector<ValidationError> validate(const ExprPtr& e, const Registry& registry);

// Thrown by evaluate on an invalid expression.
class InvalidExpression : public Error {
 public:
  explicit InvalidExpression(std::vector<ValidationError> errors);
  const std::vector<ValidationError>& errors() const { return errors_; }

 private:
  std::vector<ValidationError> errors_;
};

// Pushes projections and selections to the leaves, intersects stacked
// windows, keeps the outer of stacked selections, and right-associates
// join and anti-join chains. Idempotent.
ExprPtr normalize(const ExprPtr& e);

struct Evaluation {
  AttributionResult result;
  ExprPtr normalized;
  std::vector<std::size_t> target_classes;  // one per map
  std::vector<std::string> flags;           // e.g. "cross-model", "mixed-layers"
};

// Validates, normalizes and evaluates `e`.
Evaluation evaluate(const ExprPtr& e, const BackendConfig& cfg, const Registry& registry);

}  // namespace interpalg
