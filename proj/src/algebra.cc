#include "interpalg/algebra.h"

#include <algorithm>
#include <cstring>
#include <set>
#include <sstream>
#include <utility>

namespace interpalg {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

ExprPtr make(auto node) { return std::make_shared<const Expr>(Expr{std::move(node)}); }

std::string window_text(const Window& w) {
  if (w.rect()) {
    const Rect& r = *w.rect();
    return "rect(" + std::to_string(r.r0) + "," + std::to_string(r.c0) + "," +
           std::to_string(r.r1) + "," + std::to_string(r.c1) + ")";
  }
  std::string out = "{";
  for (std::size_t i = 0; i < w.indices().size(); ++i) {
    if (i) out += ",";
    out += std::to_string(w.indices()[i]);
  }
  return out + "}";
}

constexpr std::uint64_t kFnvOffset = 1469598103934665603ull;

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t fnv_doubles(std::uint64_t h, const std::vector<double>& v) {
  return fnv1a(h, v.data(), v.size() * sizeof(double));
}

std::uint64_t fnv_sizes(std::uint64_t h, const std::vector<std::size_t>& v) {
  for (std::size_t x : v) {
    const std::uint64_t u = x;
    h = fnv1a(h, &u, sizeof u);
  }
  return fnv1a(h, "|", 1);
}

}  // namespace

ExprPtr make_identity(std::string model, std::string input) {
  return make(IdentityNode{std::move(model), std::move(input)});
}
ExprPtr make_project(ExprPtr child, Window window) {
  return make(ProjectNode{std::move(child), std::move(window)});
}
ExprPtr make_select(ExprPtr child, std::size_t layer) {
  return make(SelectNode{std::move(child), layer});
}
ExprPtr make_join(ExprPtr left, ExprPtr right) {
  return make(JoinNode{std::move(left), std::move(right)});
}
ExprPtr make_antijoin(ExprPtr left, ExprPtr right, bool cross_model) {
  return make(AntiJoinNode{std::move(left), std::move(right), cross_model});
}

bool expr_equal(const Expr& a, const Expr& b) {
  if (a.node.index() != b.node.index()) return false;
  return std::visit(
      Overloaded{
          [&](const IdentityNode& n) {
            const auto& m = std::get<IdentityNode>(b.node);
            return n.model == m.model && n.input == m.input;
          },
          [&](const ProjectNode& n) {
            const auto& m = std::get<ProjectNode>(b.node);
            return n.window == m.window && expr_equal(*n.child, *m.child);
          },
          [&](const SelectNode& n) {
            const auto& m = std::get<SelectNode>(b.node);
            return n.layer == m.layer && expr_equal(*n.child, *m.child);
          },
          [&](const JoinNode& n) {
            const auto& m = std::get<JoinNode>(b.node);
            return expr_equal(*n.left, *m.left) && expr_equal(*n.right, *m.right);
          },
          [&](const AntiJoinNode& n) {
            const auto& m = std::get<AntiJoinNode>(b.node);
            return n.cross_model == m.cross_model && expr_equal(*n.left, *m.left) &&
                   expr_equal(*n.right, *m.right);
          },
      },
      a.node);
}

std::string to_string(const Expr& e) {
  return std::visit(
      Overloaded{
          [](const IdentityNode& n) { return "identity(" + n.model + ", " + n.input + ")"; },
          [](const ProjectNode& n) {
            return "project(" + to_string(*n.child) + ", " + window_text(n.window) + ")";
          },
          [](const SelectNode& n) {
            return "select(" + to_string(*n.child) + ", " + std::to_string(n.layer) + ")";
          },
          [](const JoinNode& n) {
            return "join(" + to_string(*n.left) + ", " + to_string(*n.right) + ")";
          },
          [](const AntiJoinNode& n) {
            return std::string(n.cross_model ? "antijoin_cross(" : "antijoin(") +
                   to_string(*n.left) + ", " + to_string(*n.right) + ")";
          },
      },
      e.node);
}

std::optional<LeafPlan> as_leaf(const Expr& e) {
  LeafPlan plan;
  const Expr* cur = &e;
  if (const auto* p = std::get_if<ProjectNode>(&cur->node)) {
    plan.window = p->window;
    cur = p->child.get();
  }
  if (const auto* s = std::get_if<SelectNode>(&cur->node)) {
    plan.layer = s->layer;
    cur = s->child.get();
  }
  const auto* id = std::get_if<IdentityNode>(&cur->node);
  if (!id) return std::nullopt;
  plan.model = id->model;
  plan.input = id->input;
  return plan;
}

std::vector<LeafPlan> leaf_plans(const Expr& e) {
  if (auto leaf = as_leaf(e)) return {*leaf};
  std::vector<LeafPlan> out;
  auto append = [&](const ExprPtr& child) {
    auto sub = leaf_plans(*child);
    out.insert(out.end(), sub.begin(), sub.end());
  };
  if (const auto* j = std::get_if<JoinNode>(&e.node)) {
    append(j->left);
    append(j->right);
  } else if (const auto* a = std::get_if<AntiJoinNode>(&e.node)) {
    append(a->left);
    append(a->right);
  } else {
    throw ConfigError("expression is not normalized: " + to_string(e));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Truncation cache and registry

std::uint64_t fingerprint(const Model& model) {
  const ModelSpec& s = model.spec();
  std::uint64_t h = fnv1a(kFnvOffset, s.name.data(), s.name.size());
  h = fnv_sizes(h, s.input_shape);
  for (const auto& label : s.class_labels) h = fnv1a(h, label.data(), label.size() + 1);
  for (const LayerSpec& l : s.layers) {
    const auto kind = static_cast<std::uint64_t>(l.kind);
    h = fnv1a(h, &kind, sizeof kind);
    h = fnv_sizes(h, l.weight_shape);
    h = fnv_doubles(h, l.weight);
    h = fnv_doubles(h, l.bias);
  }
  return fnv_sizes(h, s.stage_boundaries);
}

std::uint64_t fingerprint(const Dataset& data, const HeadHyper& hyper) {
  std::uint64_t h = kFnvOffset;
  for (const Tensor& x : data.inputs) {
    h = fnv_sizes(h, x.shape());
    h = fnv_doubles(h, x.values());
  }
  h = fnv_sizes(h, data.labels);
  const std::uint64_t epochs = hyper.epochs;
  h = fnv1a(h, &epochs, sizeof epochs);
  h = fnv1a(h, &hyper.learning_rate, sizeof hyper.learning_rate);
  return fnv1a(h, &hyper.seed, sizeof hyper.seed);
}

TruncationCache::Entry TruncationCache::get(const std::string& model_ref, const Model& model,
                                            std::size_t stage, const Dataset& data,
                                            const HeadHyper& hyper) {
  const Key key{model_ref, fingerprint(model), stage, fingerprint(data, hyper)};
  std::shared_ptr<Slot> slot;
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto& s = slots_[key];
    if (!s) s = std::make_shared<Slot>();
    slot = s;
  }
  std::call_once(slot->once, [&] {
    Truncation t = truncate(model, stage, data, hyper);
    slot->entry = {std::make_shared<const Model>(std::move(t.model)), t.train_accuracy};
  });
  return slot->entry;
}

std::size_t TruncationCache::size() const {
  std::lock_guard<std::mutex> lock(mu_);
  return slots_.size();
}

void Registry::add_model(const std::string& ref, std::shared_ptr<const Model> model) {
  models_[ref] = std::move(model);
}

void Registry::add_input(const std::string& ref, Tensor input) {
  inputs_.insert_or_assign(ref, std::move(input));
}

void Registry::add_truncated(const std::string& model_ref, std::size_t stage,
                             std::shared_ptr<const Model> truncated) {
  truncated_[{model_ref, stage}] = std::move(truncated);
}

void Registry::attach_training_data(const std::string& model_ref, Dataset data,
                                    HeadHyper hyper, std::shared_ptr<TruncationCache> cache) {
  if (!cache) cache = std::make_shared<TruncationCache>();
  training_.insert_or_assign(model_ref, Training{std::move(data), hyper, std::move(cache)});
}

void Registry::set_baseline(Tensor baseline) { baseline_ = std::move(baseline); }

const Model* Registry::find_model(const std::string& ref) const {
  auto it = models_.find(ref);
  return it == models_.end() ? nullptr : it->second.get();
}

const Tensor* Registry::find_input(const std::string& ref) const {
  auto it = inputs_.find(ref);
  return it == inputs_.end() ? nullptr : &it->second;
}

const Model& Registry::model(const std::string& ref) const {
  const Model* m = find_model(ref);
  if (!m) throw NotFoundError("unknown model '" + ref + "'");
  return *m;
}

const Tensor& Registry::input(const std::string& ref) const {
  const Tensor* x = find_input(ref);
  if (!x) throw NotFoundError("unknown input '" + ref + "'");
  return *x;
}

std::shared_ptr<const Model> Registry::model_at(const std::string& model_ref,
                                                std::size_t stage) const {
  auto it = models_.find(model_ref);
  if (it == models_.end()) throw NotFoundError("unknown model '" + model_ref + "'");
  const Model& m = *it->second;
  if (stage < 1 || stage > m.num_stages()) {
    throw RangeError("stage " + std::to_string(stage) + " is outside 1.." +
                     std::to_string(m.num_stages()) + " for model '" + model_ref + "'");
  }
  if (stage == m.num_stages()) return it->second;
  if (auto t = truncated_.find({model_ref, stage}); t != truncated_.end()) return t->second;
  if (auto t = training_.find(model_ref); t != training_.end()) {
    return t->second.cache->get(model_ref, m, stage, t->second.data, t->second.hyper).model;
  }
  throw NotFoundError("no truncated model for '" + model_ref + "' at stage " +
                      std::to_string(stage) + "; run truncate for that stage first");
}

bool Registry::has_truncation(const std::string& model_ref, std::size_t stage) const {
  const Model* m = find_model(model_ref);
  if (!m) return false;
  if (stage == m->num_stages()) return true;
  return truncated_.count({model_ref, stage}) > 0 || training_.count(model_ref) > 0;
}

Tensor Registry::baseline_for(const Tensor& like) const {
  if (!baseline_) return Tensor::zeros(like.shape());
  require_same_shape(like.shape(), baseline_->shape(), "baseline");
  return *baseline_;
}

// ---------------------------------------------------------------------------
// Validation

std::string_view error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kWindowMismatch: return "window-mismatch";
    case ErrorKind::kLayerOrder: return "layer-order";
    case ErrorKind::kMixedJoinAntiJoin: return "mixed-join-antijoin";
    case ErrorKind::kUndefinedComposition: return "undefined-composition";
    case ErrorKind::kUnknownRef: return "unknown-ref";
    case ErrorKind::kShapeMismatch: return "shape-mismatch";
    case ErrorKind::kLayerRange: return "layer-range";
  }
  return "unknown";
}

std::string_view remediation(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kWindowMismatch:
      return "apply the same window to both operands, or move the where clause above the join";
    case ErrorKind::kLayerOrder:
      return "order nested selections so the outer layer is not larger than the inner one";
    case ErrorKind::kMixedJoinAntiJoin:
      return "split the query: evaluate the join and the anti-join separately";
    case ErrorKind::kUndefinedComposition:
      return "anti-join inputs under one model, or one input under two models";
    case ErrorKind::kUnknownRef:
      return "bind or register the missing model or input";
    case ErrorKind::kShapeMismatch:
      return "use inputs and windows that match the model's input shape";
    case ErrorKind::kLayerRange:
      return "select a stage between 1 and the model's stage count";
  }
  return "";
}

std::string_view violated_rule(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kWindowMismatch:
      return "projection with join/anti-join is conditional: w = w' in P_w(x) join P_w'(x')";
    case ErrorKind::kLayerOrder:
      return "selection with selection is conditional: sigma_l sigma_l'(x) requires l <= l'";
    case ErrorKind::kMixedJoinAntiJoin:
      return "join with anti-join is undefined";
    case ErrorKind::kUndefinedComposition:
      return "anti-join is defined for one model over inputs x, x' or for models f, f' over one input";
    case ErrorKind::kUnknownRef:
      return "every leaf names a registered model and input";
    case ErrorKind::kShapeMismatch:
      return "every leaf's input matches its model's input shape";
    case ErrorKind::kLayerRange:
      return "selection sigma_l requires 1 <= l <= n";
  }
  return "";
}

std::string describe(const ValidationError& e) {
  return std::string(error_kind_name(e.kind)) + " at " + (e.path.empty() ? "/" : e.path) +
         ": " + e.message + " (rule: " + std::string(violated_rule(e.kind)) +
         "; fix: " + std::string(remediation(e.kind)) + ")";
}

namespace {

std::string join_messages(const std::vector<ValidationError>& errors) {
  std::string out = "invalid expression";
  for (const auto& e : errors) out += "\n  " + describe(e);
  return out;
}

enum class Combinator { kNone, kJoin, kAntiJoin };

struct PathSelect {
  std::size_t layer;
  const Expr* node;
  std::string path;
};

struct PathWindow {
  const Window* window;
  const Expr* node;
  std::string path;
};

struct Context {
  std::optional<std::size_t> outermost_select;
  std::optional<std::size_t> nearest_select;
  Combinator enclosing = Combinator::kNone;
  std::vector<PathSelect> selects;
  std::vector<PathWindow> windows;
};

class Validator {
 public:
  explicit Validator(const Registry& registry) : registry_(registry) {}

  std::vector<ValidationError> run(const ExprPtr& e) {
    visit(e, "", Context{});
    return std::move(errors_);
  }

 private:
  void add(ErrorKind kind, const std::string& path, const Expr* node, std::string message) {
    errors_.push_back({kind, path, node, std::move(message)});
  }

  void visit(const ExprPtr& e, const std::string& path, Context ctx) {
    std::visit(
        Overloaded{
            [&](const IdentityNode& n) { visit_leaf(n, e.get(), path, ctx); },
            [&](const ProjectNode& n) {
              ctx.windows.push_back({&n.window, e.get(), path});
              visit(n.child, path + "/child", ctx);
            },
            [&](const SelectNode& n) {
              if (ctx.nearest_select && *ctx.nearest_select > n.layer) {
                add(ErrorKind::kLayerOrder, path, e.get(),
                    "sigma_" + std::to_string(*ctx.nearest_select) + " applied over sigma_" +
                        std::to_string(n.layer));
              }
              if (n.layer == 0) {
                add(ErrorKind::kLayerRange, path, e.get(), "stage 0 does not exist");
              }
              ctx.nearest_select = n.layer;
              if (!ctx.outermost_select) ctx.outermost_select = n.layer;
              ctx.selects.push_back({n.layer, e.get(), path});
              visit(n.child, path + "/child", ctx);
            },
            [&](const JoinNode& n) {
              visit_binary(e, Combinator::kJoin, n.left, n.right, path, ctx);
            },
            [&](const AntiJoinNode& n) {
              visit_binary(e, Combinator::kAntiJoin, n.left, n.right, path, ctx);
            },
        },
        e->node);
  }

  void visit_leaf(const IdentityNode& n, const Expr* node, const std::string& path,
                  const Context& ctx) {
    const Model* m = registry_.find_model(n.model);
    const Tensor* x = registry_.find_input(n.input);
    if (!m) add(ErrorKind::kUnknownRef, path, node, "unknown model '" + n.model + "'");
    if (!x) add(ErrorKind::kUnknownRef, path, node, "unknown input '" + n.input + "'");
    if (m && x && m->input_shape() != x->shape()) {
      add(ErrorKind::kShapeMismatch, path, node,
          "input '" + n.input + "' has shape " + shape_to_string(x->shape()) + " but model '" +
              n.model + "' expects " + shape_to_string(m->input_shape()));
    }
    if (x) {
      for (const PathWindow& w : ctx.windows) {
        if (w.window->empty() || w.window->indices().back() < x->size()) continue;
        if (!reported_window_.insert({w.node, n.input}).second) continue;
        add(ErrorKind::kShapeMismatch, w.path, w.node,
            "window index " + std::to_string(w.window->indices().back()) +
                " is outside input '" + n.input + "' with " + std::to_string(x->size()) +
                " features");
      }
    }
    if (!m) return;
    for (const PathSelect& s : ctx.selects) {
      if (s.layer == 0 || s.layer <= m->num_stages()) continue;
      if (!reported_range_.insert({s.node, n.model}).second) continue;
      add(ErrorKind::kLayerRange, s.path, s.node,
          "stage " + std::to_string(s.layer) + " is outside 1.." +
              std::to_string(m->num_stages()) + " for model '" + n.model + "'");
    }
  }

  void visit_binary(const ExprPtr& e, Combinator kind, const ExprPtr& left,
                    const ExprPtr& right, const std::string& path, Context ctx) {
    if (ctx.enclosing != Combinator::kNone && ctx.enclosing != kind) {
      add(ErrorKind::kMixedJoinAntiJoin, path, e.get(),
          kind == Combinator::kJoin ? "join nested inside an anti-join"
                                    : "anti-join nested inside a join");
    }
    check_operands(e.get(), left, right, path);
    if (kind == Combinator::kAntiJoin && ctx.enclosing != Combinator::kAntiJoin) {
      check_antijoin_chain(e, path, ctx);
    }
    ctx.enclosing = kind;
    visit(left, path + "/left", ctx);
    visit(right, path + "/right", ctx);
  }

  struct LeafWindow {
    std::optional<Window> window;
    std::string input;
  };

  static void collect_windows(const ExprPtr& e, std::optional<Window> acc,
                              std::vector<LeafWindow>& out) {
    std::visit(Overloaded{
                   [&](const IdentityNode& n) { out.push_back({acc, n.input}); },
                   [&](const ProjectNode& n) {
                     collect_windows(n.child, acc ? acc->intersect(n.window) : n.window, out);
                   },
                   [&](const SelectNode& n) { collect_windows(n.child, acc, out); },
                   [&](const JoinNode& n) {
                     collect_windows(n.left, acc, out);
                     collect_windows(n.right, acc, out);
                   },
                   [&](const AntiJoinNode& n) {
                     collect_windows(n.left, acc, out);
                     collect_windows(n.right, acc, out);
                   },
               },
               e->node);
  }

  // Distinct effective windows and input shapes of one operand.
  struct OperandSummary {
    std::set<std::vector<std::size_t>> windows;
    std::set<Shape> shapes;
    bool complete = true;
  };

  OperandSummary summarize(const ExprPtr& operand) const {
    std::vector<LeafWindow> leaves;
    collect_windows(operand, std::nullopt, leaves);
    OperandSummary s;
    for (const LeafWindow& l : leaves) {
      const Tensor* x = registry_.find_input(l.input);
      if (!x) {
        s.complete = false;
        continue;
      }
      s.shapes.insert(x->shape());
      s.windows.insert(l.window ? l.window->indices() : Window::all(x->size()).indices());
    }
    return s;
  }

  void check_operands(const Expr* node, const ExprPtr& left, const ExprPtr& right,
                      const std::string& path) {
    const OperandSummary l = summarize(left);
    const OperandSummary r = summarize(right);
    if (!l.complete || !r.complete) return;
    if (l.shapes.size() == 1 && r.shapes.size() == 1 && l.shapes != r.shapes) {
      add(ErrorKind::kShapeMismatch, path, node,
          "operands have input shapes " + shape_to_string(*l.shapes.begin()) + " and " +
              shape_to_string(*r.shapes.begin()));
      return;
    }
    if (l.windows.size() == 1 && r.windows.size() == 1 && l.windows != r.windows) {
      add(ErrorKind::kWindowMismatch, path, node,
          "operand windows differ after pushdown (" +
              std::to_string(l.windows.begin()->size()) + " vs " +
              std::to_string(r.windows.begin()->size()) + " features)");
    }
  }

  void check_antijoin_chain(const ExprPtr& e, const std::string& path, const Context& ctx) {
    ExprPtr scoped = ctx.outermost_select ? make_select(e, *ctx.outermost_select) : e;
    const ExprPtr norm = normalize(scoped);
    // Mixed chains are reported separately.
    if (!std::holds_alternative<AntiJoinNode>(norm->node)) return;
    std::vector<LeafPlan> leaves;
    try {
      leaves = leaf_plans(*norm);
    } catch (const Error&) {
      return;
    }
    auto effective_layer = [&](const LeafPlan& p) -> std::optional<std::size_t> {
      const Model* m = registry_.find_model(p.model);
      if (p.layer && m && *p.layer >= m->num_stages()) return std::nullopt;
      return p.layer;
    };
    const bool flagged = std::get<AntiJoinNode>(e->node).cross_model;
    if (leaves.size() == 2) {
      const LeafPlan& a = leaves[0];
      const LeafPlan& b = leaves[1];
      const bool same_input = a.input == b.input;
      const bool same_model = a.model == b.model && effective_layer(a) == effective_layer(b);
      if (flagged && !(same_input && !same_model)) {
        add(ErrorKind::kUndefinedComposition, path, e.get(),
            "cross-model anti-join needs one input under two different models");
      } else if (!same_input && a.model != b.model) {
        add(ErrorKind::kUndefinedComposition, path, e.get(),
            "anti-join of different inputs under different models '" + a.model + "' and '" +
                b.model + "'");
      }
      return;
    }
    if (flagged) {
      add(ErrorKind::kUndefinedComposition, path, e.get(),
          "cross-model anti-join takes exactly two operands, got " +
              std::to_string(leaves.size()));
      return;
    }
    for (const LeafPlan& p : leaves) {
      if (p.model != leaves.front().model) {
        add(ErrorKind::kUndefinedComposition, path, e.get(),
            "anti-join chain mixes models '" + leaves.front().model + "' and '" + p.model + "'");
        return;
      }
    }
  }

  const Registry& registry_;
  std::vector<ValidationError> errors_;
  std::set<std::pair<const Expr*, std::string>> reported_range_;
  std::set<std::pair<const Expr*, std::string>> reported_window_;
};

}  // namespace

std::vector<ValidationError> validate(const ExprPtr& e, const Registry& registry) {
  return Validator(registry).run(e);
}

InvalidExpression::InvalidExpression(std::vector<ValidationError> errors)
    : Error(join_messages(errors)), errors_(std::move(errors)) {}

// ---------------------------------------------------------------------------
// Normalization

namespace {

void splice(const ExprPtr& e, bool anti, std::vector<ExprPtr>& out) {
  if (!anti) {
    if (const auto* j = std::get_if<JoinNode>(&e->node)) {
      splice(j->left, anti, out);
      splice(j->right, anti, out);
      return;
    }
  } else if (const auto* a = std::get_if<AntiJoinNode>(&e->node)) {
    splice(a->left, anti, out);
    splice(a->right, anti, out);
    return;
  }
  out.push_back(e);
}

bool structurally_cross(const std::vector<ExprPtr>& ops) {
  if (ops.size() != 2) return false;
  const auto a = as_leaf(*ops[0]);
  const auto b = as_leaf(*ops[1]);
  return a && b && a->input == b->input && (a->model != b->model || a->layer != b->layer);
}

ExprPtr normalize_rec(const ExprPtr& e, const std::optional<Window>& window,
                      std::optional<std::size_t> layer) {
  return std::visit(
      Overloaded{
          [&](const IdentityNode& n) {
            ExprPtr out = make_identity(n.model, n.input);
            if (layer) out = make_select(out, *layer);
            if (window) out = make_project(out, *window);
            return out;
          },
          [&](const ProjectNode& n) {
            return normalize_rec(n.child, window ? window->intersect(n.window) : n.window,
                                 layer);
          },
          [&](const SelectNode& n) {
            return normalize_rec(n.child, window, layer ? layer : n.layer);
          },
          [&](const JoinNode& n) {
            std::vector<ExprPtr> ops;
            splice(normalize_rec(n.left, window, layer), false, ops);
            splice(normalize_rec(n.right, window, layer), false, ops);
            ExprPtr acc = ops.back();
            for (std::size_t i = ops.size() - 1; i-- > 0;) acc = make_join(ops[i], acc);
            return acc;
          },
          [&](const AntiJoinNode& n) {
            std::vector<ExprPtr> ops;
            splice(normalize_rec(n.left, window, layer), true, ops);
            splice(normalize_rec(n.right, window, layer), true, ops);
            const bool cross = structurally_cross(ops);
            ExprPtr acc = ops.back();
            for (std::size_t i = ops.size() - 1; i-- > 0;) {
              acc = make_antijoin(ops[i], acc, cross);
            }
            return acc;
          },
      },
      e->node);
}

}  // namespace

ExprPtr normalize(const ExprPtr& e) { return normalize_rec(e, std::nullopt, std::nullopt); }

// ---------------------------------------------------------------------------
// Evaluation

namespace {

struct ResolvedLeaf {
  std::shared_ptr<const Model> model;
  const Model* full = nullptr;
  const Tensor* input = nullptr;
  Window window;
  std::optional<std::size_t> layer;  // nullopt when the full model is used
};

ResolvedLeaf resolve(const LeafPlan& plan, const Registry& registry) {
  ResolvedLeaf r;
  r.full = &registry.model(plan.model);
  r.input = &registry.input(plan.input);
  const std::size_t n = r.full->num_stages();
  const std::size_t stage = plan.layer ? *plan.layer : n;
  r.model = registry.model_at(plan.model, stage);
  if (stage < n) r.layer = stage;
  r.window = plan.window ? *plan.window : Window::all(r.input->size());
  return r;
}

std::size_t target_for(const BackendConfig& cfg, const ResolvedLeaf& leaf) {
  const std::size_t cls = resolve_target(cfg, *leaf.full, *leaf.input);
  if (cls >= leaf.model->num_classes()) {
    throw RangeError("target class " + std::to_string(cls) + " is outside the " +
                     std::to_string(leaf.model->num_classes()) + " classes of '" +
                     leaf.model->name() + "'");
  }
  return cls;
}

}  // namespace

Evaluation evaluate(const ExprPtr& e, const BackendConfig& cfg, const Registry& registry) {
  if (auto errors = validate(e, registry); !errors.empty()) {
    throw InvalidExpression(std::move(errors));
  }
  cfg.validate();
  Evaluation out;
  out.normalized = normalize(e);
  const std::vector<LeafPlan> plans = leaf_plans(*out.normalized);
  std::vector<ResolvedLeaf> leaves;
  leaves.reserve(plans.size());
  for (const LeafPlan& p : plans) leaves.push_back(resolve(p, registry));

  for (const ResolvedLeaf& l : leaves) {
    if (l.layer != leaves.front().layer) {
      out.flags.push_back("mixed-layers");
      break;
    }
  }

  if (leaves.size() == 1) {
    const ResolvedLeaf& l = leaves[0];
    const std::size_t cls = target_for(cfg, l);
    out.result = AttributionResult::single(
        attribute(cfg, *l.model, *l.input, registry.baseline_for(*l.input), cls, l.window));
    out.target_classes = {cls};
    return out;
  }

  if (std::holds_alternative<JoinNode>(out.normalized->node)) {
    std::vector<AttributionMap> maps;
    for (const ResolvedLeaf& l : leaves) {
      const std::size_t cls = target_for(cfg, l);
      out.target_classes.push_back(cls);
      maps.push_back(
          attribute(cfg, *l.model, *l.input, registry.baseline_for(*l.input), cls, l.window));
    }
    AttributionMap acc = maps.back();
    for (std::size_t i = maps.size() - 1; i-- > 0;) acc = join_maps(maps[i], acc, cfg.epsilon);
    out.result = AttributionResult::single(std::move(acc));
    return out;
  }

  const auto& anti = std::get<AntiJoinNode>(out.normalized->node);
  if (anti.cross_model) {
    const ResolvedLeaf& a = leaves[0];
    const ResolvedLeaf& b = leaves[1];
    const std::size_t cls = target_for(cfg, a);
    BackendConfig fixed = cfg;
    fixed.target_class = cls;
    out.result = AttributionResult::single(antijoin_cross_model(
        fixed, *a.model, *b.model, *a.input, registry.baseline_for(*a.input), a.window));
    out.target_classes = {cls};
    out.flags.insert(out.flags.begin(), "cross-model");
    return out;
  }

  std::vector<AttributionMap> maps;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    const ResolvedLeaf& l = leaves[i];
    const std::size_t cls = target_for(cfg, l);
    out.target_classes.push_back(cls);
    if (cfg.antijoin_shared_baseline) {
      maps.push_back(
          attribute(cfg, *l.model, *l.input, registry.baseline_for(*l.input), cls, l.window));
      continue;
    }
    AttributionMap acc{l.input->shape(), std::vector<double>(l.input->size(), 0.0)};
    for (std::size_t j = 0; j < leaves.size(); ++j) {
      if (j == i) continue;
      const auto m = attribute(cfg, *l.model, *l.input, *leaves[j].input, cls, l.window);
      for (std::size_t k = 0; k < acc.values.size(); ++k) acc.values[k] += m.values[k];
    }
    const double others = static_cast<double>(leaves.size() - 1);
    for (double& v : acc.values) v /= others;
    maps.push_back(std::move(acc));
  }
  out.result = maps.size() == 2 ? AttributionResult::pair(std::move(maps[0]), std::move(maps[1]))
                                : AttributionResult::tuple(std::move(maps));
  return out;
}

}  // namespace interpalg
