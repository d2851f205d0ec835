#include "interpalg/engine.h"

#include "interpalg/error.h"

namespace interpalg {

std::string truncation_key(const std::string& model_ref, std::size_t stage) {
  return model_ref + "@" + std::to_string(stage);
}

namespace {

QueryOutcome finish(const ExprPtr& e, std::string query, const Registry& registry,
                    const BackendConfig& config,
                    const std::map<std::string, std::string>& truncations) {
  QueryOutcome out;
  out.evaluation = evaluate(e, config, registry);
  out.expr = expr_to_json(*out.evaluation.normalized);

  ResultMeta meta;
  meta.query = std::move(query);
  meta.expr = out.expr;
  meta.config = config;
  meta.target_classes = out.evaluation.target_classes;
  meta.flags = out.evaluation.flags;
  for (const LeafPlan& leaf : leaf_plans(*out.evaluation.normalized)) {
    meta.windows.push_back(leaf.window);
    if (!leaf.layer) continue;
    if (*leaf.layer >= registry.model(leaf.model).num_stages()) continue;
    const std::string key = truncation_key(leaf.model, *leaf.layer);
    auto it = truncations.find(key);
    meta.truncations[key] = it == truncations.end() ? std::string() : it->second;
  }
  out.result = result_to_json(out.evaluation.result, meta);
  return out;
}

const std::string& bound_ref(const Bindings& b, const std::string& name, Binding::Kind kind) {
  const Binding* found = b.find(name);
  if (found == nullptr || found->kind != kind) {
    throw QueryError(QueryError::Kind::kBind, 0,
                     "'" + name + "' is not bound to " +
                         (kind == Binding::Kind::kModel ? "a model" : "an input"));
  }
  return found->ref;
}

ExprPtr resolve(const Expr& e, const Bindings& b) {
  return std::visit(
      [&](const auto& n) -> ExprPtr {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, IdentityNode>) {
          return make_identity(bound_ref(b, n.model, Binding::Kind::kModel),
                               bound_ref(b, n.input, Binding::Kind::kInput));
        } else if constexpr (std::is_same_v<T, ProjectNode>) {
          return make_project(resolve(*n.child, b), n.window);
        } else if constexpr (std::is_same_v<T, SelectNode>) {
          return make_select(resolve(*n.child, b), n.layer);
        } else if constexpr (std::is_same_v<T, JoinNode>) {
          return make_join(resolve(*n.left, b), resolve(*n.right, b));
        } else {
          return make_antijoin(resolve(*n.left, b), resolve(*n.right, b), n.cross_model);
        }
      },
      e.node);
}

}  // namespace

QueryOutcome run_query(std::string_view text, const Bindings& bindings,
                       const Registry& registry, const BackendConfig& config,
                       const std::map<std::string, std::string>& truncations) {
  config.validate();
  const QueryAst ast = parse_query(text);
  const Lowered low = lower(ast, bindings, registry);
  return finish(low.expr, print(ast), registry, config, truncations);
}

QueryOutcome run_expression(const Json& expr, const Bindings& bindings,
                            const Registry& registry, const BackendConfig& config,
                            const std::map<std::string, std::string>& truncations) {
  config.validate();
  const ExprPtr e = resolve(*expr_from_json(expr), bindings);
  std::vector<ValidationError> errors = validate(e, registry);
  if (!errors.empty()) throw InvalidExpression(std::move(errors));
  return finish(e, "", registry, config, truncations);
}

Json bindings_to_json(const Bindings& b) {
  Json j = Json::object();
  for (const auto& [name, binding] : b.entries()) {
    Json e = {{"kind", std::string(binding_kind_name(binding.kind))}};
    switch (binding.kind) {
      case Binding::Kind::kModel:
      case Binding::Kind::kInput:
        e["ref"] = binding.ref;
        break;
      case Binding::Kind::kWindow:
        e["window"] = window_to_json(*binding.window);
        break;
      case Binding::Kind::kLayer:
        e["layer"] = binding.layer;
        break;
    }
    j[name] = std::move(e);
  }
  return j;
}

Bindings bindings_from_json(const Json& j) {
  if (!j.is_object()) throw IoError("bindings must be an object");
  Bindings b;
  for (const auto& [name, e] : j.items()) {
    const std::string kind = e.value("kind", "");
    try {
      if (kind == "model") {
        b.bind_model(name, e.at("ref").get<std::string>());
      } else if (kind == "input") {
        b.bind_input(name, e.at("ref").get<std::string>());
      } else if (kind == "window") {
        b.bind_window(name, window_from_json(e.at("window")));
      } else if (kind == "layer") {
        b.bind_layer(name, e.at("layer").get<std::size_t>());
      } else {
        throw IoError("binding '" + name + "' has unknown kind '" + kind + "'");
      }
    } catch (const nlohmann::json::exception& ex) {
      throw IoError("binding '" + name + "': " + ex.what());
    }
  }
  return b;
}

std::shared_ptr<const Model> StoreCache::model(const std::string& ref) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = models_.find(ref);
    if (it != models_.end()) return it->second;
  }
  auto m = std::make_shared<const Model>(model_from_json(store_.get("model", ref)));
  std::lock_guard<std::mutex> lock(mu_);
  return models_.emplace(ref, std::move(m)).first->second;
}

Tensor StoreCache::input(const std::string& ref) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = inputs_.find(ref);
    if (it != inputs_.end()) return it->second;
  }
  Tensor t = tensor_from_json(store_.get("input", ref));
  std::lock_guard<std::mutex> lock(mu_);
  return inputs_.emplace(ref, std::move(t)).first->second;
}

Dataset StoreCache::dataset(const std::string& ref) {
  return dataset_from_json(store_.get("dataset", ref));
}

Registry StoreCache::registry(const Bindings& bindings,
                              const std::map<std::string, std::string>& truncations) {
  Registry reg;
  for (const auto& [name, b] : bindings.entries()) {
    if (b.kind == Binding::Kind::kModel) reg.add_model(b.ref, model(b.ref));
    if (b.kind == Binding::Kind::kInput) reg.add_input(b.ref, input(b.ref));
  }
  for (const auto& [key, ref] : truncations) {
    if (ref.empty()) continue;
    const std::size_t at = key.rfind('@');
    if (at == std::string::npos) throw IoError("malformed truncation key '" + key + "'");
    const std::string model_ref = key.substr(0, at);
    if (reg.find_model(model_ref) == nullptr) continue;
    reg.add_truncated(model_ref, std::stoul(key.substr(at + 1)), model(ref));
  }
  return reg;
}

}  // namespace interpalg
