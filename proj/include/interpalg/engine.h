#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>

#include "interpalg/algebra.h"
#include "interpalg/json_io.h"
#include "interpalg/qlang.h"
#include "interpalg/store.h"

namespace interpalg {

struct QueryOutcome {
  Evaluation evaluation;
  Json result;  // result document, see json_io.h
  Json expr;    // normalized expression
};

// Parses, lowers, validates and evaluates `text`. `truncations` maps
// "model_ref@stage" to the ref of the truncated model used for that stage and
// is recorded in the result metadata. Throws QueryError, NotFoundError or
// ConfigError.
QueryOutcome run_query(std::string_view text, const Bindings& bindings,
                       const Registry& registry, const BackendConfig& config,
                       const std::map<std::string, std::string>& truncations = {});

// Evaluates a constructor tree (see expr_to_json) whose identity leaves name
// model and input bindings. Throws InvalidExpression when a composition rule
// is violated and QueryError (bind) for unbound names.
QueryOutcome run_expression(const Json& expr, const Bindings& bindings,
                            const Registry& registry, const BackendConfig& config,
                            const std::map<std::string, std::string>& truncations = {});

std::string truncation_key(const std::string& model_ref, std::size_t stage);

Json bindings_to_json(const Bindings& b);
Bindings bindings_from_json(const Json& j);

// Parsed models and inputs loaded from a store, shared across requests.
class StoreCache {
 public:
  explicit StoreCache(const Store& store) : store_(store) {}

  std::shared_ptr<const Model> model(const std::string& ref);
  Tensor input(const std::string& ref);
  Dataset dataset(const std::string& ref);

  // Registry holding every model and input `bindings` refers to, plus the
  // truncated models named by `truncations` ("model_ref@stage" -> ref).
  Registry registry(const Bindings& bindings,
                    const std::map<std::string, std::string>& truncations);

 private:
  const Store& store_;
  std::mutex mu_;
  std::map<std::string, std::shared_ptr<const Model>> models_;
  std::map<std::string, Tensor> inputs_;
};

}  // namespace interpalg
