#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "interpalg/algebra.h"
#include "interpalg/analysis.h"
#include "interpalg/attribution.h"
#include "interpalg/nn.h"
#include "interpalg/tensor.h"
#include "interpalg/window.h"

namespace interpalg {

using Json = nlohmann::json;

// Document formats. Readers throw IoError naming the offending field.
//
//   model:   {name, input_shape, class_labels, layers: [{kind, w?, b?}],
//             stage_boundaries}; w is nested to the layer's weight shape.
//   tensor:  {shape, data}
//   dataset: {input_shape, inputs: [[...]], labels}
//   result:  {shape, kind, values | left, right | maps, meta}
Json model_to_json(const ModelSpec& spec);
ModelSpec model_from_json(const Json& j);

Json tensor_to_json(const Tensor& t);
Tensor tensor_from_json(const Json& j);

Json dataset_to_json(const Dataset& data);
Dataset dataset_from_json(const Json& j);

Json window_to_json(const Window& w);
Window window_from_json(const Json& j);

Json config_to_json(const BackendConfig& cfg);
// Fields absent from `j` keep their value in `base`.
BackendConfig config_from_json(const Json& j, BackendConfig base = {});

Json hyper_to_json(const HeadHyper& h);
HeadHyper hyper_from_json(const Json& j, HeadHyper base = {});

// Constructor tree: {op, ...children}.
Json expr_to_json(const Expr& e);
ExprPtr expr_from_json(const Json& j);

Json validation_error_to_json(const ValidationError& e);

struct ResultMeta {
  std::string query;
  Json expr;                                 // normalized expression
  BackendConfig config;
  std::vector<std::size_t> target_classes;  // one per map
  std::vector<std::optional<Window>> windows;
  std::vector<std::string> flags;
  std::map<std::string, std::string> truncations;  // "model_ref@stage" -> ref
};

std::string result_kind_name(ResultKind kind);
Json result_to_json(const AttributionResult& r, const ResultMeta& meta);
AttributionResult result_from_json(const Json& j);

Json spectral_to_json(const SpectralReport& r);
Json matrix_to_json(const Matrix& m);

Json edit_to_json(const Edit& e);
Edit edit_from_json(const Json& j);

// Compact, key-sorted serialization; the basis of content hashes.
std::string canonical(const Json& j);

Json read_json_file(const std::filesystem::path& path);
// Writes canonical(j) plus a trailing newline through a temporary file.
void write_json_file(const std::filesystem::path& path, const Json& j);

}  // namespace interpalg
