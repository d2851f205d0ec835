#include "interpalg/json_io.h"

#include <atomic>
#include <fstream>
#include <sstream>
#include <system_error>
#include <thread>

#include "interpalg/error.h"

namespace interpalg {

namespace {

[[noreturn]] void bad(const std::string& what) { throw IoError(what); }

const Json& field(const Json& j, const char* name, const char* doc) {
  if (!j.is_object()) bad(std::string(doc) + " must be an object");
  auto it = j.find(name);
  if (it == j.end()) bad(std::string(doc) + " is missing field '" + name + "'");
  return *it;
}

template <typename T>
T get_as(const Json& j, const std::string& what) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception& e) {
    bad(what + ": " + e.what());
  }
}

Shape shape_from(const Json& j, const std::string& what) {
  if (!j.is_array()) bad(what + " must be an array of sizes");
  Shape s;
  for (const Json& e : j) {
    if (!e.is_number_unsigned() && !(e.is_number_integer() && e.get<long long>() >= 0)) {
      bad(what + " must hold non-negative integers");
    }
    s.push_back(e.get<std::size_t>());
  }
  return s;
}

std::vector<double> doubles_from(const Json& j, const std::string& what) {
  if (!j.is_array()) bad(what + " must be an array of numbers");
  std::vector<double> out;
  out.reserve(j.size());
  for (const Json& e : j) {
    if (!e.is_number()) bad(what + " must hold numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

// Nested array shaped like `shape` over the row-major `data`.
Json nest(const std::vector<double>& data, const Shape& shape, std::size_t dim,
          std::size_t& pos) {
  Json arr = Json::array();
  for (std::size_t i = 0; i < shape[dim]; ++i) {
    if (dim + 1 == shape.size()) {
      arr.push_back(data[pos++]);
    } else {
      arr.push_back(nest(data, shape, dim + 1, pos));
    }
  }
  return arr;
}

void unnest(const Json& j, std::size_t dim, Shape& shape, std::vector<double>& out,
            const std::string& what) {
  if (!j.is_array()) {
    if (!j.is_number()) bad(what + " must hold numbers");
    if (dim != shape.size()) bad(what + " is ragged");
    out.push_back(j.get<double>());
    return;
  }
  if (dim == shape.size()) {
    if (!out.empty()) bad(what + " is ragged");
    shape.push_back(j.size());
  } else if (shape[dim] != j.size()) {
    bad(what + " is ragged");
  }
  for (const Json& e : j) unnest(e, dim + 1, shape, out, what);
}

}  // namespace

Json model_to_json(const ModelSpec& spec) {
  Json layers = Json::array();
  for (const LayerSpec& l : spec.layers) {
    Json lj = {{"kind", std::string(layer_kind_name(l.kind))}};
    if (!l.weight_shape.empty()) {
      std::size_t pos = 0;
      lj["w"] = nest(l.weight, l.weight_shape, 0, pos);
      lj["b"] = l.bias;
    }
    layers.push_back(std::move(lj));
  }
  return {{"name", spec.name},
          {"input_shape", spec.input_shape},
          {"class_labels", spec.class_labels},
          {"layers", std::move(layers)},
          {"stage_boundaries", spec.stage_boundaries}};
}

ModelSpec model_from_json(const Json& j) {
  ModelSpec spec;
  spec.name = get_as<std::string>(field(j, "name", "model"), "model name");
  spec.input_shape = shape_from(field(j, "input_shape", "model"), "model input_shape");
  spec.class_labels =
      get_as<std::vector<std::string>>(field(j, "class_labels", "model"), "model class_labels");
  const Json& layers = field(j, "layers", "model");
  if (!layers.is_array()) bad("model layers must be an array");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string what = "model layer " + std::to_string(i);
    const Json& lj = layers[i];
    LayerSpec l;
    try {
      l.kind = parse_layer_kind(get_as<std::string>(field(lj, "kind", what.c_str()), what));
    } catch (const ConfigError& e) {
      bad(what + ": " + e.what());
    }
    if (lj.contains("w")) {
      unnest(lj["w"], 0, l.weight_shape, l.weight, what + " w");
      l.bias = doubles_from(field(lj, "b", what.c_str()), what + " b");
    }
    spec.layers.push_back(std::move(l));
  }
  if (j.contains("stage_boundaries")) {
    spec.stage_boundaries = shape_from(j["stage_boundaries"], "model stage_boundaries");
  } else {
    spec.stage_boundaries = default_stage_boundaries(spec.layers);
  }
  return spec;
}

Json tensor_to_json(const Tensor& t) { return {{"shape", t.shape()}, {"data", t.values()}}; }

Tensor tensor_from_json(const Json& j) {
  Shape shape = shape_from(field(j, "shape", "tensor"), "tensor shape");
  std::vector<double> data = doubles_from(field(j, "data", "tensor"), "tensor data");
  return Tensor(std::move(shape), std::move(data));
}

Json dataset_to_json(const Dataset& data) {
  Json inputs = Json::array();
  for (const Tensor& t : data.inputs) inputs.push_back(t.values());
  Shape shape = data.inputs.empty() ? Shape{} : data.inputs.front().shape();
  return {{"input_shape", shape}, {"inputs", std::move(inputs)}, {"labels", data.labels}};
}

Dataset dataset_from_json(const Json& j) {
  const Shape shape = shape_from(field(j, "input_shape", "dataset"), "dataset input_shape");
  const Json& inputs = field(j, "inputs", "dataset");
  if (!inputs.is_array()) bad("dataset inputs must be an array");
  Dataset data;
  for (const Json& row : inputs) {
    data.inputs.emplace_back(shape, doubles_from(row, "dataset input"));
  }
  data.labels =
      get_as<std::vector<std::size_t>>(field(j, "labels", "dataset"), "dataset labels");
  if (data.labels.size() != data.inputs.size()) {
    bad("dataset has " + std::to_string(data.inputs.size()) + " inputs and " +
        std::to_string(data.labels.size()) + " labels");
  }
  return data;
}

Json window_to_json(const Window& w) {
  Json j = {{"indices", w.indices()}};
  if (w.rect()) {
    const Rect& r = *w.rect();
    j["rect"] = {r.r0, r.c0, r.r1, r.c1};
  }
  return j;
}

Window window_from_json(const Json& j) {
  return Window(get_as<std::vector<std::size_t>>(field(j, "indices", "window"),
                                                 "window indices"));
}

Json config_to_json(const BackendConfig& cfg) {
  Json j = {{"backend", std::string(backend_name(cfg.backend))},
            {"samples", cfg.samples},
            {"steps", cfg.steps},
            {"noise_sigma", cfg.noise_sigma},
            {"noise_count", cfg.noise_count},
            {"seed", cfg.seed},
            {"epsilon", cfg.epsilon},
            {"antijoin_shared_baseline", cfg.antijoin_shared_baseline}};
  j["target_class"] = cfg.target_class ? Json(*cfg.target_class) : Json(nullptr);
  return j;
}

BackendConfig config_from_json(const Json& j, BackendConfig cfg) {
  if (!j.is_object()) bad("backend config must be an object");
  try {
    if (j.contains("backend")) cfg.backend = parse_backend(j["backend"].get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    bad(std::string("backend: ") + e.what());
  }
  if (j.contains("samples")) cfg.samples = get_as<std::size_t>(j["samples"], "samples");
  if (j.contains("steps")) cfg.steps = get_as<std::size_t>(j["steps"], "steps");
  if (j.contains("noise_sigma")) cfg.noise_sigma = get_as<double>(j["noise_sigma"], "noise_sigma");
  if (j.contains("noise_count")) cfg.noise_count = get_as<std::size_t>(j["noise_count"], "noise_count");
  if (j.contains("seed")) cfg.seed = get_as<std::uint64_t>(j["seed"], "seed");
  if (j.contains("epsilon")) cfg.epsilon = get_as<double>(j["epsilon"], "epsilon");
  if (j.contains("workers")) cfg.workers = get_as<std::size_t>(j["workers"], "workers");
  if (j.contains("antijoin_shared_baseline")) {
    cfg.antijoin_shared_baseline =
        get_as<bool>(j["antijoin_shared_baseline"], "antijoin_shared_baseline");
  }
  if (j.contains("target_class")) {
    if (j["target_class"].is_null()) {
      cfg.target_class.reset();
    } else {
      cfg.target_class = get_as<std::size_t>(j["target_class"], "target_class");
    }
  }
  return cfg;
}

Json hyper_to_json(const HeadHyper& h) {
  return {{"epochs", h.epochs}, {"learning_rate", h.learning_rate}, {"seed", h.seed}};
}

HeadHyper hyper_from_json(const Json& j, HeadHyper h) {
  if (j.is_null()) return h;
  if (!j.is_object()) bad("hyper must be an object");
  if (j.contains("epochs")) h.epochs = get_as<std::size_t>(j["epochs"], "epochs");
  if (j.contains("learning_rate")) {
    h.learning_rate = get_as<double>(j["learning_rate"], "learning_rate");
  }
  if (j.contains("seed")) h.seed = get_as<std::uint64_t>(j["seed"], "seed");
  return h;
}

Json expr_to_json(const Expr& e) {
  return std::visit(
      [](const auto& n) -> Json {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, IdentityNode>) {
          return {{"op", "identity"}, {"model", n.model}, {"input", n.input}};
        } else if constexpr (std::is_same_v<T, ProjectNode>) {
          return {{"op", "project"}, {"window", window_to_json(n.window)},
                  {"child", expr_to_json(*n.child)}};
        } else if constexpr (std::is_same_v<T, SelectNode>) {
          return {{"op", "select"}, {"layer", n.layer}, {"child", expr_to_json(*n.child)}};
        } else if constexpr (std::is_same_v<T, JoinNode>) {
          return {{"op", "join"}, {"left", expr_to_json(*n.left)},
                  {"right", expr_to_json(*n.right)}};
        } else {
          return {{"op", "antijoin"}, {"cross_model", n.cross_model},
                  {"left", expr_to_json(*n.left)}, {"right", expr_to_json(*n.right)}};
        }
      },
      e.node);
}

ExprPtr expr_from_json(const Json& j) {
  const std::string op = get_as<std::string>(field(j, "op", "expression"), "expression op");
  if (op == "identity") {
    return make_identity(get_as<std::string>(field(j, "model", "identity"), "model"),
                         get_as<std::string>(field(j, "input", "identity"), "input"));
  }
  if (op == "project") {
    return make_project(expr_from_json(field(j, "child", "project")),
                        window_from_json(field(j, "window", "project")));
  }
  if (op == "select") {
    return make_select(expr_from_json(field(j, "child", "select")),
                       get_as<std::size_t>(field(j, "layer", "select"), "layer"));
  }
  if (op == "join") {
    return make_join(expr_from_json(field(j, "left", "join")),
                     expr_from_json(field(j, "right", "join")));
  }
  if (op == "antijoin") {
    return make_antijoin(expr_from_json(field(j, "left", "antijoin")),
                         expr_from_json(field(j, "right", "antijoin")),
                         j.value("cross_model", false));
  }
  bad("unknown expression op '" + op + "'");
}

Json validation_error_to_json(const ValidationError& e) {
  return {{"kind", std::string(error_kind_name(e.kind))},
          {"path", e.path},
          {"message", e.message},
          {"rule", std::string(violated_rule(e.kind))},
          {"remediation", std::string(remediation(e.kind))}};
}

std::string result_kind_name(ResultKind kind) {
  switch (kind) {
    case ResultKind::kSingle:
      return "single";
    case ResultKind::kPair:
      return "pair";
    case ResultKind::kTuple:
      return "tuple";
  }
  return "?";
}

Json result_to_json(const AttributionResult& r, const ResultMeta& meta) {
  Json j = {{"shape", r.maps.front().shape}, {"kind", result_kind_name(r.kind)}};
  switch (r.kind) {
    case ResultKind::kSingle:
      j["values"] = r.maps.front().values;
      break;
    case ResultKind::kPair:
      j["left"] = r.left().values;
      j["right"] = r.right().values;
      break;
    case ResultKind::kTuple: {
      Json maps = Json::array();
      for (const AttributionMap& m : r.maps) maps.push_back(m.values);
      j["maps"] = std::move(maps);
      break;
    }
  }
  Json windows = Json::array();
  for (const auto& w : meta.windows) windows.push_back(w ? Json(w->indices()) : Json(nullptr));
  Json m = {{"query", meta.query},
            {"expr", meta.expr},
            {"backend", std::string(backend_name(meta.config.backend))},
            {"seed", meta.config.seed},
            {"config", config_to_json(meta.config)},
            {"target_classes", meta.target_classes},
            {"windows", windows},
            {"flags", meta.flags},
            {"truncations", meta.truncations}};
  m["target_class"] = meta.target_classes.empty() ? Json(nullptr) : Json(meta.target_classes.front());
  m["window"] = meta.windows.empty() ? Json(nullptr) : windows.front();
  j["meta"] = std::move(m);
  return j;
}

AttributionResult result_from_json(const Json& j) {
  const Shape shape = shape_from(field(j, "shape", "result"), "result shape");
  const std::string kind = get_as<std::string>(field(j, "kind", "result"), "result kind");
  auto map = [&](const Json& v) {
    AttributionMap m{shape, doubles_from(v, "result values")};
    if (m.values.size() != numel(shape)) bad("result values do not match the shape");
    return m;
  };
  if (kind == "single") return AttributionResult::single(map(field(j, "values", "result")));
  if (kind == "pair") {
    return AttributionResult::pair(map(field(j, "left", "result")),
                                   map(field(j, "right", "result")));
  }
  if (kind == "tuple") {
    std::vector<AttributionMap> maps;
    for (const Json& v : field(j, "maps", "result")) maps.push_back(map(v));
    return AttributionResult::tuple(std::move(maps));
  }
  bad("unknown result kind '" + kind + "'");
}

Json spectral_to_json(const SpectralReport& r) {
  return {{"scores", r.scores},     {"mean", r.mean},           {"std", r.std},
          {"threshold_k", std::isfinite(r.threshold_k) ? Json(r.threshold_k) : Json("inf")},
          {"threshold", std::isfinite(r.threshold_k) ? Json(r.mean + r.threshold_k * r.std)
                                                     : Json("inf")},
          {"flagged", r.flagged},   {"direction", r.direction}, {"residual", r.residual},
          {"iterations", r.iterations}};
}

Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (std::size_t r = 0; r < m.rows; ++r) {
    rows.push_back(std::vector<double>(m.data.begin() + static_cast<std::ptrdiff_t>(r * m.cols),
                                       m.data.begin() + static_cast<std::ptrdiff_t>((r + 1) * m.cols)));
  }
  return rows;
}

Json edit_to_json(const Edit& e) {
  Json j = {{"kind", std::string(edit_kind_name(e.kind))}, {"window", e.window.indices()}};
  if (e.source_input) j["source_input"] = *e.source_input;
  if (e.transform) {
    const TransformSpec& t = *e.transform;
    j["transform"] = {{"op", std::string(transform_op_name(t.op))},
                      {"factor", t.factor},
                      {"quarter_turns", t.quarter_turns},
                      {"dr", t.dr},
                      {"dc", t.dc}};
  }
  return j;
}

Edit edit_from_json(const Json& j) {
  Edit e;
  try {
    e.kind = parse_edit_kind(get_as<std::string>(field(j, "kind", "edit"), "edit kind"));
    if (j.contains("window")) {
      const Json& w = j["window"];
      e.window = w.is_object() ? window_from_json(w)
                               : Window(get_as<std::vector<std::size_t>>(w, "edit window"));
    }
    if (j.contains("source_input")) {
      e.source_input = get_as<std::string>(j["source_input"], "source_input");
    }
    if (j.contains("transform")) {
      const Json& t = j["transform"];
      TransformSpec spec;
      spec.op = parse_transform_op(get_as<std::string>(field(t, "op", "transform"), "op"));
      spec.factor = t.value("factor", 1.0);
      spec.quarter_turns = t.value("quarter_turns", 1);
      spec.dr = t.value("dr", 0LL);
      spec.dc = t.value("dc", 0LL);
      e.transform = spec;
    }
  } catch (const nlohmann::json::exception& ex) {
    bad(std::string("edit: ") + ex.what());
  }
  return e;
}

std::string canonical(const Json& j) { return j.dump(); }

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) bad("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return Json::parse(ss.str());
  } catch (const nlohmann::json::parse_error& e) {
    bad(path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const Json& j) {
  static std::atomic<unsigned long> counter{0};
  std::ostringstream tag;
  tag << ".tmp." << std::hash<std::thread::id>{}(std::this_thread::get_id()) << "."
      << counter.fetch_add(1);
  const std::filesystem::path tmp = path.string() + tag.str();
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) bad("cannot write " + tmp.string());
    out << canonical(j) << '\n';
    if (!out) bad("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    bad("cannot move " + tmp.string() + " to " + path.string());
  }
}

}  // namespace interpalg
