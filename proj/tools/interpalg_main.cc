// interpalg: command-line front end for queries, truncation, spectral
// analysis, exact-Shapley dumps, heatmap rendering and the HTTP service.

#include <CLI11.hpp>

#include <cmath>
#include <csignal>
#include <pthread.h>
#include <filesystem>
#include <iostream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "interpalg/algebra.h"
#include "interpalg/analysis.h"
#include "interpalg/attribution.h"
#include "interpalg/demo.h"
#include "interpalg/engine.h"
#include "interpalg/error.h"
#include "interpalg/heatmap.h"
#include "interpalg/json_io.h"
#include "interpalg/qlang.h"
#include "interpalg/service.h"
#include "interpalg/store.h"

namespace fs = std::filesystem;
using namespace interpalg;

namespace {

constexpr int kOk = 0;
constexpr int kIoFailure = 1;
constexpr int kInvalid = 2;

// Loaders turn every parse or validation failure of an input file into IoError.
template <typename Fn>
auto load(const std::string& path, Fn&& fn) {
  try {
    return fn(read_json_file(path));
  } catch (const IoError&) {
    throw;
  } catch (const std::exception& e) {
    throw IoError(path + ": " + e.what());
  }
}

Model load_model(const std::string& path) {
  return load(path, [](const Json& j) { return Model(model_from_json(j)); });
}
Tensor load_tensor(const std::string& path) {
  return load(path, [](const Json& j) { return tensor_from_json(j); });
}
Dataset load_dataset(const std::string& path) {
  return load(path, [](const Json& j) { return dataset_from_json(j); });
}

std::pair<std::string, std::string> split_assignment(const std::string& s, const char* flag) {
  const std::size_t eq = s.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == s.size()) {
    throw ConfigError(std::string(flag) + " expects NAME=VALUE, got '" + s + "'");
  }
  return {s.substr(0, eq), s.substr(eq + 1)};
}

std::vector<std::size_t> parse_indices(const std::string& s) {
  std::vector<std::size_t> out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    const std::size_t comma = s.find(',', pos);
    const std::string tok = s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw ConfigError("'" + tok + "' is not a non-negative integer");
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

double parse_k(const std::string& s) {
  if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
  try {
    std::size_t used = 0;
    const double k = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return k;
  } catch (const std::exception&) {
    throw ConfigError("threshold k must be a number or 'inf', got '" + s + "'");
  }
}

void report_query_error(const QueryError& e, const std::string& text) {
  std::cerr << "error: " << query_error_kind_name(e.kind) << ": " << e.detail << "\n";
  if (!text.empty()) {
    std::cerr << "  " << text << "\n  " << std::string(std::min(e.offset, text.size()), ' ')
              << "^\n";
  }
  if (!e.expected.empty()) {
    std::cerr << "  expected:";
    for (const std::string& x : e.expected) std::cerr << " " << x;
    std::cerr << "\n";
  }
  for (const LocatedError& le : e.errors) {
    std::cerr << "  " << error_kind_name(le.kind) << " at offset " << le.offset << ": "
              << le.message << "\n"
              << "    rule: " << violated_rule(le.kind) << "\n"
              << "    fix: " << remediation(le.kind) << "\n";
  }
}

// Maps library errors to exit codes: 2 for invalid requests, 1 for I/O.
template <typename Fn>
int guarded(Fn&& fn, const std::string& query_text = "") {
  try {
    return fn();
  } catch (const QueryError& e) {
    report_query_error(e, query_text);
    return kInvalid;
  } catch (const InvalidExpression& e) {
    std::cerr << "error: " << e.what() << "\n";
    for (const ValidationError& v : e.errors()) {
      std::cerr << "  rule: " << violated_rule(v.kind) << "\n";
    }
    return kInvalid;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIoFailure;
  } catch (const ConvergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIoFailure;
  }
}

struct BackendFlags {
  std::string backend = "shapley-sampled";
  std::size_t samples = 2000;
  std::size_t steps = 50;
  double noise_sigma = 0.1;
  std::size_t noise_count = 50;
  std::uint64_t seed = 0;
  double epsilon = 0.5;
  long long target = -1;
  std::size_t workers = 1;
  bool shared_baseline = false;

  void add(CLI::App* app) {
    app->add_option("--backend", backend,
                    "shapley-exact | shapley-sampled | integrated-gradients | smoothgrad")
        ->capture_default_str();
    app->add_option("--samples", samples, "Permutations for shapley-sampled")
        ->capture_default_str();
    app->add_option("--steps", steps, "Integration steps for integrated-gradients")
        ->capture_default_str();
    app->add_option("--noise-sigma", noise_sigma, "SmoothGrad noise std")->capture_default_str();
    app->add_option("--noise-count", noise_count, "SmoothGrad samples")->capture_default_str();
    app->add_option("--seed", seed, "Random seed")->capture_default_str();
    app->add_option("--epsilon", epsilon, "Join weight of the left operand")
        ->capture_default_str();
    app->add_option("--target", target, "Target class (default: predicted class)");
    app->add_option("--workers", workers, "Worker threads (0: all cores)")->capture_default_str();
    app->add_flag("--shared-baseline", shared_baseline,
                  "Anti-join operands use the shared baseline");
  }

  BackendConfig config() const {
    BackendConfig cfg;
    cfg.backend = parse_backend(backend);
    cfg.samples = samples;
    cfg.steps = steps;
    cfg.noise_sigma = noise_sigma;
    cfg.noise_count = noise_count;
    cfg.seed = seed;
    cfg.epsilon = epsilon;
    if (target >= 0) cfg.target_class = static_cast<std::size_t>(target);
    cfg.workers = workers;
    cfg.antijoin_shared_baseline = shared_baseline;
    cfg.validate();
    return cfg;
  }
};

struct HyperFlags {
  HeadHyper hyper;
  void add(CLI::App* app) {
    app->add_option("--epochs", hyper.epochs, "Head training epochs")->capture_default_str();
    app->add_option("--lr", hyper.learning_rate, "Head learning rate")->capture_default_str();
    app->add_option("--head-seed", hyper.seed, "Head initialization seed")->capture_default_str();
  }
};

struct QueryCmd {
  std::string query;
  std::vector<std::string> models, inputs, windows, layers, truncations;
  std::string dataset, baseline, out, heatmap, store;
  BackendFlags backend;
  HyperFlags hyper;

  void add(CLI::App& root) {
    CLI::App* app = root.add_subcommand("query", "Evaluate a query and write the result file");
    app->add_option("-q,--query", query, "Query text")->required();
    app->add_option("--model", models, "NAME=PATH model binding (repeatable)")->required();
    app->add_option("--input", inputs, "NAME=PATH input binding (repeatable)")->required();
    app->add_option("--window", windows,
                    "NAME=i,j,... or NAME=rect:r0,c0,r1,c1 on the first input's grid");
    app->add_option("--layer", layers, "NAME=L layer binding");
    app->add_option("--truncation", truncations, "NAME@L=PATH truncated model for stage L");
    app->add_option("--dataset", dataset, "Dataset for training missing truncations");
    app->add_option("--baseline", baseline, "Baseline input (default: zeros)");
    app->add_option("-o,--out", out, "Result file")->required();
    app->add_option("--heatmap", heatmap, "Also write a PGM heatmap");
    app->add_option("--store", store, "Also record the result in this store");
    backend.add(app);
    hyper.add(app);
    app->callback([this] { throw CLI::RuntimeError(guarded([this] { return run(); }, query)); });
  }

  int run() {
    const BackendConfig cfg = backend.config();
    Registry reg;
    Bindings b;
    std::map<std::string, std::string> model_refs;
    std::optional<Shape> first_shape;
    for (const std::string& m : models) {
      auto [name, path] = split_assignment(m, "--model");
      auto model = std::make_shared<const Model>(load_model(path));
      const std::string ref = sha256_hex(canonical(model_to_json(model->spec())));
      reg.add_model(ref, model);
      b.bind_model(name, ref);
      model_refs[name] = ref;
    }
    for (const std::string& i : inputs) {
      auto [name, path] = split_assignment(i, "--input");
      Tensor x = load_tensor(path);
      const std::string ref = sha256_hex(canonical(tensor_to_json(x)));
      if (!first_shape) first_shape = x.shape();
      reg.add_input(ref, std::move(x));
      b.bind_input(name, ref);
    }
    for (const std::string& w : windows) {
      auto [name, spec] = split_assignment(w, "--window");
      if (spec.rfind("rect:", 0) == 0) {
        const auto r = parse_indices(spec.substr(5));
        if (r.size() != 4) throw ConfigError("rect windows need four integers");
        b.bind_window(name, Window::from_rect(*first_shape, {r[0], r[1], r[2], r[3]}));
      } else {
        b.bind_window(name, Window(parse_indices(spec)));
      }
    }
    for (const std::string& l : layers) {
      auto [name, value] = split_assignment(l, "--layer");
      const auto v = parse_indices(value);
      if (v.size() != 1 || v[0] == 0) throw ConfigError("--layer expects NAME=L with L >= 1");
      b.bind_layer(name, v[0]);
    }
    std::map<std::string, std::string> truncs;
    for (const std::string& t : truncations) {
      auto [key, path] = split_assignment(t, "--truncation");
      const std::size_t at = key.rfind('@');
      if (at == std::string::npos) throw ConfigError("--truncation expects NAME@L=PATH");
      const auto it = model_refs.find(key.substr(0, at));
      if (it == model_refs.end()) throw ConfigError("--truncation names unknown model " + key);
      const std::size_t stage = parse_indices(key.substr(at + 1)).at(0);
      auto model = std::make_shared<const Model>(load_model(path));
      truncs[truncation_key(it->second, stage)] =
          sha256_hex(canonical(model_to_json(model->spec())));
      reg.add_truncated(it->second, stage, std::move(model));
    }
    if (!dataset.empty()) {
      const Dataset data = load_dataset(dataset);
      auto cache = std::make_shared<TruncationCache>();
      for (const auto& [name, ref] : model_refs) {
        reg.attach_training_data(ref, data, hyper.hyper, cache);
      }
    }
    if (!baseline.empty()) reg.set_baseline(load_tensor(baseline));

    const QueryOutcome outcome = run_query(query, b, reg, cfg, truncs);
    write_json_file(out, outcome.result);
    const std::string ref = sha256_hex(canonical(outcome.result));
    if (!store.empty()) Store(store).put("result", outcome.result);
    if (!heatmap.empty()) write_pgm(heatmap, interpalg::heatmap(outcome.evaluation.result));
    std::cout << "result " << ref << " (" << result_kind_name(outcome.evaluation.result.kind)
              << ") -> " << out << "\n";
    return kOk;
  }
};

struct TruncateCmd {
  std::string model, dataset, out;
  std::size_t layer = 0;
  HyperFlags hyper;

  void add(CLI::App& root) {
    CLI::App* app = root.add_subcommand("truncate", "Train a linear head on stage L");
    app->add_option("--model", model, "Model file")->required();
    app->add_option("--dataset", dataset, "Dataset file")->required();
    app->add_option("-l,--layer", layer, "Stage to truncate at")->required();
    app->add_option("-o,--out", out, "Truncated model file")->required();
    hyper.add(app);
    app->callback([this] { throw CLI::RuntimeError(guarded([this] { return run(); })); });
  }

  int run() {
    const Model m = load_model(model);
    const Dataset data = load_dataset(dataset);
    const Truncation t = truncate(m, layer, data, hyper.hyper);
    write_json_file(out, model_to_json(t.model.spec()));
    std::cout << "train accuracy " << t.train_accuracy << "\n";
    return kOk;
  }
};

struct SpectralCmd {
  std::string model, dataset, matrix, out, k = "1.5";
  std::size_t cls = 0;
  bool square = false;

  void add(CLI::App& root) {
    CLI::App* app =
        root.add_subcommand("spectral", "Spectral-signature outlier report for one class");
    app->add_option("--model", model, "Model file");
    app->add_option("--dataset", dataset, "Dataset file");
    app->add_option("--class", cls, "Class whose examples are analysed")->capture_default_str();
    app->add_option("--matrix", matrix, "Representation matrix file (rows of numbers)");
    app->add_option("-k", k, "Threshold in standard deviations, or inf")->capture_default_str();
    app->add_flag("--square", square, "Square the scores");
    app->add_option("-o,--out", out, "Report file")->required();
    app->callback([this] { throw CLI::RuntimeError(guarded([this] { return run(); })); });
  }

  int run() {
    SpectralOptions opts;
    opts.k = parse_k(k);
    opts.square_scores = square;
    Json doc;
    Matrix m;
    std::vector<std::size_t> examples;
    if (!matrix.empty()) {
      const Json rows = read_json_file(matrix);
      if (!rows.is_array()) throw IoError(matrix + ": expected an array of rows");
      m.rows = rows.size();
      m.cols = rows.empty() ? 0 : rows.front().size();
      for (const Json& r : rows) {
        if (!r.is_array() || r.size() != m.cols) throw IoError(matrix + ": ragged rows");
        for (const Json& v : r) m.data.push_back(v.get<double>());
      }
      for (std::size_t i = 0; i < m.rows; ++i) examples.push_back(i);
    } else {
      if (model.empty() || dataset.empty()) {
        throw ConfigError("spectral needs --matrix or both --model and --dataset");
      }
      const Model mod = load_model(model);
      Representation rep = deep_representation(mod, load_dataset(dataset), cls);
      m = std::move(rep.matrix);
      examples = rep.examples;
      doc["stage"] = rep.stage;
    }
    const SpectralReport report = spectral_signature(m, opts);
    doc["report"] = spectral_to_json(report);
    doc["examples"] = examples;
    std::vector<std::size_t> flagged;
    for (std::size_t i : report.flagged) flagged.push_back(examples[i]);
    doc["flagged_examples"] = flagged;
    write_json_file(out, doc);
    std::cout << "flagged " << flagged.size() << " of " << m.rows << ":";
    for (std::size_t i : flagged) std::cout << " " << i;
    std::cout << "\n";
    return kOk;
  }
};

struct OracleCmd {
  std::string model, input, baseline, window, out;
  long long target = -1;

  void add(CLI::App& root) {
    CLI::App* app = root.add_subcommand("oracle", "Write exact Shapley values for a fixture");
    app->add_option("--model", model, "Model file")->required();
    app->add_option("--input", input, "Input file")->required();
    app->add_option("--baseline", baseline, "Baseline input (default: zeros)");
    app->add_option("--window", window, "Comma-separated feature indices (default: all)");
    app->add_option("--target", target, "Target class (default: predicted class)");
    app->add_option("-o,--out", out, "Result file")->required();
    app->callback([this] { throw CLI::RuntimeError(guarded([this] { return run(); })); });
  }

  int run() {
    const Model m = load_model(model);
    const Tensor x = load_tensor(input);
    const Tensor xbar = baseline.empty() ? Tensor::zeros(x.shape()) : load_tensor(baseline);
    const Window w = window.empty() ? Window::all(x.size()) : Window(parse_indices(window));
    BackendConfig cfg;
    cfg.backend = Backend::kShapleyExact;
    if (target >= 0) cfg.target_class = static_cast<std::size_t>(target);
    const std::size_t cls = resolve_target(cfg, m, x);
    const AttributionMap map = shapley_exact(m, x, xbar, cls, w);
    ResultMeta meta;
    meta.config = cfg;
    meta.target_classes = {cls};
    meta.windows = {window.empty() ? std::nullopt : std::optional<Window>(w)};
    write_json_file(out, result_to_json(AttributionResult::single(map), meta));
    std::cout << "exact shapley for class " << cls << " -> " << out << "\n";
    return kOk;
  }
};

struct RenderCmd {
  std::string result, out;

  void add(CLI::App& root) {
    CLI::App* app = root.add_subcommand("render", "Render a result file as a PGM heatmap");
    app->add_option("--result", result, "Result file")->required();
    app->add_option("-o,--out", out, "PGM file")->required();
    app->callback([this] { throw CLI::RuntimeError(guarded([this] { return run(); })); });
  }

  int run() {
    const AttributionResult r =
        load(result, [](const Json& j) { return result_from_json(j); });
    const GrayImage img = heatmap(r);
    write_pgm(out, img);
    std::cout << img.width << "x" << img.height << " -> " << out << "\n";
    return kOk;
  }
};

struct ServeCmd {
  std::string host = "127.0.0.1", store;
  int port = 8080;
  std::size_t threads = 8;
  BackendFlags backend;

  void add(CLI::App& root) {
    CLI::App* app = root.add_subcommand("serve", "Run the HTTP service");
    app->add_option("--host", host, "Listen address")->capture_default_str();
    app->add_option("--port", port, "Listen port (0: any free port)")->capture_default_str();
    app->add_option("--store", store, "Store directory (default: $INTERPALG_STORE)");
    app->add_option("--threads", threads, "Request threads")->capture_default_str();
    backend.add(app);
    app->callback([this] { throw CLI::RuntimeError(guarded([this] { return run(); })); });
  }

  int run() {
    ServiceOptions opts;
    opts.defaults = backend.config();
    opts.threads = threads;
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);
    Service service(store.empty() ? default_store_path() : fs::path(store), opts);
    const int bound = service.start(host, port);
    std::cout << "listening on " << host << ":" << bound << std::endl;
    int sig = 0;
    sigwait(&set, &sig);
    service.stop();
    return kOk;
  }
};

struct DemoCmd {
  std::string out = "data/demo";
  std::uint64_t seed = 0;

  void add(CLI::App& root) {
    CLI::App* app = root.add_subcommand("demo", "Write the bundled demo files");
    app->add_option("-o,--out", out, "Output directory")->capture_default_str();
    app->add_option("--seed", seed, "Generator seed")->capture_default_str();
    app->callback([this] { throw CLI::RuntimeError(guarded([this] { return run(); })); });
  }

  int run() {
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw IoError("cannot create " + out + ": " + ec.message());
    const DemoBundle d = make_demo(seed);
    const fs::path dir(out);
    write_json_file(dir / "model.json", model_to_json(d.model.spec()));
    write_json_file(dir / "dataset.json", dataset_to_json(d.data));
    write_json_file(dir / "x.json", tensor_to_json(d.x));
    write_json_file(dir / "x2.json", tensor_to_json(d.x2));
    write_json_file(dir / "planted_model.json", model_to_json(d.planted_model.spec()));
    write_json_file(dir / "planted_dataset.json", dataset_to_json(d.planted_data));
    write_json_file(dir / "planted_matrix.json", matrix_to_json(d.planted.matrix));
    Json planted = d.planted.planted;
    write_json_file(dir / "planted_rows.json", planted);
    std::cout << "demo files -> " << out << "\n";
    return kOk;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"interpalg: attribution algebra queries over small networks"};
  app.require_subcommand(1);
  QueryCmd query;
  TruncateCmd trunc;
  SpectralCmd spectral;
  OracleCmd oracle;
  RenderCmd render;
  ServeCmd serve;
  DemoCmd demo;
  query.add(app);
  trunc.add(app);
  spectral.add(app);
  oracle.add(app);
  render.add(app);
  serve.add(app);
  demo.add(app);
  try {
    app.parse(argc, argv);
  } catch (const CLI::RuntimeError& e) {
    return e.get_exit_code();
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalid;
  }
  return kOk;
}
