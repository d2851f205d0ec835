#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "interpalg/algebra.h"
#include "interpalg/analysis.h"
#include "interpalg/attribution.h"
#include "interpalg/engine.h"
#include "interpalg/error.h"
#include "interpalg/generate.h"
#include "interpalg/heatmap.h"
#include "interpalg/json_io.h"
#include "interpalg/qlang.h"
#include "interpalg/service.h"
#include "interpalg/store.h"

namespace py = pybind11;
using namespace interpalg;

namespace {

using ModelPtr = std::shared_ptr<Model>;
using Indices = std::optional<std::vector<std::size_t>>;

Window window_or_all(const Indices& w, std::size_t d) {
  return w ? Window(*w) : Window::all(d);
}

std::string model_ref(const Model& m) { return sha256_hex(canonical(model_to_json(m.spec()))); }

std::string run_query_json(const std::string& text,
                           const std::map<std::string, ModelPtr>& models,
                           const std::map<std::string, Tensor>& inputs,
                           const std::map<std::string, std::vector<std::size_t>>& windows,
                           const std::map<std::string, std::size_t>& layers,
                           const std::map<std::string, ModelPtr>& truncations,
                           const std::optional<Dataset>& dataset, const std::string& config,
                           const std::optional<Tensor>& baseline) {
  Registry reg;
  Bindings b;
  std::map<std::string, std::string> refs;
  for (const auto& [name, m] : models) {
    const std::string ref = model_ref(*m);
    reg.add_model(ref, m);
    b.bind_model(name, ref);
    refs[name] = ref;
  }
  for (const auto& [name, x] : inputs) {
    const std::string ref = sha256_hex(canonical(tensor_to_json(x)));
    reg.add_input(ref, x);
    b.bind_input(name, ref);
  }
  for (const auto& [name, w] : windows) b.bind_window(name, Window(w));
  for (const auto& [name, l] : layers) b.bind_layer(name, l);
  std::map<std::string, std::string> truncs;
  for (const auto& [key, m] : truncations) {
    const std::size_t at = key.rfind('@');
    if (at == std::string::npos) throw ConfigError("truncation keys are 'model@stage'");
    const auto it = refs.find(key.substr(0, at));
    if (it == refs.end()) throw ConfigError("truncation names unknown model '" + key + "'");
    const std::size_t stage = std::stoul(key.substr(at + 1));
    truncs[truncation_key(it->second, stage)] = model_ref(*m);
    reg.add_truncated(it->second, stage, m);
  }
  if (dataset) {
    auto cache = std::make_shared<TruncationCache>();
    for (const auto& [name, ref] : refs) {
      reg.attach_training_data(ref, *dataset, HeadHyper{}, cache);
    }
  }
  if (baseline) reg.set_baseline(*baseline);
  const BackendConfig cfg = config_from_json(Json::parse(config.empty() ? "{}" : config));
  return canonical(run_query(text, b, reg, cfg, truncs).result);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "interpalg core: attribution backends, algebra queries and spectral analysis";

  static py::exception<Error> error(m, "Error");
  py::register_exception<ShapeError>(m, "ShapeError", error.ptr());
  py::register_exception<RangeError>(m, "RangeError", error.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", error.ptr());
  py::register_exception<NotFoundError>(m, "NotFoundError", error.ptr());
  py::register_exception<IoError>(m, "IoError", error.ptr());
  py::register_exception<ConvergenceError>(m, "ConvergenceError", error.ptr());
  py::register_exception<QueryError>(m, "QueryError", error.ptr());
  py::register_exception<InvalidExpression>(m, "InvalidExpression", error.ptr());

  py::class_<Tensor>(m, "Tensor")
      .def(py::init<Shape, std::vector<double>>(), py::arg("shape"), py::arg("values"))
      .def_static("zeros", &Tensor::zeros, py::arg("shape"))
      .def_property_readonly("shape", &Tensor::shape)
      .def_property_readonly("values", &Tensor::values)
      .def("__len__", &Tensor::size)
      .def("__eq__", [](const Tensor& a, const Tensor& b) { return a == b; })
      .def("to_json", [](const Tensor& t) { return canonical(tensor_to_json(t)); })
      .def_static("from_json",
                  [](const std::string& s) { return tensor_from_json(Json::parse(s)); })
      .def("__repr__",
           [](const Tensor& t) { return "Tensor(" + shape_to_string(t.shape()) + ")"; });

  py::class_<Dataset>(m, "Dataset")
      .def(py::init([](std::vector<Tensor> inputs, std::vector<std::size_t> labels) {
             return Dataset{std::move(inputs), std::move(labels)};
           }),
           py::arg("inputs"), py::arg("labels"))
      .def_readonly("inputs", &Dataset::inputs)
      .def_readonly("labels", &Dataset::labels)
      .def("__len__", [](const Dataset& d) { return d.inputs.size(); })
      .def("to_json", [](const Dataset& d) { return canonical(dataset_to_json(d)); })
      .def_static("from_json",
                  [](const std::string& s) { return dataset_from_json(Json::parse(s)); });

  py::class_<Model, ModelPtr>(m, "Model")
      .def_static("from_json",
                  [](const std::string& s) {
                    return std::make_shared<Model>(model_from_json(Json::parse(s)));
                  })
      .def("to_json", [](const Model& mod) { return canonical(model_to_json(mod.spec())); })
      .def_property_readonly("ref", [](const Model& mod) { return model_ref(mod); })
      .def_property_readonly("name", &Model::name)
      .def_property_readonly("input_shape", &Model::input_shape)
      .def_property_readonly("num_stages", &Model::num_stages)
      .def_property_readonly("num_classes", &Model::num_classes)
      .def("forward", [](const Model& mod, const Tensor& x) { return forward(mod, x).values(); })
      .def("forward_to_stage",
           [](const Model& mod, const Tensor& x, std::size_t stage) {
             return forward_to_stage(mod, x, stage).values();
           })
      .def("predict", [](const Model& mod, const Tensor& x) { return predict(mod, x); })
      .def("__repr__", [](const Model& mod) {
        return "Model('" + mod.name() + "', stages=" + std::to_string(mod.num_stages()) + ")";
      });

  m.def("load_model", [](const std::string& path) {
    return std::make_shared<Model>(model_from_json(read_json_file(path)));
  });
  m.def("load_tensor",
        [](const std::string& path) { return tensor_from_json(read_json_file(path)); });
  m.def("load_dataset",
        [](const std::string& path) { return dataset_from_json(read_json_file(path)); });
  m.def(
      "make_mlp",
      [](const std::vector<std::size_t>& widths, std::uint64_t seed, const std::string& name) {
        return std::make_shared<Model>(make_mlp(widths, seed, name));
      },
      py::arg("widths"), py::arg("seed"), py::arg("name") = "mlp");
  m.def(
      "make_linear",
      [](std::size_t d, std::size_t classes, std::vector<double> weight, std::vector<double> bias) {
        return std::make_shared<Model>(
            make_linear(d, classes, std::move(weight), std::move(bias)));
      },
      py::arg("d"), py::arg("classes"), py::arg("weight"), py::arg("bias"));
  m.def("random_tensor", &random_tensor, py::arg("shape"), py::arg("lo"), py::arg("hi"),
        py::arg("seed"));

  m.def(
      "shapley_exact",
      [](const Model& mod, const Tensor& x, const Tensor& xbar, std::size_t cls,
         const Indices& window) {
        return shapley_exact(mod, x, xbar, cls, window_or_all(window, x.size())).values;
      },
      py::arg("model"), py::arg("x"), py::arg("baseline"), py::arg("cls"),
      py::arg("window") = py::none(), py::call_guard<py::gil_scoped_release>());
  m.def(
      "shapley_sampled",
      [](const Model& mod, const Tensor& x, const Tensor& xbar, std::size_t cls,
         std::size_t permutations, std::uint64_t seed, const Indices& window,
         std::size_t workers) {
        return shapley_sampled(mod, x, xbar, cls, window_or_all(window, x.size()), permutations,
                               seed, workers)
            .values;
      },
      py::arg("model"), py::arg("x"), py::arg("baseline"), py::arg("cls"),
      py::arg("permutations") = 2000, py::arg("seed") = 0, py::arg("window") = py::none(),
      py::arg("workers") = 1, py::call_guard<py::gil_scoped_release>());
  m.def(
      "integrated_gradients",
      [](const Model& mod, const Tensor& x, const Tensor& xbar, std::size_t cls,
         std::size_t steps, const Indices& window) {
        return integrated_gradients(mod, x, xbar, cls, steps, window_or_all(window, x.size()))
            .values;
      },
      py::arg("model"), py::arg("x"), py::arg("baseline"), py::arg("cls"), py::arg("steps") = 50,
      py::arg("window") = py::none(), py::call_guard<py::gil_scoped_release>());
  m.def(
      "smoothgrad",
      [](const Model& mod, const Tensor& x, std::size_t cls, std::size_t samples, double sigma,
         std::uint64_t seed, const Indices& window, const std::optional<Tensor>& xbar) {
        return smoothgrad(mod, x, cls, samples, sigma, seed, window_or_all(window, x.size()),
                          xbar ? *xbar : Tensor::zeros(x.shape()))
            .values;
      },
      py::arg("model"), py::arg("x"), py::arg("cls"), py::arg("samples") = 50,
      py::arg("sigma") = 0.1, py::arg("seed") = 0, py::arg("window") = py::none(),
      py::arg("baseline") = py::none(), py::call_guard<py::gil_scoped_release>());

  m.def(
      "truncate",
      [](const Model& mod, std::size_t stage, const Dataset& data, std::size_t epochs,
         double lr, std::uint64_t seed) {
        Truncation t = truncate(mod, stage, data, HeadHyper{epochs, lr, seed});
        return std::make_pair(std::make_shared<Model>(std::move(t.model)),
                              t.train_accuracy);
      },
      py::arg("model"), py::arg("stage"), py::arg("dataset"), py::arg("epochs") = 200,
      py::arg("lr") = 0.05, py::arg("seed") = 0, py::call_guard<py::gil_scoped_release>());

  m.def("canonical_query", [](const std::string& text) { return print(parse_query(text)); });
  m.def("run_query", &run_query_json, py::arg("text"), py::arg("models"), py::arg("inputs"),
        py::arg("windows") = std::map<std::string, std::vector<std::size_t>>{},
        py::arg("layers") = std::map<std::string, std::size_t>{},
        py::arg("truncations") = std::map<std::string, ModelPtr>{},
        py::arg("dataset") = py::none(), py::arg("config") = "",
        py::arg("baseline") = py::none(), py::call_guard<py::gil_scoped_release>());

  m.def(
      "spectral_signature",
      [](const std::vector<std::vector<double>>& rows, double k, bool square) {
        Matrix mat;
        mat.rows = rows.size();
        mat.cols = rows.empty() ? 0 : rows.front().size();
        for (const auto& r : rows) {
          if (r.size() != mat.cols) throw ShapeError("spectral_signature: ragged rows");
          mat.data.insert(mat.data.end(), r.begin(), r.end());
        }
        SpectralOptions opts;
        opts.k = k;
        opts.square_scores = square;
        return canonical(spectral_to_json(spectral_signature(mat, opts)));
      },
      py::arg("rows"), py::arg("k") = 1.5, py::arg("square") = false);
  m.def("make_planted_outliers", [](std::uint64_t seed) {
    const PlantedFixture p = make_planted_outliers(seed);
    std::vector<std::vector<double>> rows(p.matrix.rows);
    for (std::size_t i = 0; i < p.matrix.rows; ++i) {
      for (std::size_t j = 0; j < p.matrix.cols; ++j) rows[i].push_back(p.matrix.at(i, j));
    }
    return std::make_pair(rows, p.planted);
  }, py::arg("seed") = 0);

  m.def("render_pgm", [](const std::string& result_json) {
    const std::string pgm = encode_pgm(heatmap(result_from_json(Json::parse(result_json))));
    return py::bytes(pgm);
  });

  py::class_<Service>(m, "Service")
      .def(py::init([](const std::string& root, std::size_t threads) {
             ServiceOptions opts;
             opts.threads = threads;
             return std::make_unique<Service>(root, opts);
           }),
           py::arg("root"), py::arg("threads") = 8)
      .def("start", &Service::start, py::arg("host") = "127.0.0.1", py::arg("port") = 0,
           py::call_guard<py::gil_scoped_release>())
      .def("stop", &Service::stop, py::call_guard<py::gil_scoped_release>());
}
