#include "interpalg/service.h"

#include <httplib.h>

#include <chrono>
#include <ctime>
#include <iomanip>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include "interpalg/analysis.h"
#include "interpalg/engine.h"
#include "interpalg/error.h"
#include "interpalg/json_io.h"
#include "interpalg/store.h"

namespace interpalg {

namespace {

struct HttpError {
  int status;
  Json body;
};

HttpError bad_request(const std::string& kind, const std::string& message) {
  return {400, {{"error", kind}, {"kind", kind}, {"message", message}}};
}

HttpError not_found(const std::string& message) {
  return {404, {{"error", "unknown-ref"}, {"kind", "unknown-ref"}, {"message", message}}};
}

Json located_to_json(const LocatedError& e) {
  return {{"kind", std::string(error_kind_name(e.kind))},
          {"path", e.path},
          {"message", e.message},
          {"offset", e.offset},
          {"rule", std::string(violated_rule(e.kind))},
          {"remediation", std::string(remediation(e.kind))}};
}

HttpError query_error(const QueryError& e) {
  Json body = {{"error", std::string(query_error_kind_name(e.kind))},
               {"message", e.what()},
               {"offset", e.offset},
               {"expected", e.expected}};
  Json errors = Json::array();
  for (const LocatedError& le : e.errors) errors.push_back(located_to_json(le));
  body["kind"] = e.errors.empty() ? body["error"] : errors.front()["kind"];
  body["errors"] = std::move(errors);
  return {400, std::move(body)};
}

// Runs `fn` and turns library errors into status codes and error payloads.
template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  HttpError err{500, nullptr};
  try {
    Json body = fn();
    res.status = 200;
    res.set_content(canonical(body), "application/json");
    return;
  } catch (const HttpError& e) {
    err = e;
  } catch (const QueryError& e) {
    err = query_error(e);
  } catch (const InvalidExpression& e) {
    Json errors = Json::array();
    for (const ValidationError& v : e.errors()) errors.push_back(validation_error_to_json(v));
    err = {400, {{"error", "validation"}, {"kind", errors.front()["kind"]},
                 {"message", e.what()}, {"errors", errors}}};
  } catch (const NotFoundError& e) {
    err = not_found(e.what());
  } catch (const RangeError& e) {
    err = bad_request("layer-range", e.what());
  } catch (const ShapeError& e) {
    err = bad_request("shape-mismatch", e.what());
  } catch (const ConvergenceError& e) {
    err = {422, {{"error", "convergence"}, {"kind", "convergence"}, {"message", e.what()},
                 {"residual", e.residual()}}};
  } catch (const ConfigError& e) {
    err = bad_request("config", e.what());
  } catch (const IoError& e) {
    err = bad_request("malformed-request", e.what());
  } catch (const nlohmann::json::exception& e) {
    err = bad_request("malformed-request", e.what());
  } catch (const std::exception& e) {
    err = {500, {{"error", "internal"}, {"kind", "internal"}, {"message", e.what()}}};
  }
  res.status = err.status;
  res.set_content(canonical(err.body), "application/json");
}

Json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return Json::object();
  try {
    return Json::parse(req.body);
  } catch (const nlohmann::json::parse_error& e) {
    throw bad_request("malformed-request", e.what());
  }
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream ss;
  ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return ss.str();
}

struct Session {
  std::string id;
  std::mutex mu;
  Bindings bindings;
  std::vector<Json> history;
};

}  // namespace

struct Service::Impl {
  Impl(std::filesystem::path root, ServiceOptions o)
      : store(std::move(root)), cache(store), opts(std::move(o)) {
    std::random_device rd;
    rng.seed((static_cast<std::uint64_t>(rd()) << 32) ^ rd());
    routes();
  }

  Store store;
  StoreCache cache;
  ServiceOptions opts;
  TruncationCache truncations;
  httplib::Server server;
  std::thread worker;

  std::mutex sessions_mu;
  std::map<std::string, std::shared_ptr<Session>> sessions;
  std::mt19937_64 rng;

  std::shared_ptr<Session> session(const std::string& id) {
    std::lock_guard<std::mutex> lock(sessions_mu);
    auto it = sessions.find(id);
    if (it == sessions.end()) throw not_found("session '" + id + "' does not exist");
    return it->second;
  }

  std::string new_session() {
    std::lock_guard<std::mutex> lock(sessions_mu);
    std::string id;
    do {
      std::ostringstream ss;
      ss << std::hex << std::setw(16) << std::setfill('0') << rng();
      id = ss.str();
    } while (sessions.count(id) != 0);
    auto s = std::make_shared<Session>();
    s->id = id;
    sessions.emplace(id, s);
    return id;
  }

  // A session name bound to an input, or a store ref.
  std::string input_ref(const Session& s, const std::string& name_or_ref) {
    const Binding* b = s.bindings.find(name_or_ref);
    if (b != nullptr && b->kind == Binding::Kind::kInput) return b->ref;
    if (!store.contains("input", name_or_ref)) {
      throw not_found("input '" + name_or_ref + "' is neither bound nor stored");
    }
    return name_or_ref;
  }

  // Most recent stored truncation of every non-final stage of bound models.
  std::map<std::string, std::string> stage_pointers(const Bindings& b) {
    std::map<std::string, std::string> out;
    for (const auto& [name, binding] : b.entries()) {
      if (binding.kind != Binding::Kind::kModel) continue;
      const auto model = cache.model(binding.ref);
      for (std::size_t l = 1; l < model->num_stages(); ++l) {
        if (auto e = store.latest_truncation(binding.ref, l)) {
          out[truncation_key(binding.ref, l)] = e->ref;
        }
      }
    }
    return out;
  }

  // `request` carries either a query string "q" or an expression tree "expr".
  std::string evaluate_entry(const Json& request, const Bindings& b, const BackendConfig& cfg,
                             const std::map<std::string, std::string>& truncs, Json* entry,
                             Json* result) {
    Registry reg = cache.registry(b, truncs);
    const auto t0 = std::chrono::steady_clock::now();
    QueryOutcome out;
    std::string q;
    if (request.contains("q")) {
      q = request.at("q").get<std::string>();
      out = run_query(q, b, reg, cfg, truncs);
    } else if (request.contains("expr")) {
      out = run_expression(request.at("expr"), b, reg, cfg, truncs);
    } else {
      throw bad_request("malformed-request", "query needs 'q' or 'expr'");
    }
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    const std::string ref = store.put("result", out.result);
    if (entry != nullptr) {
      *entry = {{"query", q},
                {"expr", out.expr},
                {"request", request.contains("q") ? Json{{"q", q}}
                                                  : Json{{"expr", request.at("expr")}}},
                {"result_ref", ref},
                {"wall_time_ms", ms},
                {"timestamp", utc_timestamp()},
                {"bindings", bindings_to_json(b)},
                {"config", config_to_json(cfg)},
                {"truncations", out.result["meta"]["truncations"]}};
    }
    if (result != nullptr) *result = std::move(out.result);
    return ref;
  }

  void routes() {
    server.new_task_queue = [n = opts.threads] { return new httplib::ThreadPool(n); };

    auto put_doc = [this](const char* kind, auto check) {
      return [this, kind, check](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
          const Json doc = parse_body(req);
          check(doc);
          return Json{{"ref", store.put(kind, doc)}};
        });
      };
    };
    auto get_doc = [this](const char* kind) {
      return [this, kind](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { return store.get(kind, req.matches[1].str()); });
      };
    };

    server.Post("/models", put_doc("model", [](const Json& d) { Model m(model_from_json(d)); }));
    server.Get(R"(/models/([^/]+))", get_doc("model"));
    server.Post("/inputs", put_doc("input", [](const Json& d) { tensor_from_json(d); }));
    server.Get(R"(/inputs/([^/]+))", get_doc("input"));
    server.Post("/datasets", put_doc("dataset", [](const Json& d) { dataset_from_json(d); }));
    server.Get(R"(/datasets/([^/]+))", get_doc("dataset"));
    server.Get(R"(/results/([^/]+))", get_doc("result"));

    server.Post(R"(/models/([^/]+)/truncate)", [this](const httplib::Request& req,
                                                      httplib::Response& res) {
      guarded(res, [&] {
        const std::string model_ref = req.matches[1].str();
        const Json body = parse_body(req);
        const auto model = cache.model(model_ref);
        const std::size_t l = body.at("l").get<std::size_t>();
        const std::string dataset_ref = body.at("dataset").get<std::string>();
        const HeadHyper hyper = hyper_from_json(body.value("hyper", Json()));
        std::string ref;
        double acc = 0.0;
        if (auto hit = store.find_truncation(model_ref, l, dataset_ref, hyper)) {
          ref = hit->ref;
          acc = hit->train_accuracy;
        } else {
          const Dataset data = cache.dataset(dataset_ref);
          const TruncationCache::Entry e = truncations.get(model_ref, *model, l, data, hyper);
          ref = store.put("model", model_to_json(e.model->spec()));
          acc = e.train_accuracy;
        }
        store.put_truncation(model_ref, l, dataset_ref, hyper, ref, acc);
        return Json{{"ref", ref}, {"stage", l}, {"train_accuracy", acc}};
      });
    });

    server.Post("/sessions", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] { return Json{{"id", new_session()}}; });
    });

    server.Post(R"(/sessions/([^/]+)/bind)", [this](const httplib::Request& req,
                                                    httplib::Response& res) {
      guarded(res, [&] {
        auto s = session(req.matches[1].str());
        const Json body = parse_body(req);
        const std::string name = body.at("name").get<std::string>();
        const std::string kind = body.at("kind").get<std::string>();
        std::lock_guard<std::mutex> lock(s->mu);
        if (kind == "model" || kind == "input") {
          const std::string ref = body.at("ref").get<std::string>();
          if (!store.contains(kind, ref)) throw not_found(kind + " '" + ref + "' is not stored");
          if (kind == "model") {
            s->bindings.bind_model(name, ref);
          } else {
            s->bindings.bind_input(name, ref);
          }
        } else if (kind == "window") {
          if (body.contains("rect")) {
            const auto r = body.at("rect").get<std::vector<std::size_t>>();
            if (r.size() != 4) throw bad_request("malformed-request", "rect needs 4 integers");
            const Tensor like = cache.input(input_ref(*s, body.at("input").get<std::string>()));
            s->bindings.bind_window(name,
                                    Window::from_rect(like.shape(), {r[0], r[1], r[2], r[3]}));
          } else {
            s->bindings.bind_window(name,
                                    Window(body.at("indices").get<std::vector<std::size_t>>()));
          }
        } else if (kind == "layer") {
          const std::size_t l = body.at("layer").get<std::size_t>();
          if (l == 0) throw bad_request("layer-range", "layers are numbered from 1");
          s->bindings.bind_layer(name, l);
        } else {
          throw bad_request("malformed-request", "unknown binding kind '" + kind + "'");
        }
        return Json{{"bindings", bindings_to_json(s->bindings)}};
      });
    });

    server.Post(R"(/sessions/([^/]+)/query)", [this](const httplib::Request& req,
                                                     httplib::Response& res) {
      guarded(res, [&] {
        auto s = session(req.matches[1].str());
        const Json body = parse_body(req);
        const BackendConfig cfg = config_from_json(body.value("config", Json::object()),
                                                   opts.defaults);
        Bindings b;
        {
          std::lock_guard<std::mutex> lock(s->mu);
          b = s->bindings;
        }
        Json entry;
        Json result;
        const std::string ref = evaluate_entry(body, b, cfg, stage_pointers(b), &entry, &result);
        {
          std::lock_guard<std::mutex> lock(s->mu);
          s->history.push_back(entry);
        }
        return Json{{"result_ref", ref}, {"result", std::move(result)}};
      });
    });

    server.Post(R"(/sessions/([^/]+)/whatif)", [this](const httplib::Request& req,
                                                      httplib::Response& res) {
      guarded(res, [&] {
        auto s = session(req.matches[1].str());
        const Json body = parse_body(req);
        const Edit edit = edit_from_json(body.at("edit"));
        std::string xref;
        std::optional<std::string> src_ref;
        {
          std::lock_guard<std::mutex> lock(s->mu);
          xref = input_ref(*s, body.at("input_ref").get<std::string>());
          if (edit.source_input) src_ref = input_ref(*s, *edit.source_input);
        }
        const Tensor x = cache.input(xref);
        std::optional<Tensor> src;
        if (src_ref) src = cache.input(*src_ref);
        const Tensor xbar = Tensor::zeros(x.shape());
        const Tensor edited = apply_edit(edit, x, xbar, src ? &*src : nullptr);
        return Json{{"input_ref", store.put("input", tensor_to_json(edited))},
                    {"source_ref", xref}};
      });
    });

    server.Get(R"(/sessions/([^/]+)/history)", [this](const httplib::Request& req,
                                                      httplib::Response& res) {
      guarded(res, [&] {
        auto s = session(req.matches[1].str());
        std::lock_guard<std::mutex> lock(s->mu);
        return Json{{"session", s->id}, {"entries", s->history}};
      });
    });

    server.Post(R"(/sessions/([^/]+)/replay)", [this](const httplib::Request& req,
                                                      httplib::Response& res) {
      guarded(res, [&] {
        auto s = session(req.matches[1].str());
        std::vector<Json> history;
        {
          std::lock_guard<std::mutex> lock(s->mu);
          history = s->history;
        }
        Json entries = Json::array();
        bool all = true;
        for (std::size_t i = 0; i < history.size(); ++i) {
          const Json& h = history[i];
          const Bindings b = bindings_from_json(h.at("bindings"));
          const BackendConfig cfg = config_from_json(h.at("config"), opts.defaults);
          const auto truncs = h.at("truncations").get<std::map<std::string, std::string>>();
          const std::string ref =
              evaluate_entry(h.at("request"), b, cfg, truncs, nullptr, nullptr);
          const bool same = ref == h.at("result_ref").get<std::string>();
          all = all && same;
          entries.push_back({{"index", i}, {"result_ref", h.at("result_ref")},
                             {"replayed_ref", ref}, {"identical", same}});
        }
        return Json{{"entries", std::move(entries)}, {"identical", all}};
      });
    });

    server.Post("/analysis/spectral", [this](const httplib::Request& req,
                                             httplib::Response& res) {
      guarded(res, [&] {
        const Json body = parse_body(req);
        SpectralOptions so;
        if (body.contains("k")) {
          const Json& k = body["k"];
          so.k = k.is_string() && k.get<std::string>() == "inf"
                     ? std::numeric_limits<double>::infinity()
                     : k.get<double>();
        }
        so.square_scores = body.value("square", false);
        Json out;
        Matrix m;
        if (body.contains("matrix")) {
          const auto rows = body["matrix"].get<std::vector<std::vector<double>>>();
          m.rows = rows.size();
          m.cols = rows.empty() ? 0 : rows.front().size();
          for (const auto& r : rows) {
            if (r.size() != m.cols) throw bad_request("shape-mismatch", "matrix is ragged");
            m.data.insert(m.data.end(), r.begin(), r.end());
          }
        } else {
          const auto model = cache.model(body.at("model").get<std::string>());
          const Dataset data = cache.dataset(body.at("dataset").get<std::string>());
          Representation rep =
              deep_representation(*model, data, body.at("class").get<std::size_t>());
          m = std::move(rep.matrix);
          out["examples"] = rep.examples;
          out["stage"] = rep.stage;
        }
        const Json report = spectral_to_json(spectral_signature(m, so));
        out["report_ref"] = store.put("report", report);
        out["report"] = report;
        return out;
      });
    });
  }
};

Service::Service(std::filesystem::path store_root, ServiceOptions opts)
    : impl_(std::make_unique<Impl>(std::move(store_root), std::move(opts))) {}

Service::~Service() { stop(); }

int Service::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  impl_->worker = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void Service::run(const std::string& host, int port) {
  if (!impl_->server.bind_to_port(host, port)) {
    throw IoError("cannot bind " + host + ":" + std::to_string(port));
  }
  impl_->server.listen_after_bind();
}

void Service::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->worker.joinable()) impl_->worker.join();
}

}  // namespace interpalg
