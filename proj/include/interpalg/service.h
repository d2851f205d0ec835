#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "interpalg/attribution.h"

namespace interpalg {

struct ServiceOptions {
  BackendConfig defaults;  // per-query overrides arrive in the request body
  std::size_t threads = 8;
};

// HTTP service over a store. Endpoints (JSON bodies):
//   POST /models, GET /models/{ref}, POST /inputs, GET /inputs/{ref},
//   POST /datasets, GET /datasets/{ref}, POST /models/{ref}/truncate,
//   POST /sessions, POST /sessions/{id}/bind, POST /sessions/{id}/query,
//   POST /sessions/{id}/whatif, GET /sessions/{id}/history,
//   POST /sessions/{id}/replay, GET /results/{ref}, POST /analysis/spectral.
// Malformed requests and invalid queries answer 400 with an error payload;
// unknown refs and sessions answer 404.
class Service {
 public:
  explicit Service(std::filesystem::path store_root, ServiceOptions opts = {});
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Binds (port 0 picks a free port), serves on a background thread and
  // returns the bound port. Throws IoError when binding fails.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  // Binds and serves on the calling thread until stop().
  void run(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace interpalg
