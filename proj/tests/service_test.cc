#include "interpalg/service.h"

#include <gtest/gtest.h>
#include <httplib.h>
#include <unistd.h>

#include <filesystem>
#include <thread>

#include "interpalg/analysis.h"
#include "interpalg/generate.h"
#include "interpalg/json_io.h"
#include "test_util.h"

namespace interpalg {
namespace {

namespace fs = std::filesystem;

class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() / ("interpalg-service-" + std::to_string(::getpid()));
    fs::remove_all(root_);
    service_ = std::make_unique<Service>(root_);
    const int port = service_->start("127.0.0.1", 0);
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port);
  }

  void TearDown() override {
    service_->stop();
    fs::remove_all(root_);
  }

  std::pair<int, Json> post(const std::string& path, const Json& body) {
    auto res = client_->Post(path, canonical(body), "application/json");
    EXPECT_TRUE(res) << path;
    if (!res) return {0, nullptr};
    return {res->status, Json::parse(res->body)};
  }

  std::pair<int, Json> get(const std::string& path) {
    auto res = client_->Get(path);
    EXPECT_TRUE(res) << path;
    if (!res) return {0, nullptr};
    return {res->status, Json::parse(res->body)};
  }

  std::string put(const std::string& path, const Json& doc) {
    auto [status, body] = post(path, doc);
    EXPECT_EQ(status, 200) << body.dump();
    return body.value("ref", "");
  }

  // Model f (3 stages, d=6), inputs x and x', a blob dataset and a session
  // with f, x, x' and window w = {0, 1, 2} bound.
  std::string setup_session() {
    model_ref_ = put("/models", model_to_json(testing::fixture_mlp(0).spec()));
    x_ref_ = put("/inputs", tensor_to_json(random_tensor({6}, -1, 1, 1)));
    x2_ref_ = put("/inputs", tensor_to_json(random_tensor({6}, -1, 1, 2)));
    dataset_ref_ = put("/datasets", dataset_to_json(make_blobs(
                                        {{-2, 0, 1, 0, 0, 1}, {2, 1, 0, 0, -1, 0},
                                         {0, -2, 0, 2, 0, 0}},
                                        20, 0.6, 100)));
    auto [s, created] = post("/sessions", Json::object());
    EXPECT_EQ(s, 200);
    const std::string id = created["id"];
    bind(id, {{"name", "f"}, {"kind", "model"}, {"ref", model_ref_}});
    bind(id, {{"name", "x"}, {"kind", "input"}, {"ref", x_ref_}});
    bind(id, {{"name", "x'"}, {"kind", "input"}, {"ref", x2_ref_}});
    bind(id, {{"name", "w"}, {"kind", "window"}, {"indices", {0, 1, 2}}});
    return id;
  }

  void bind(const std::string& id, const Json& body) {
    auto [status, out] = post("/sessions/" + id + "/bind", body);
    EXPECT_EQ(status, 200) << out.dump();
  }

  std::pair<int, Json> query(const std::string& id, const std::string& q) {
    return post("/sessions/" + id + "/query",
                {{"q", q}, {"config", {{"backend", "shapley-exact"}}}});
  }

  fs::path root_;
  std::unique_ptr<Service> service_;
  std::unique_ptr<httplib::Client> client_;
  std::string model_ref_, x_ref_, x2_ref_, dataset_ref_;
};

TEST_F(ServiceTest, StoresAndServesDocuments) {
  const Json model = model_to_json(testing::fixture_mlp(0).spec());
  const std::string ref = put("/models", model);
  EXPECT_EQ(put("/models", model), ref);
  auto [status, body] = get("/models/" + ref);
  EXPECT_EQ(status, 200);
  EXPECT_EQ(body, model);
  EXPECT_EQ(get("/models/" + std::string(64, 'a')).first, 404);
  EXPECT_EQ(get("/inputs/nothing").first, 404);

  auto [bad, err] = post("/models", Json{{"name", "m"}});
  EXPECT_EQ(bad, 400);
  EXPECT_EQ(err["kind"], "malformed-request");
  auto res = client_->Post("/inputs", "{not json", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
}

TEST_F(ServiceTest, QueryReturnsResultRefAndMap) {
  const std::string id = setup_session();
  auto [status, body] = query(id, "select * from f(x) where w");
  ASSERT_EQ(status, 200) << body.dump();
  const std::string ref = body["result_ref"];
  EXPECT_EQ(body["result"]["kind"], "single");
  const auto values = body["result"]["values"].get<std::vector<double>>();
  ASSERT_EQ(values.size(), 6u);
  for (std::size_t i = 3; i < 6; ++i) EXPECT_EQ(values[i], 0.0);
  auto [gs, stored] = get("/results/" + ref);
  EXPECT_EQ(gs, 200);
  EXPECT_EQ(stored, body["result"]);

  auto [s2, again] = query(id, "select * from f(x) where w");
  EXPECT_EQ(again["result_ref"], ref);
}

TEST_F(ServiceTest, ValidationErrorsAre400) {
  const std::string id = setup_session();
  auto [s1, range] = query(id, "select 9 from f(x)");
  EXPECT_EQ(s1, 400);
  EXPECT_EQ(range["kind"], "layer-range");
  EXPECT_EQ(range["errors"][0]["offset"], 7);

  // sigma_3 sigma_2 (x): the outer layer exceeds the inner one.
  const Json nested = {{"op", "select"}, {"layer", 3},
                       {"child", {{"op", "select"}, {"layer", 2},
                                  {"child", {{"op", "identity"}, {"model", "f"}, {"input", "x"}}}}}};
  auto [s2, order] = post("/sessions/" + id + "/query", {{"expr", nested}});
  EXPECT_EQ(s2, 400);
  EXPECT_EQ(order["kind"], "layer-order");
  EXPECT_FALSE(order["errors"][0]["rule"].get<std::string>().empty());
  EXPECT_FALSE(order["errors"][0]["remediation"].get<std::string>().empty());

  auto [s3, syntax] = query(id, "select from f(x)");
  EXPECT_EQ(s3, 400);
  EXPECT_EQ(syntax["error"], "syntax");
  auto [s4, unbound] = query(id, "select * from g(x)");
  EXPECT_EQ(s4, 400);
  EXPECT_EQ(unbound["error"], "bind");
  EXPECT_EQ(post("/sessions/nope/query", {{"q", "select * from f(x)"}}).first, 404);
  auto [s5, cfg] = post("/sessions/" + id + "/query",
                        {{"q", "select * from f(x)"}, {"config", {{"samples", 0}}}});
  EXPECT_EQ(s5, 400);
  EXPECT_EQ(cfg["kind"], "config");
}

TEST_F(ServiceTest, TruncateThenSelect) {
  const std::string id = setup_session();
  auto [s0, missing] = query(id, "select 2 from f(x)");
  EXPECT_EQ(s0, 404);
  EXPECT_NE(missing["message"].get<std::string>().find("truncate"), std::string::npos);

  auto [s1, t] = post("/models/" + model_ref_ + "/truncate",
                      {{"l", 2}, {"dataset", dataset_ref_}});
  ASSERT_EQ(s1, 200) << t.dump();
  EXPECT_GE(t["train_accuracy"].get<double>(), 0.9);
  auto [s2, t2] = post("/models/" + model_ref_ + "/truncate",
                       {{"l", 2}, {"dataset", dataset_ref_}});
  EXPECT_EQ(t2["ref"], t["ref"]);
  EXPECT_EQ(post("/models/" + model_ref_ + "/truncate", {{"l", 3}, {"dataset", dataset_ref_}})
                .first,
            400);
  EXPECT_EQ(post("/models/" + model_ref_ + "/truncate",
                 {{"l", 1}, {"dataset", std::string(64, 'b')}})
                .first,
            404);

  auto [s3, r] = query(id, "select 2 from f(x)");
  ASSERT_EQ(s3, 200) << r.dump();
  EXPECT_EQ(r["result"]["meta"]["truncations"][model_ref_ + "@2"], t["ref"]);
}

TEST_F(ServiceTest, HistoryAndReplay) {
  const std::string id = setup_session();
  bind(id, {{"name", "l"}, {"kind", "layer"}, {"layer", 2}});
  post("/models/" + model_ref_ + "/truncate", {{"l", 2}, {"dataset", dataset_ref_}});
  auto [s1, a] = query(id, "select * from f(x) left join (select * from f(x'))");
  auto [s2, b] = post("/sessions/" + id + "/query",
                      {{"q", "select l from f(x) join (select l from f(x'))"},
                       {"config", {{"samples", 64}, {"seed", 3}}}});
  ASSERT_EQ(s1, 200) << a.dump();
  ASSERT_EQ(s2, 200) << b.dump();
  EXPECT_EQ(a["result"]["kind"], "pair");

  auto [hs, history] = get("/sessions/" + id + "/history");
  ASSERT_EQ(hs, 200);
  ASSERT_EQ(history["entries"].size(), 2u);
  EXPECT_EQ(history["entries"][0]["result_ref"], a["result_ref"]);
  EXPECT_EQ(history["entries"][1]["result_ref"], b["result_ref"]);
  EXPECT_EQ(history["entries"][1]["query"], "select l from f(x) join (select l from f(x'))");
  EXPECT_TRUE(history["entries"][0].contains("wall_time_ms"));

  // Rebinding after the fact does not change what replay re-derives.
  bind(id, {{"name", "x"}, {"kind", "input"}, {"ref", x2_ref_}});
  auto [rs, replay] = post("/sessions/" + id + "/replay", Json::object());
  ASSERT_EQ(rs, 200) << replay.dump();
  EXPECT_TRUE(replay["identical"].get<bool>());
  EXPECT_EQ(replay["entries"][1]["replayed_ref"], b["result_ref"]);
}

TEST_F(ServiceTest, SessionsAreIsolated) {
  const std::string a = setup_session();
  auto [s, created] = post("/sessions", Json::object());
  const std::string b = created["id"];
  EXPECT_NE(a, b);
  EXPECT_EQ(query(b, "select * from f(x)").first, 400);
  query(a, "select * from f(x)");
  EXPECT_EQ(get("/sessions/" + b + "/history").second["entries"].size(), 0u);
  EXPECT_EQ(get("/sessions/" + a + "/history").second["entries"].size(), 1u);
}

TEST_F(ServiceTest, ConcurrentQueries) {
  const std::string id = setup_session();
  std::vector<std::string> refs(6);
  std::vector<std::thread> threads;
  const int port = client_->port();
  for (std::size_t i = 0; i < refs.size(); ++i) {
    threads.emplace_back([&, i] {
      httplib::Client c("127.0.0.1", port);
      auto res = c.Post("/sessions/" + id + "/query",
                        canonical({{"q", i % 2 ? "select * from f(x')" : "select * from f(x)"},
                                   {"config", {{"samples", 200}}}}),
                        "application/json");
      if (res && res->status == 200) refs[i] = Json::parse(res->body)["result_ref"];
    });
  }
  for (auto& t : threads) t.join();
  for (std::size_t i = 2; i < refs.size(); ++i) EXPECT_EQ(refs[i], refs[i % 2]);
  EXPECT_NE(refs[0], refs[1]);
  EXPECT_EQ(get("/sessions/" + id + "/history").second["entries"].size(), refs.size());
}

TEST_F(ServiceTest, WhatIfEdits) {
  const std::string id = setup_session();
  auto [s1, nul] = post("/sessions/" + id + "/whatif",
                        {{"input_ref", "x"}, {"edit", {{"kind", "nullify"}, {"window", {0, 1, 2, 3, 4, 5}}}}});
  ASSERT_EQ(s1, 200) << nul.dump();
  EXPECT_EQ(get("/inputs/" + nul["input_ref"].get<std::string>()).second,
            tensor_to_json(Tensor::zeros({6})));

  auto [s2, sub] = post("/sessions/" + id + "/whatif",
                        {{"input_ref", x_ref_},
                         {"edit", {{"kind", "substitute"}, {"window", {0}}, {"source_input", "x'"}}}});
  ASSERT_EQ(s2, 200) << sub.dump();
  const Tensor edited = tensor_from_json(get("/inputs/" + sub["input_ref"].get<std::string>()).second);
  const Tensor x = random_tensor({6}, -1, 1, 1);
  const Tensor x2 = random_tensor({6}, -1, 1, 2);
  EXPECT_EQ(edited[0], x2[0]);
  EXPECT_EQ(edited[1], x[1]);

  auto [s3, bad] = post("/sessions/" + id + "/whatif",
                        {{"input_ref", "x"}, {"edit", {{"kind", "substitute"}, {"window", {0}}}}});
  EXPECT_EQ(s3, 400);
  auto [s4, rot] = post("/sessions/" + id + "/whatif",
                        {{"input_ref", "x"},
                         {"edit", {{"kind", "transform"}, {"transform", {{"op", "rotate90"}}}}}});
  EXPECT_EQ(s4, 400);
  EXPECT_EQ(rot["kind"], "shape-mismatch");
}

TEST_F(ServiceTest, RotateFourTimesGivesSameRef) {
  auto [s, created] = post("/sessions", Json::object());
  const std::string id = created["id"];
  const std::string start = put("/inputs", tensor_to_json(random_tensor({3, 3}, 0, 1, 4)));
  std::string ref = start;
  for (int i = 0; i < 4; ++i) {
    auto [st, out] = post("/sessions/" + id + "/whatif",
                          {{"input_ref", ref},
                           {"edit", {{"kind", "transform"}, {"transform", {{"op", "rotate90"}}}}}});
    ASSERT_EQ(st, 200) << out.dump();
    ref = out["input_ref"];
    if (i < 3) EXPECT_NE(ref, start);
  }
  EXPECT_EQ(ref, start);
}

TEST_F(ServiceTest, RectWindowBinding) {
  auto [s, created] = post("/sessions", Json::object());
  const std::string id = created["id"];
  const std::string img = put("/inputs", tensor_to_json(random_tensor({4, 4}, 0, 1, 4)));
  bind(id, {{"name", "x"}, {"kind", "input"}, {"ref", img}});
  auto [st, out] = post("/sessions/" + id + "/bind",
                        {{"name", "w"}, {"kind", "window"}, {"rect", {1, 1, 2, 2}}, {"input", "x"}});
  ASSERT_EQ(st, 200) << out.dump();
  EXPECT_EQ(out["bindings"]["w"]["window"]["indices"], Json({5, 6, 9, 10}));
  EXPECT_EQ(post("/sessions/" + id + "/bind",
                 {{"name", "v"}, {"kind", "window"}, {"rect", {1, 1, 9, 2}}, {"input", "x"}})
                .first,
            400);
  EXPECT_EQ(post("/sessions/" + id + "/bind", {{"name", "x"}, {"kind", "layer"}, {"layer", 1}})
                .first,
            400);
}

TEST_F(ServiceTest, SpectralEndpoint) {
  const PlantedFixture fx = make_planted_outliers(0);
  auto [s1, out] = post("/analysis/spectral", {{"matrix", matrix_to_json(fx.matrix)}});
  ASSERT_EQ(s1, 200) << out.dump();
  EXPECT_EQ(out["report"]["flagged"].get<std::vector<std::size_t>>(), fx.planted);
  auto [s2, inf] = post("/analysis/spectral", {{"matrix", matrix_to_json(fx.matrix)}, {"k", "inf"}});
  EXPECT_TRUE(inf["report"]["flagged"].empty());
  EXPECT_EQ(post("/analysis/spectral", {{"matrix", {{1.0, 2.0}}}}).first, 400);

  setup_session();
  auto [s3, rep] = post("/analysis/spectral",
                        {{"model", model_ref_}, {"dataset", dataset_ref_}, {"class", 0}});
  ASSERT_EQ(s3, 200) << rep.dump();
  EXPECT_EQ(rep["examples"].size(), 20u);
  EXPECT_EQ(rep["report"]["scores"].size(), 20u);
}

}  // namespace
}  // namespace interpalg
