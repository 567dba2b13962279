#include <gtest/gtest.h>

#include <fstream>
#include <thread>

#include <httplib.h>

#include "relforge/annotation_service.hpp"
#include "support.hpp"

using namespace relforge;

namespace {

std::vector<VerificationTask> fixture_tasks() {
  static const Corpus corpus = testsupport::fixture_corpus();
  std::vector<AlignedTriple> cands = {
      {"Harold Venn", 0, 3, "P22", 0.75, Provenance::Nli, "", ""},
      {"Lake Morrow", 0, 2, "P17", 1.0, Provenance::Direct, "", ""},
      {"Mira Castell", 3, 0, "P22", 0.7, Provenance::Nli, "", ""},
  };
  return export_tasks(cands, corpus, testsupport::registry());
}

struct Fixture {
  Fixture() : store(":memory:") {
    store.add_tasks(fixture_tasks());
    service = std::make_unique<AnnotationService>(
        store, load_roster(testsupport::fixture("roster.json")), [this] { return ++now; });
  }
  VerificationStore store;
  std::int64_t now = 1000;
  std::unique_ptr<AnnotationService> service;
};

ServiceError::Kind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ServiceError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no ServiceError thrown";
  return ServiceError::Kind::BadRequest;
}

}  // namespace

TEST(Roster, LoadsMetadataAndRejectsDuplicates) {
  auto roster = load_roster(testsupport::fixture("roster.json"));
  ASSERT_EQ(roster.size(), 4u);
  EXPECT_EQ(roster[0].approval_rate, 0.97);
  EXPECT_EQ(roster[0].approved_hits, 1200);
  EXPECT_EQ(roster[0].location, "US");
  EXPECT_FALSE(roster[2].approval_rate);
  EXPECT_EQ(roster[3].role, AnnotatorRole::Adjudicator);
  EXPECT_THROW(parse_roster(nlohmann::json::parse(
                   R"([{"annotator_id":"a","role":"annotator","token":"x"},
                       {"annotator_id":"a","role":"annotator","token":"y"}])")),
               UsageError);
  EXPECT_THROW(parse_roster(nlohmann::json::parse(
                   R"([{"annotator_id":"a","role":"annotator","token":"x"},
                       {"annotator_id":"b","role":"annotator","token":"x"}])")),
               UsageError);
  EXPECT_THROW(load_roster("/nonexistent/roster.json"), UsageError);
}

TEST(Service, AuthenticationRequired) {
  Fixture f;
  EXPECT_EQ(kind_of([&] { f.service->next_task("bogus"); }), ServiceError::Kind::Unauthorized);
  EXPECT_EQ(kind_of([&] { f.service->next_task(""); }), ServiceError::Kind::Unauthorized);
  EXPECT_EQ(f.service->authenticate("tok-adj-1").annotator_id, "adj-1");
}

TEST(Service, TwoAnnotatorsPerTaskThenAdjudicator) {
  Fixture f;
  auto& svc = *f.service;
  auto t1 = svc.next_task("tok-ann-1");
  ASSERT_TRUE(t1);
  // Re-asking returns the held task.
  EXPECT_EQ(svc.next_task("tok-ann-1")->task_id, t1->task_id);
  auto t2 = svc.next_task("tok-ann-2");
  ASSERT_TRUE(t2);
  // Load balancing: a different, untouched task goes to the second annotator.
  EXPECT_NE(t2->task_id, t1->task_id);
  EXPECT_FALSE(svc.next_task("tok-adj-1"));  // nothing conflicted yet

  auto t3 = svc.next_task("tok-ann-3");
  ASSERT_TRUE(t3);
  EXPECT_NE(t3->task_id, t1->task_id);
  EXPECT_NE(t3->task_id, t2->task_id);

  EXPECT_EQ(svc.submit_decision("tok-ann-1", t1->task_id, "accept").status, TaskStatus::Open);
  EXPECT_EQ(svc.submit_decision("tok-ann-2", t1->task_id, "reject").status, TaskStatus::Conflicted);
  auto adj = svc.next_task("tok-adj-1");
  ASSERT_TRUE(adj);
  EXPECT_EQ(adj->task_id, t1->task_id);
  EXPECT_EQ(svc.submit_decision("tok-adj-1", t1->task_id, "reject").status, TaskStatus::Resolved);
  EXPECT_FALSE(svc.next_task("tok-adj-1"));
  auto log = svc.export_log();
  EXPECT_EQ(log.size(), 3u);
  EXPECT_EQ(log[0].timestamp_ms, 1001);
  EXPECT_EQ(log[0].annotator_id, "ann-1");
}

TEST(Service, TaskIsNeverHandedToAThirdConcurrentAnnotator) {
  Fixture f;
  auto& svc = *f.service;
  std::map<std::string, int> holders;
  for (const char* tok : {"tok-ann-1", "tok-ann-2", "tok-ann-3"}) {
    for (int i = 0; i < 3; ++i) {
      auto t = svc.next_task(tok);
      if (!t) break;
      ++holders[t->task_id];
      svc.submit_decision(tok, t->task_id, "skip");
    }
  }
  // After skips each annotator walks all three tasks.
  EXPECT_EQ(holders.size(), 3u);
  Fixture g;
  auto a = g.service->next_task("tok-ann-1");
  auto b = g.service->next_task("tok-ann-2");
  auto c = g.service->next_task("tok-ann-3");
  std::map<std::string, int> live;
  for (auto* t : {&a, &b, &c}) {
    ASSERT_TRUE(*t);
    ++live[(*t)->task_id];
  }
  for (const auto& [id, n] : live) EXPECT_LE(n, 2) << id;
}

TEST(Service, SkipRemovesTaskForThatAnnotatorOnly) {
  Fixture f;
  auto& svc = *f.service;
  auto first = svc.next_task("tok-ann-1");
  EXPECT_EQ(svc.submit_decision("tok-ann-1", first->task_id, "skip").status, TaskStatus::Open);
  std::set<std::string> seen;
  while (auto t = svc.next_task("tok-ann-1")) {
    EXPECT_NE(t->task_id, first->task_id);
    seen.insert(t->task_id);
    svc.submit_decision("tok-ann-1", t->task_id, "accept");
  }
  EXPECT_EQ(seen.size(), 2u);
  EXPECT_TRUE(svc.export_log().size() == 2u);
}

TEST(Service, ErrorsMapToKinds) {
  Fixture f;
  auto& svc = *f.service;
  const auto id = fixture_tasks()[0].task_id;
  EXPECT_EQ(kind_of([&] { svc.submit_decision("tok-ann-1", "nope", "accept"); }),
            ServiceError::Kind::NotFound);
  EXPECT_EQ(kind_of([&] { svc.submit_decision("tok-ann-1", id, "maybe"); }),
            ServiceError::Kind::BadRequest);
  svc.submit_decision("tok-ann-1", id, "accept", "key-1");
  EXPECT_TRUE(svc.submit_decision("tok-ann-1", id, "accept", "key-1").replayed);
  EXPECT_EQ(kind_of([&] { svc.submit_decision("tok-ann-1", id, "reject", "key-2"); }),
            ServiceError::Kind::Conflict);
  // Adjudicators may not decide open tasks.
  EXPECT_EQ(kind_of([&] { svc.submit_decision("tok-adj-1", id, "accept"); }),
            ServiceError::Kind::Conflict);
  svc.submit_decision("tok-ann-2", id, "accept");
  // Resolved: no room for a third annotator.
  EXPECT_EQ(kind_of([&] { svc.submit_decision("tok-ann-3", id, "accept"); }),
            ServiceError::Kind::Conflict);
  EXPECT_EQ(ServiceError(ServiceError::Kind::Conflict, "").http_status(), 409);
  EXPECT_EQ(ServiceError(ServiceError::Kind::Unauthorized, "").http_status(), 401);
}

TEST(Service, ProgressCountsStatuses) {
  Fixture f;
  auto& svc = *f.service;
  const auto tasks = fixture_tasks();
  svc.submit_decision("tok-ann-1", tasks[0].task_id, "accept");
  svc.submit_decision("tok-ann-2", tasks[0].task_id, "accept");
  svc.submit_decision("tok-ann-1", tasks[1].task_id, "accept");
  svc.submit_decision("tok-ann-2", tasks[1].task_id, "reject");
  auto p = svc.progress();
  EXPECT_EQ(p.total, 3u);
  EXPECT_EQ(p.resolved, 1u);
  EXPECT_EQ(p.conflicted, 1u);
  EXPECT_EQ(p.open, 1u);
  EXPECT_EQ(p.accepted, 1u);
  EXPECT_DOUBLE_EQ(p.acceptance_rate, 1.0);
  svc.submit_decision("tok-adj-1", tasks[1].task_id, "reject");
  p = svc.progress();
  EXPECT_EQ(p.resolved, 2u);
  EXPECT_EQ(p.adjudicated, 1u);
  EXPECT_DOUBLE_EQ(p.acceptance_rate, 0.5);
  EXPECT_EQ(progress_to_json(p)["rejected"], 1);
}

TEST(Service, ConcurrentSubmitsAreSerialized) {
  Fixture f;
  auto& svc = *f.service;
  const auto id = fixture_tasks()[0].task_id;
  std::atomic<int> ok{0}, conflict{0};
  std::vector<std::thread> threads;
  for (const char* tok : {"tok-ann-1", "tok-ann-2", "tok-ann-3"}) {
    for (int i = 0; i < 3; ++i) {
      threads.emplace_back([&, tok] {
        try {
          svc.submit_decision(tok, id, "accept");
          ++ok;
        } catch (const ServiceError&) {
          ++conflict;
        }
      });
    }
  }
  for (auto& t : threads) t.join();
  EXPECT_EQ(ok.load(), 2);
  EXPECT_EQ(conflict.load(), 7);
  EXPECT_EQ(f.store.decisions_for(id).size(), 2u);
}

class HttpApi : public ::testing::Test {
 protected:
  void SetUp() override {
    ServerOptions opts;
    opts.cors_origin = "http://localhost:5173";
    ui_.emplace();
    std::ofstream(*ui_ / "index.html") << "<html>ui</html>";
    opts.ui_dir = ui_->path();
    server_ = std::make_unique<AnnotationServer>(*f_.service, opts);
    port_ = server_->bind_ephemeral("127.0.0.1");
    ASSERT_GT(port_, 0);
    thread_ = std::thread([this] { server_->listen(); });
    server_->wait_until_ready();
  }
  void TearDown() override {
    server_->stop();
    thread_.join();
  }
  httplib::Client client(const std::string& token = "") {
    httplib::Client c("127.0.0.1", port_);
    if (!token.empty()) c.set_bearer_token_auth(token);
    return c;
  }
  static nlohmann::json body(const httplib::Result& r) { return nlohmann::json::parse(r->body); }

  Fixture f_;
  std::optional<testsupport::TempDir> ui_;
  std::unique_ptr<AnnotationServer> server_;
  std::thread thread_;
  int port_ = -1;
};

TEST_F(HttpApi, SessionAndAuth) {
  auto r = client("tok-ann-1").Get("/api/session");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(body(r)["annotator_id"], "ann-1");
  EXPECT_EQ(body(r)["role"], "annotator");
  for (const char* path : {"/api/session", "/api/task/next", "/api/progress", "/api/export"}) {
    auto unauth = client("wrong").Get(path);
    ASSERT_TRUE(unauth);
    EXPECT_EQ(unauth->status, 401) << path;
    EXPECT_TRUE(body(unauth).contains("error"));
  }
  EXPECT_EQ(client().Get("/api/progress")->status, 401);
}

TEST_F(HttpApi, FullAnnotationRoundTrip) {
  auto c1 = client("tok-ann-1");
  auto next = c1.Get("/api/task/next");
  ASSERT_EQ(next->status, 200);
  const auto task = body(next)["task"];
  ASSERT_TRUE(task.is_object());
  EXPECT_TRUE(task.contains("marked_text"));
  EXPECT_TRUE(task.contains("highlights"));
  const std::string id = task["task_id"];

  const std::string path = "/api/task/" + id + "/decision";
  auto post = c1.Post(path, R"({"verdict":"accept","idempotency_key":"k1"})", "application/json");
  ASSERT_EQ(post->status, 200);
  EXPECT_EQ(body(post)["task_id"], id);
  EXPECT_EQ(body(post)["status"], "open");
  EXPECT_EQ(body(post)["replayed"], false);

  auto replay = c1.Post(path, R"({"verdict":"accept","idempotency_key":"k1"})", "application/json");
  ASSERT_EQ(replay->status, 200);
  EXPECT_EQ(body(replay)["replayed"], true);
  EXPECT_EQ(c1.Post(path, R"({"verdict":"reject","idempotency_key":"k9"})", "application/json")->status,
            409);

  auto c2 = client("tok-ann-2");
  EXPECT_EQ(c2.Post(path, R"({"verdict":"reject"})", "application/json")->status, 200);
  auto adj = client("tok-adj-1");
  auto adj_next = adj.Get("/api/task/next");
  EXPECT_EQ(body(adj_next)["task"]["task_id"], id);
  auto final = adj.Post(path, R"({"verdict":"accept"})", "application/json");
  EXPECT_EQ(body(final)["status"], "resolved");

  auto progress = c1.Get("/api/progress");
  ASSERT_EQ(progress->status, 200);
  EXPECT_EQ(body(progress)["resolved"], 1);
  EXPECT_EQ(body(progress)["adjudicated"], 1);
  EXPECT_EQ(body(progress)["acceptance_rate"], 1.0);

  auto exported = c1.Get("/api/export");
  ASSERT_EQ(exported->status, 200);
  const auto decisions = body(exported)["decisions"];
  ASSERT_EQ(decisions.size(), 3u);
  EXPECT_EQ(decisions[2]["role"], "adjudicator");
  EXPECT_EQ(decisions[0]["verdict"], "accept");
}

TEST_F(HttpApi, BadRequests) {
  auto c = client("tok-ann-1");
  const std::string id = fixture_tasks()[0].task_id;
  EXPECT_EQ(c.Post("/api/task/" + id + "/decision", "not json", "application/json")->status, 400);
  EXPECT_EQ(c.Post("/api/task/" + id + "/decision", R"({"verdict":3})", "application/json")->status, 400);
  EXPECT_EQ(c.Post("/api/task/" + id + "/decision", R"({"verdict":"maybe"})", "application/json")->status,
            400);
  EXPECT_EQ(c.Post("/api/task/" + id + "/decision", R"({"verdict":"accept","idempotency_key":1})",
                   "application/json")
                ->status,
            400);
  EXPECT_EQ(c.Post("/api/task/missing/decision", R"({"verdict":"accept"})", "application/json")->status,
            404);
}

TEST_F(HttpApi, NextIsNullWhenNothingIsLeft) {
  auto c = client("tok-adj-1");
  auto r = c.Get("/api/task/next");
  ASSERT_EQ(r->status, 200);
  EXPECT_TRUE(body(r)["task"].is_null());
}

TEST_F(HttpApi, CorsAndStaticUi) {
  auto c = client();
  auto pre = c.Options("/api/task/next");
  ASSERT_TRUE(pre);
  EXPECT_EQ(pre->status, 204);
  EXPECT_EQ(pre->get_header_value("Access-Control-Allow-Origin"), "http://localhost:5173");
  auto ui = c.Get("/index.html");
  ASSERT_TRUE(ui);
  EXPECT_EQ(ui->status, 200);
  EXPECT_EQ(ui->body, "<html>ui</html>");
}
