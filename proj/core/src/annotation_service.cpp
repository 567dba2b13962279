#include "relforge/annotation_service.hpp"

#include <chrono>
#include <fstream>

#include <httplib.h>
#include <spdlog/spdlog.h>

namespace relforge {

namespace {

std::int64_t wall_clock_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::size_t annotator_decisions(const std::vector<Decision>& decisions) {
  std::size_t n = 0;
  for (const auto& d : decisions) n += d.role == AnnotatorRole::Annotator;
  return n;
}

}  // namespace

std::vector<Annotator> parse_roster(const nlohmann::json& root) {
  if (!root.is_array()) throw UsageError("roster must be a JSON array");
  std::vector<Annotator> out;
  std::set<std::string> ids;
  std::set<std::string> tokens;
  for (std::size_t i = 0; i < root.size(); ++i) {
    const auto& j = root[i];
    Annotator a;
    try {
      a.annotator_id = j.at("annotator_id").get<std::string>();
      a.token = j.at("token").get<std::string>();
      a.role = parse_role(j.value("role", "annotator"));
      if (j.contains("approval_rate")) a.approval_rate = j["approval_rate"].get<double>();
      if (j.contains("approved_hits")) a.approved_hits = j["approved_hits"].get<int>();
      if (j.contains("location")) a.location = j["location"].get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw UsageError("roster entry " + std::to_string(i) + ": " + e.what());
    } catch (const DataError& e) {
      throw UsageError("roster entry " + std::to_string(i) + ": " + e.what());
    }
    if (a.annotator_id.empty() || a.token.empty()) {
      throw UsageError("roster entry " + std::to_string(i) + ": empty id or token");
    }
    if (!ids.insert(a.annotator_id).second) {
      throw UsageError("roster: duplicate annotator id '" + a.annotator_id + "'");
    }
    if (!tokens.insert(a.token).second) {
      throw UsageError("roster: duplicate token for '" + a.annotator_id + "'");
    }
    out.push_back(std::move(a));
  }
  return out;
}

std::vector<Annotator> load_roster(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read roster " + path.string());
  try {
    return parse_roster(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
}

int ServiceError::http_status() const {
  switch (kind_) {
    case Kind::Unauthorized:
      return 401;
    case Kind::NotFound:
      return 404;
    case Kind::Conflict:
      return 409;
    case Kind::BadRequest:
      return 400;
  }
  return 500;
}

nlohmann::ordered_json progress_to_json(const ProgressSummary& p) {
  nlohmann::ordered_json j;
  j["total"] = p.total;
  j["open"] = p.open;
  j["conflicted"] = p.conflicted;
  j["resolved"] = p.resolved;
  j["accepted"] = p.accepted;
  j["rejected"] = p.rejected;
  j["unanimous"] = p.unanimous;
  j["adjudicated"] = p.adjudicated;
  j["acceptance_rate"] = p.acceptance_rate;
  return j;
}

AnnotationService::AnnotationService(VerificationStore& store, std::vector<Annotator> roster,
                                     Clock clock)
    : store_(store), roster_(std::move(roster)), clock_(std::move(clock)) {
  if (!clock_) clock_ = wall_clock_ms;
  for (std::size_t i = 0; i < roster_.size(); ++i) {
    if (!by_token_.emplace(roster_[i].token, i).second) {
      throw UsageError("roster: duplicate token for '" + roster_[i].annotator_id + "'");
    }
  }
}

const Annotator& AnnotationService::authenticate(std::string_view token) const {
  auto it = by_token_.find(token);
  if (token.empty() || it == by_token_.end()) {
    throw ServiceError(ServiceError::Kind::Unauthorized, "unknown or missing token");
  }
  return roster_[it->second];
}

bool AnnotationService::eligible(const VerificationTask& task, const Annotator& who,
                                 const std::vector<Decision>& decisions) const {
  for (const auto& d : decisions) {
    if (d.annotator_id == who.annotator_id) return false;
  }
  if (auto s = skipped_.find(who.annotator_id);
      s != skipped_.end() && s->second.contains(task.task_id)) {
    return false;
  }
  std::size_t holders = 0;
  if (auto a = assignments_.find(task.task_id); a != assignments_.end()) {
    holders = a->second.size() - a->second.count(who.annotator_id);
  }
  if (who.role == AnnotatorRole::Annotator) {
    return task.status == TaskStatus::Open && annotator_decisions(decisions) + holders < 2;
  }
  return task.status == TaskStatus::Conflicted && holders == 0;
}

std::optional<VerificationTask> AnnotationService::next_task(std::string_view token) {
  const Annotator& who = authenticate(token);
  std::lock_guard lock(mutex_);
  auto tasks = store_.tasks();
  std::map<std::string, std::vector<Decision>> by_task;
  for (auto& d : store_.decisions()) by_task[d.task_id].push_back(std::move(d));

  const VerificationTask* pick = nullptr;
  std::size_t pick_load = 0;
  for (const auto& task : tasks) {
    const auto& ds = by_task[task.task_id];
    auto held = assignments_.find(task.task_id);
    // Re-serve a task the caller already holds.
    if (held != assignments_.end() && held->second.contains(who.annotator_id) &&
        eligible(task, who, ds)) {
      return task;
    }
    if (!eligible(task, who, ds)) continue;
    const std::size_t load = ds.size() + (held == assignments_.end() ? 0 : held->second.size());
    if (!pick || load < pick_load) {
      pick = &task;
      pick_load = load;
    }
  }
  if (!pick) return std::nullopt;
  assignments_[pick->task_id].insert(who.annotator_id);
  return *pick;
}

SubmitAck AnnotationService::submit_decision(std::string_view token, std::string_view task_id,
                                             std::string_view verdict,
                                             std::string_view idempotency_key) {
  const Annotator& who = authenticate(token);
  std::lock_guard lock(mutex_);
  auto task = store_.task(task_id);
  if (!task) throw ServiceError(ServiceError::Kind::NotFound, "no task " + std::string(task_id));

  auto release = [&] {
    auto it = assignments_.find(task_id);
    if (it == assignments_.end()) return;
    it->second.erase(who.annotator_id);
    if (it->second.empty()) assignments_.erase(it);
  };

  SubmitAck ack{task->task_id, task->status, false};
  if (verdict == "skip") {
    release();
    skipped_[who.annotator_id].insert(task->task_id);
    return ack;
  }
  Decision d;
  d.task_id = task->task_id;
  d.annotator_id = who.annotator_id;
  d.role = who.role;
  try {
    d.verdict = parse_verdict(verdict);
  } catch (const DataError&) {
    throw ServiceError(ServiceError::Kind::BadRequest,
                       "verdict must be accept, reject or skip");
  }
  d.timestamp_ms = clock_();

  const auto existing = store_.decisions_for(task_id);
  bool already = false;
  for (const auto& e : existing) already |= e.annotator_id == who.annotator_id;
  if (!already) {
    const bool open_for_role = who.role == AnnotatorRole::Annotator
                                   ? task->status == TaskStatus::Open &&
                                         annotator_decisions(existing) < 2
                                   : task->status == TaskStatus::Conflicted;
    if (!open_for_role) {
      throw ServiceError(ServiceError::Kind::Conflict,
                         "task " + task->task_id + " is " + std::string(to_string(task->status)));
    }
  }
  switch (store_.append_decision(d, idempotency_key)) {
    case AppendResult::Inserted:
      break;
    case AppendResult::Replayed:
      ack.replayed = true;
      break;
    case AppendResult::Duplicate:
      throw ServiceError(ServiceError::Kind::Conflict,
                         who.annotator_id + " already decided task " + task->task_id);
  }
  release();
  ack.status = store_.status(task_id);
  return ack;
}

ProgressSummary AnnotationService::progress() const {
  std::lock_guard lock(mutex_);
  ProgressSummary p;
  const auto tasks = store_.tasks();
  p.total = tasks.size();
  for (const auto& t : tasks) {
    switch (t.status) {
      case TaskStatus::Open:
        ++p.open;
        break;
      case TaskStatus::Conflicted:
        ++p.conflicted;
        break;
      case TaskStatus::Resolved:
        ++p.resolved;
        break;
    }
  }
  const auto report = adjudicate(store_.decisions());
  p.accepted = report.accepted;
  p.rejected = report.outcomes.size() - report.accepted;
  p.unanimous = report.unanimous;
  p.adjudicated = report.adjudicated;
  p.acceptance_rate = report.acceptance_rate;
  return p;
}

std::vector<Decision> AnnotationService::export_log() const { return store_.decisions(); }

namespace {

std::string bearer_token(const httplib::Request& req) {
  const std::string header = req.get_header_value("Authorization");
  constexpr std::string_view prefix = "Bearer ";
  if (header.size() <= prefix.size() || header.compare(0, prefix.size(), prefix) != 0) return {};
  return header.substr(prefix.size());
}

void send_json(httplib::Response& res, int status, const nlohmann::ordered_json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const ServiceError& e) {
      send_json(res, e.http_status(), {{"error", e.what()}});
    } catch (const DataError& e) {
      send_json(res, 400, {{"error", e.what()}});
    } catch (const std::exception& e) {
      spdlog::error("request {} {} failed: {}", req.method, req.path, e.what());
      send_json(res, 500, {{"error", "internal error"}});
    }
  };
}

}  // namespace

AnnotationServer::AnnotationServer(AnnotationService& service, ServerOptions options)
    : service_(service), server_(std::make_unique<httplib::Server>()) {
  auto& srv = *server_;
  AnnotationService* svc = &service_;

  srv.Get("/api/session", guarded([svc](const httplib::Request& req, httplib::Response& res) {
            const auto& who = svc->authenticate(bearer_token(req));
            send_json(res, 200, {{"annotator_id", who.annotator_id}, {"role", to_string(who.role)}});
          }));

  srv.Get("/api/task/next", guarded([svc](const httplib::Request& req, httplib::Response& res) {
            auto task = svc->next_task(bearer_token(req));
            nlohmann::ordered_json body;
            body["task"] = task ? task_to_json(*task) : nlohmann::ordered_json(nullptr);
            send_json(res, 200, body);
          }));

  srv.Post(R"(/api/task/([^/]+)/decision)",
           guarded([svc](const httplib::Request& req, httplib::Response& res) {
             const std::string token = bearer_token(req);
             svc->authenticate(token);
             nlohmann::json body;
             try {
               body = nlohmann::json::parse(req.body);
             } catch (const nlohmann::json::parse_error&) {
               throw ServiceError(ServiceError::Kind::BadRequest, "body is not valid JSON");
             }
             if (!body.is_object() || !body.contains("verdict") || !body["verdict"].is_string()) {
               throw ServiceError(ServiceError::Kind::BadRequest, "missing string field 'verdict'");
             }
             std::string key;
             if (body.contains("idempotency_key")) {
               if (!body["idempotency_key"].is_string()) {
                 throw ServiceError(ServiceError::Kind::BadRequest,
                                    "idempotency_key must be a string");
               }
               key = body["idempotency_key"].get<std::string>();
             }
             auto ack = svc->submit_decision(token, req.matches[1].str(),
                                             body["verdict"].get<std::string>(), key);
             send_json(res, 200,
                       {{"task_id", ack.task_id},
                        {"status", to_string(ack.status)},
                        {"replayed", ack.replayed}});
           }));

  srv.Get("/api/progress", guarded([svc](const httplib::Request& req, httplib::Response& res) {
            svc->authenticate(bearer_token(req));
            send_json(res, 200, progress_to_json(svc->progress()));
          }));

  srv.Get("/api/export", guarded([svc](const httplib::Request& req, httplib::Response& res) {
            svc->authenticate(bearer_token(req));
            auto items = nlohmann::ordered_json::array();
            for (const auto& d : svc->export_log()) items.push_back(decision_to_json(d));
            send_json(res, 200, {{"decisions", std::move(items)}});
          }));

  if (!options.cors_origin.empty()) {
    const std::string origin = options.cors_origin;
    srv.set_post_routing_handler([origin](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Origin", origin);
      res.set_header("Access-Control-Allow-Headers", "Authorization, Content-Type");
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    });
    srv.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
      res.status = 204;
    });
  }
  if (!options.ui_dir.empty() && !srv.set_mount_point("/", options.ui_dir.string())) {
    throw UsageError("ui directory does not exist: " + options.ui_dir.string());
  }
}

AnnotationServer::~AnnotationServer() { stop(); }

int AnnotationServer::bind_ephemeral(const std::string& host) {
  return server_->bind_to_any_port(host);
}

bool AnnotationServer::bind(const std::string& host, int port) {
  return server_->bind_to_port(host, port);
}

bool AnnotationServer::listen() { return server_->listen_after_bind(); }

void AnnotationServer::stop() {
  if (server_ && server_->is_running()) server_->stop();
}

void AnnotationServer::wait_until_ready() const { server_->wait_until_ready(); }

}  // namespace relforge
