#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "relforge/errors.hpp"
#include "relforge/verification.hpp"

namespace httplib {
class Server;
}

namespace relforge {

struct Annotator {
  std::string annotator_id;
  AnnotatorRole role = AnnotatorRole::Annotator;
  std::string token;
  // Qualification metadata, recorded but not enforced.
  std::optional<double> approval_rate;
  std::optional<int> approved_hits;
  std::optional<std::string> location;
};

// JSON array of {annotator_id, role, token, approval_rate?, approved_hits?,
// location?}. Throws UsageError on duplicate ids or tokens.
std::vector<Annotator> load_roster(const std::filesystem::path& path);
std::vector<Annotator> parse_roster(const nlohmann::json& root);

class ServiceError : public Error {
 public:
  enum class Kind { Unauthorized, NotFound, Conflict, BadRequest };
  ServiceError(Kind kind, const std::string& message) : Error(message), kind_(kind) {}
  Kind kind() const { return kind_; }
  int http_status() const;

 private:
  Kind kind_;
};

struct SubmitAck {
  std::string task_id;
  TaskStatus status = TaskStatus::Open;
  bool replayed = false;
};

struct ProgressSummary {
  std::size_t total = 0;
  std::size_t open = 0;
  std::size_t conflicted = 0;
  std::size_t resolved = 0;
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t unanimous = 0;
  std::size_t adjudicated = 0;
  double acceptance_rate = 0.0;
};

nlohmann::ordered_json progress_to_json(const ProgressSummary& progress);

// Transport-independent core of the annotation service. Each open task is
// handed to at most two annotators at a time, preferring the task with the
// fewest decisions plus live assignments; adjudicators only see conflicted
// tasks. State transitions are serialized.
class AnnotationService {
 public:
  using Clock = std::function<std::int64_t()>;

  AnnotationService(VerificationStore& store, std::vector<Annotator> roster, Clock clock = {});

  const Annotator& authenticate(std::string_view token) const;

  std::optional<VerificationTask> next_task(std::string_view token);
  // verdict is "accept", "reject" or "skip". A skip releases the caller's
  // assignment without recording a decision.
  SubmitAck submit_decision(std::string_view token, std::string_view task_id,
                            std::string_view verdict, std::string_view idempotency_key = {});
  ProgressSummary progress() const;
  std::vector<Decision> export_log() const;

 private:
  bool eligible(const VerificationTask& task, const Annotator& who,
                const std::vector<Decision>& decisions) const;

  VerificationStore& store_;
  std::vector<Annotator> roster_;
  std::map<std::string, std::size_t, std::less<>> by_token_;
  Clock clock_;
  mutable std::mutex mutex_;
  // task id -> annotators currently holding it
  std::map<std::string, std::set<std::string>, std::less<>> assignments_;
  // annotator id -> tasks skipped
  std::map<std::string, std::set<std::string>, std::less<>> skipped_;
};

struct ServerOptions {
  std::filesystem::path ui_dir;  // served at "/" when non-empty
  std::string cors_origin;       // Access-Control-Allow-Origin when non-empty
};

// JSON-over-HTTP front end:
//   GET  /api/task/next
//   POST /api/task/{id}/decision   {"verdict": ..., "idempotency_key": ...}
//   GET  /api/progress
//   GET  /api/export
//   GET  /api/session
// Requests authenticate with "Authorization: Bearer <token>".
class AnnotationServer {
 public:
  AnnotationServer(AnnotationService& service, ServerOptions options = {});
  ~AnnotationServer();

  // Binds to an ephemeral port and returns it (-1 on failure).
  int bind_ephemeral(const std::string& host);
  bool bind(const std::string& host, int port);
  // Blocks until stop().
  bool listen();
  void stop();
  void wait_until_ready() const;

 private:
  AnnotationService& service_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace relforge
