#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "relforge/corpus.hpp"
#include "relforge/nli_aligner.hpp"
#include "relforge/relation_registry.hpp"

struct sqlite3;

namespace relforge {

enum class TaskStatus { Open, Conflicted, Resolved };
enum class Verdict { Accept, Reject };
enum class AnnotatorRole { Annotator, Adjudicator };
enum class ResolutionPath { Unanimous, Adjudicated };

std::string_view to_string(TaskStatus status);
std::string_view to_string(Verdict verdict);
std::string_view to_string(AnnotatorRole role);
std::string_view to_string(ResolutionPath path);
Verdict parse_verdict(std::string_view text);
AnnotatorRole parse_role(std::string_view text);

// Character (code point) range of one mention inside a rendered sentence.
struct Highlight {
  int sentence = 0;
  int begin = 0;
  int end = 0;  // exclusive
  int entity = 0;
  std::string role;  // "subject", "object" or "entity"
};

struct VerificationTask {
  std::string task_id;
  std::string doc_title;
  int h = 0;
  int t = 0;
  std::string relation_id;
  std::string relation_name;
  std::string subject_name;
  std::string object_name;
  std::string statement;
  Provenance provenance = Provenance::Nli;
  double score = 0.0;
  std::vector<std::string> sentences;
  std::vector<Highlight> highlights;
  // Document text with subject mentions wrapped in [[...]] and object
  // mentions in {{...}}.
  std::string marked_text;
  TaskStatus status = TaskStatus::Open;
};

// First 16 hex digits of SHA-256 over title, h, t and r.
std::string task_id_for(std::string_view title, int h, int t, std::string_view r);

// One task per distinct candidate; the statement is the relation template
// instantiated with the canonical entity names. Throws DataError for
// candidates whose title or entities are not in the corpus.
std::vector<VerificationTask> export_tasks(const std::vector<AlignedTriple>& candidates,
                                           const Corpus& corpus, const Registry& registry);

nlohmann::ordered_json task_to_json(const VerificationTask& task);
VerificationTask task_from_json(const nlohmann::json& j);
void save_tasks(const std::filesystem::path& path, const std::vector<VerificationTask>& tasks);
std::vector<VerificationTask> load_tasks(const std::filesystem::path& path);

struct Decision {
  std::string task_id;
  std::string annotator_id;
  AnnotatorRole role = AnnotatorRole::Annotator;
  Verdict verdict = Verdict::Accept;
  std::int64_t timestamp_ms = 0;

  friend bool operator==(const Decision&, const Decision&) = default;
};

nlohmann::ordered_json decision_to_json(const Decision& decision);
Decision decision_from_json(const nlohmann::json& j);
void save_decisions(const std::filesystem::path& path, const std::vector<Decision>& decisions);
std::vector<Decision> load_decisions(const std::filesystem::path& path);

struct AdjudicationOutcome {
  std::string task_id;
  Verdict verdict = Verdict::Accept;
  ResolutionPath path = ResolutionPath::Unanimous;

  friend bool operator==(const AdjudicationOutcome&, const AdjudicationOutcome&) = default;
};

// State of a single task given its decisions. The first two annotator
// decisions (by timestamp, then annotator id) form the pair; the tiebreak is
// the earliest adjudicator decision, or failing that a third annotator
// decision.
struct TaskResolution {
  TaskStatus status = TaskStatus::Open;
  std::optional<AdjudicationOutcome> outcome;
};

TaskResolution resolve_task(std::string_view task_id, const std::vector<Decision>& decisions);

struct AdjudicationReport {
  std::vector<AdjudicationOutcome> outcomes;  // resolved tasks, sorted by id
  std::vector<std::string> conflicted;        // awaiting a third decision
  std::vector<std::string> incomplete;        // fewer than two decisions
  std::size_t unanimous = 0;
  std::size_t adjudicated = 0;
  std::size_t accepted = 0;
  double acceptance_rate = 0.0;  // accepted / resolved, 0 when none resolved
};

// Throws DataError on a repeated (task, annotator) pair.
AdjudicationReport adjudicate(const std::vector<Decision>& decisions);

struct AcceptanceBreakdown {
  std::size_t nli_resolved = 0;
  std::size_t nli_accepted = 0;
  std::size_t direct_resolved = 0;
  std::size_t direct_accepted = 0;
  double nli_rate = 0.0;
  double direct_rate = 0.0;
};

AcceptanceBreakdown acceptance_by_provenance(const AdjudicationReport& report,
                                             const std::vector<VerificationTask>& tasks);

struct VerificationApplied {
  Corpus corpus;
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t unresolved = 0;
  std::size_t added = 0;
};

// Merges accepted candidates (empty evidence). Rejected and unresolved
// candidates never enter the corpus.
VerificationApplied apply_verification(const Corpus& corpus,
                                       const std::vector<AdjudicationOutcome>& outcomes,
                                       const std::vector<AlignedTriple>& candidates);

enum class AppendResult { Inserted, Duplicate, Replayed };

// Single-file SQLite store of tasks and an append-only decision log.
// Thread-safe.
class VerificationStore {
 public:
  // ":memory:" opens a private in-memory database.
  explicit VerificationStore(const std::string& path);
  ~VerificationStore();
  VerificationStore(const VerificationStore&) = delete;
  VerificationStore& operator=(const VerificationStore&) = delete;

  // Inserts tasks not already present; returns how many were new.
  std::size_t add_tasks(const std::vector<VerificationTask>& tasks);
  std::vector<VerificationTask> tasks() const;  // insertion order, live status
  std::optional<VerificationTask> task(std::string_view task_id) const;

  // Duplicate (task, annotator) pairs are refused unless the idempotency key
  // matches the stored one, in which case the call is a no-op replay.
  AppendResult append_decision(const Decision& decision, std::string_view idempotency_key = {});
  std::vector<Decision> decisions() const;  // log order
  std::vector<Decision> decisions_for(std::string_view task_id) const;

  TaskStatus status(std::string_view task_id) const;

 private:
  void exec(const char* sql) const;

  sqlite3* db_ = nullptr;
  mutable std::recursive_mutex mutex_;
};

}  // namespace relforge
