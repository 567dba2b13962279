#include "relforge/verification.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

#include <openssl/evp.h>
#include <sqlite3.h>

#include "relforge/errors.hpp"
#include "relforge/merge_pipeline.hpp"
#include "relforge/text.hpp"

namespace relforge {

namespace {

class Statement {
 public:
  Statement(sqlite3* db, const char* sql) : db_(db) {
    if (sqlite3_prepare_v2(db, sql, -1, &stmt_, nullptr) != SQLITE_OK) {
      throw DataError(std::string("sqlite prepare failed: ") + sqlite3_errmsg(db));
    }
  }
  ~Statement() { sqlite3_finalize(stmt_); }
  Statement(const Statement&) = delete;
  Statement& operator=(const Statement&) = delete;

  Statement& bind(int index, std::string_view text) {
    // A null pointer would bind SQL NULL; empty views must stay ''.
    sqlite3_bind_text(stmt_, index, text.data() ? text.data() : "", static_cast<int>(text.size()),
                      SQLITE_TRANSIENT);
    return *this;
  }
  Statement& bind(int index, std::int64_t value) {
    sqlite3_bind_int64(stmt_, index, value);
    return *this;
  }
  // True while rows remain.
  bool step() {
    int rc = sqlite3_step(stmt_);
    if (rc == SQLITE_ROW) return true;
    if (rc == SQLITE_DONE) return false;
    throw DataError(std::string("sqlite step failed: ") + sqlite3_errmsg(db_));
  }
  std::string text(int col) const {
    const auto* p = sqlite3_column_text(stmt_, col);
    return p ? std::string(reinterpret_cast<const char*>(p),
                           static_cast<std::size_t>(sqlite3_column_bytes(stmt_, col)))
             : std::string();
  }
  std::int64_t integer(int col) const { return sqlite3_column_int64(stmt_, col); }

 private:
  sqlite3* db_;
  sqlite3_stmt* stmt_ = nullptr;
};

Decision decision_from_row(const Statement& s) {
  Decision d;
  d.task_id = s.text(0);
  d.annotator_id = s.text(1);
  d.role = parse_role(s.text(2));
  d.verdict = parse_verdict(s.text(3));
  d.timestamp_ms = s.integer(4);
  return d;
}

// Code point offsets of each token in the space-joined sentence.
std::vector<int> token_offsets(const std::vector<std::string>& tokens) {
  std::vector<int> offsets;
  offsets.reserve(tokens.size() + 1);
  int pos = 0;
  for (const auto& tok : tokens) {
    offsets.push_back(pos);
    pos += static_cast<int>(utf8_length(tok)) + 1;
  }
  offsets.push_back(pos);
  return offsets;
}

nlohmann::ordered_json highlight_to_json(const Highlight& h) {
  nlohmann::ordered_json j;
  j["sentence"] = h.sentence;
  j["begin"] = h.begin;
  j["end"] = h.end;
  j["entity"] = h.entity;
  j["role"] = h.role;
  return j;
}

template <typename T>
void write_lines(const std::filesystem::path& path, const std::vector<T>& items,
                 nlohmann::ordered_json (*fn)(const T&)) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& item : items) out << fn(item).dump() << '\n';
}

}  // namespace

std::string_view to_string(TaskStatus status) {
  switch (status) {
    case TaskStatus::Open:
      return "open";
    case TaskStatus::Conflicted:
      return "conflicted";
    case TaskStatus::Resolved:
      return "resolved";
  }
  return "unknown";
}

std::string_view to_string(Verdict verdict) {
  return verdict == Verdict::Accept ? "accept" : "reject";
}

std::string_view to_string(AnnotatorRole role) {
  return role == AnnotatorRole::Annotator ? "annotator" : "adjudicator";
}

std::string_view to_string(ResolutionPath path) {
  return path == ResolutionPath::Unanimous ? "unanimous" : "adjudicated";
}

Verdict parse_verdict(std::string_view text) {
  if (text == "accept") return Verdict::Accept;
  if (text == "reject") return Verdict::Reject;
  throw DataError("unknown verdict '" + std::string(text) + "'");
}

AnnotatorRole parse_role(std::string_view text) {
  if (text == "annotator") return AnnotatorRole::Annotator;
  if (text == "adjudicator") return AnnotatorRole::Adjudicator;
  throw DataError("unknown annotator role '" + std::string(text) + "'");
}

std::string task_id_for(std::string_view title, int h, int t, std::string_view r) {
  std::string key(title);
  key += '\x1f';
  key += std::to_string(h);
  key += '\x1f';
  key += std::to_string(t);
  key += '\x1f';
  key += r;
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(key.data(), key.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 failed");
  }
  char hex[17];
  for (int i = 0; i < 8; ++i) std::snprintf(hex + 2 * i, 3, "%02x", digest[i]);
  return std::string(hex, 16);
}

std::vector<VerificationTask> export_tasks(const std::vector<AlignedTriple>& candidates,
                                           const Corpus& corpus, const Registry& registry) {
  const auto titles = title_index(corpus);
  std::vector<VerificationTask> tasks;
  std::set<std::string> seen;
  for (const auto& c : candidates) {
    auto it = titles.find(c.doc_title);
    if (it == titles.end()) throw DataError("candidate references unknown title '" + c.doc_title + "'");
    const Document& doc = corpus[it->second];
    const int n = static_cast<int>(doc.vertex_set.size());
    if (c.h < 0 || c.h >= n || c.t < 0 || c.t >= n || c.h == c.t) {
      throw DataError("candidate for '" + c.doc_title + "' has invalid entity indices");
    }
    VerificationTask task;
    task.task_id = task_id_for(c.doc_title, c.h, c.t, c.r);
    if (!seen.insert(task.task_id).second) continue;
    const auto& rel = registry.get(c.r);
    task.doc_title = c.doc_title;
    task.h = c.h;
    task.t = c.t;
    task.relation_id = rel.id;
    task.relation_name = rel.name;
    task.subject_name = doc.vertex_set[c.h].canonical_name;
    task.object_name = doc.vertex_set[c.t].canonical_name;
    task.statement = verbalize_hypothesis(rel, task.subject_name, task.object_name);
    task.provenance = c.provenance;
    task.score = c.fused_score;

    // Per-token open/close markers for the delimited text.
    std::vector<std::vector<std::string>> opens(doc.sents.size());
    std::vector<std::vector<std::string>> closes(doc.sents.size());
    for (std::size_t s = 0; s < doc.sents.size(); ++s) {
      opens[s].resize(doc.sents[s].size());
      closes[s].resize(doc.sents[s].size());
    }
    for (int e = 0; e < n; ++e) {
      const std::string role = e == c.h ? "subject" : e == c.t ? "object" : "entity";
      for (const auto& m : doc.vertex_set[e].mentions) {
        const auto offsets = token_offsets(doc.sents[m.sent_id]);
        task.highlights.push_back({m.sent_id, offsets[m.pos.start], offsets[m.pos.end] - 1, e, role});
        if (role == "entity") continue;
        opens[m.sent_id][m.pos.start] += role == "subject" ? "[[" : "{{";
        closes[m.sent_id][m.pos.end - 1] += role == "subject" ? "]]" : "}}";
      }
    }
    std::sort(task.highlights.begin(), task.highlights.end(), [](const auto& a, const auto& b) {
      return std::tie(a.sentence, a.begin, a.end, a.entity) <
             std::tie(b.sentence, b.begin, b.end, b.entity);
    });
    for (std::size_t s = 0; s < doc.sents.size(); ++s) {
      task.sentences.push_back(join(doc.sents[s], " "));
      for (std::size_t k = 0; k < doc.sents[s].size(); ++k) {
        if (!task.marked_text.empty()) task.marked_text += ' ';
        task.marked_text += opens[s][k] + doc.sents[s][k] + closes[s][k];
      }
    }
    tasks.push_back(std::move(task));
  }
  return tasks;
}

nlohmann::ordered_json task_to_json(const VerificationTask& task) {
  nlohmann::ordered_json j;
  j["task_id"] = task.task_id;
  j["title"] = task.doc_title;
  j["h"] = task.h;
  j["t"] = task.t;
  j["r"] = task.relation_id;
  j["relation_name"] = task.relation_name;
  j["subject"] = task.subject_name;
  j["object"] = task.object_name;
  j["statement"] = task.statement;
  j["provenance"] = to_string(task.provenance);
  j["score"] = task.score;
  j["sentences"] = task.sentences;
  auto highlights = nlohmann::ordered_json::array();
  for (const auto& h : task.highlights) highlights.push_back(highlight_to_json(h));
  j["highlights"] = std::move(highlights);
  j["marked_text"] = task.marked_text;
  j["status"] = to_string(task.status);
  return j;
}

VerificationTask task_from_json(const nlohmann::json& j) {
  VerificationTask task;
  try {
    task.task_id = j.at("task_id").get<std::string>();
    task.doc_title = j.at("title").get<std::string>();
    task.h = j.at("h").get<int>();
    task.t = j.at("t").get<int>();
    task.relation_id = j.at("r").get<std::string>();
    task.relation_name = j.value("relation_name", "");
    task.subject_name = j.value("subject", "");
    task.object_name = j.value("object", "");
    task.statement = j.value("statement", "");
    task.provenance = j.value("provenance", "nli") == "direct" ? Provenance::Direct : Provenance::Nli;
    task.score = j.value("score", 0.0);
    task.sentences = j.value("sentences", std::vector<std::string>{});
    if (j.contains("highlights")) {
      for (const auto& h : j["highlights"]) {
        task.highlights.push_back({h.at("sentence").get<int>(), h.at("begin").get<int>(),
                                   h.at("end").get<int>(), h.at("entity").get<int>(),
                                   h.at("role").get<std::string>()});
      }
    }
    task.marked_text = j.value("marked_text", "");
    const std::string status = j.value("status", "open");
    task.status = status == "resolved"     ? TaskStatus::Resolved
                  : status == "conflicted" ? TaskStatus::Conflicted
                                           : TaskStatus::Open;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed task record: ") + e.what());
  }
  return task;
}

void save_tasks(const std::filesystem::path& path, const std::vector<VerificationTask>& tasks) {
  write_lines<VerificationTask>(path, tasks, &task_to_json);
}

std::vector<VerificationTask> load_tasks(const std::filesystem::path& path) {
  std::vector<VerificationTask> out;
  for (const auto& j : read_json_lines(path)) out.push_back(task_from_json(j));
  return out;
}

nlohmann::ordered_json decision_to_json(const Decision& d) {
  nlohmann::ordered_json j;
  j["task_id"] = d.task_id;
  j["annotator_id"] = d.annotator_id;
  j["role"] = to_string(d.role);
  j["verdict"] = to_string(d.verdict);
  j["timestamp_ms"] = d.timestamp_ms;
  return j;
}

Decision decision_from_json(const nlohmann::json& j) {
  Decision d;
  try {
    d.task_id = j.at("task_id").get<std::string>();
    d.annotator_id = j.at("annotator_id").get<std::string>();
    d.role = parse_role(j.value("role", "annotator"));
    d.verdict = parse_verdict(j.at("verdict").get<std::string>());
    d.timestamp_ms = j.value("timestamp_ms", std::int64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed decision record: ") + e.what());
  }
  return d;
}

void save_decisions(const std::filesystem::path& path, const std::vector<Decision>& decisions) {
  write_lines<Decision>(path, decisions, &decision_to_json);
}

std::vector<Decision> load_decisions(const std::filesystem::path& path) {
  std::vector<Decision> out;
  for (const auto& j : read_json_lines(path)) out.push_back(decision_from_json(j));
  return out;
}

TaskResolution resolve_task(std::string_view task_id, const std::vector<Decision>& decisions) {
  std::vector<const Decision*> annotators;
  std::vector<const Decision*> adjudicators;
  for (const auto& d : decisions) {
    if (d.task_id != task_id) continue;
    (d.role == AnnotatorRole::Annotator ? annotators : adjudicators).push_back(&d);
  }
  auto by_arrival = [](const Decision* a, const Decision* b) {
    return std::tie(a->timestamp_ms, a->annotator_id) < std::tie(b->timestamp_ms, b->annotator_id);
  };
  std::sort(annotators.begin(), annotators.end(), by_arrival);
  std::sort(adjudicators.begin(), adjudicators.end(), by_arrival);

  TaskResolution res;
  if (annotators.size() < 2) return res;
  if (annotators[0]->verdict == annotators[1]->verdict) {
    res.status = TaskStatus::Resolved;
    res.outcome = AdjudicationOutcome{std::string(task_id), annotators[0]->verdict,
                                      ResolutionPath::Unanimous};
    return res;
  }
  const Decision* third = !adjudicators.empty() ? adjudicators.front()
                          : annotators.size() >= 3 ? annotators[2]
                                                   : nullptr;
  if (!third) {
    res.status = TaskStatus::Conflicted;
    return res;
  }
  res.status = TaskStatus::Resolved;
  res.outcome = AdjudicationOutcome{std::string(task_id), third->verdict, ResolutionPath::Adjudicated};
  return res;
}

AdjudicationReport adjudicate(const std::vector<Decision>& decisions) {
  std::map<std::string, std::vector<Decision>> by_task;
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& d : decisions) {
    if (!seen.emplace(d.task_id, d.annotator_id).second) {
      throw DataError("duplicate decision by '" + d.annotator_id + "' on task " + d.task_id);
    }
    by_task[d.task_id].push_back(d);
  }
  AdjudicationReport report;
  for (const auto& [task_id, ds] : by_task) {
    auto res = resolve_task(task_id, ds);
    switch (res.status) {
      case TaskStatus::Open:
        report.incomplete.push_back(task_id);
        break;
      case TaskStatus::Conflicted:
        report.conflicted.push_back(task_id);
        break;
      case TaskStatus::Resolved:
        if (res.outcome->path == ResolutionPath::Unanimous) {
          ++report.unanimous;
        } else {
          ++report.adjudicated;
        }
        if (res.outcome->verdict == Verdict::Accept) ++report.accepted;
        report.outcomes.push_back(std::move(*res.outcome));
        break;
    }
  }
  if (!report.outcomes.empty()) {
    report.acceptance_rate =
        static_cast<double>(report.accepted) / static_cast<double>(report.outcomes.size());
  }
  return report;
}

AcceptanceBreakdown acceptance_by_provenance(const AdjudicationReport& report,
                                             const std::vector<VerificationTask>& tasks) {
  std::map<std::string, Provenance> provenance;
  for (const auto& t : tasks) provenance[t.task_id] = t.provenance;
  AcceptanceBreakdown b;
  for (const auto& o : report.outcomes) {
    auto it = provenance.find(o.task_id);
    const bool direct = it != provenance.end() && it->second == Provenance::Direct;
    const bool accepted = o.verdict == Verdict::Accept;
    if (direct) {
      ++b.direct_resolved;
      b.direct_accepted += accepted;
    } else {
      ++b.nli_resolved;
      b.nli_accepted += accepted;
    }
  }
  if (b.nli_resolved) b.nli_rate = static_cast<double>(b.nli_accepted) / b.nli_resolved;
  if (b.direct_resolved) b.direct_rate = static_cast<double>(b.direct_accepted) / b.direct_resolved;
  return b;
}

VerificationApplied apply_verification(const Corpus& corpus,
                                       const std::vector<AdjudicationOutcome>& outcomes,
                                       const std::vector<AlignedTriple>& candidates) {
  std::map<std::string, Verdict> verdicts;
  for (const auto& o : outcomes) verdicts[o.task_id] = o.verdict;
  VerificationApplied applied;
  std::vector<AlignedTriple> accepted;
  for (const auto& c : candidates) {
    auto it = verdicts.find(task_id_for(c.doc_title, c.h, c.t, c.r));
    if (it == verdicts.end()) {
      ++applied.unresolved;
    } else if (it->second == Verdict::Accept) {
      ++applied.accepted;
      accepted.push_back(c);
    } else {
      ++applied.rejected;
    }
  }
  auto merged = merge_into_dataset(corpus, accepted);
  applied.corpus = std::move(merged.corpus);
  applied.added = merged.added;
  return applied;
}

VerificationStore::VerificationStore(const std::string& path) {
  if (sqlite3_open_v2(path.c_str(), &db_,
                      SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_FULLMUTEX,
                      nullptr) != SQLITE_OK) {
    std::string msg = db_ ? sqlite3_errmsg(db_) : "out of memory";
    sqlite3_close(db_);
    throw DataError("cannot open store " + path + ": " + msg);
  }
  sqlite3_busy_timeout(db_, 5000);
  exec(
      "CREATE TABLE IF NOT EXISTS tasks ("
      "  seq INTEGER PRIMARY KEY AUTOINCREMENT,"
      "  task_id TEXT NOT NULL UNIQUE,"
      "  payload TEXT NOT NULL);"
      "CREATE TABLE IF NOT EXISTS decisions ("
      "  seq INTEGER PRIMARY KEY AUTOINCREMENT,"
      "  task_id TEXT NOT NULL REFERENCES tasks(task_id),"
      "  annotator_id TEXT NOT NULL,"
      "  role TEXT NOT NULL,"
      "  verdict TEXT NOT NULL,"
      "  timestamp_ms INTEGER NOT NULL,"
      "  idempotency_key TEXT NOT NULL DEFAULT '',"
      "  UNIQUE (task_id, annotator_id));"
      "CREATE TRIGGER IF NOT EXISTS decisions_no_update BEFORE UPDATE ON decisions"
      "  BEGIN SELECT RAISE(ABORT, 'decision log is append-only'); END;"
      "CREATE TRIGGER IF NOT EXISTS decisions_no_delete BEFORE DELETE ON decisions"
      "  BEGIN SELECT RAISE(ABORT, 'decision log is append-only'); END;");
}

VerificationStore::~VerificationStore() { sqlite3_close(db_); }

void VerificationStore::exec(const char* sql) const {
  char* err = nullptr;
  if (sqlite3_exec(db_, sql, nullptr, nullptr, &err) != SQLITE_OK) {
    std::string msg = err ? err : "unknown error";
    sqlite3_free(err);
    throw DataError("sqlite: " + msg);
  }
}

std::size_t VerificationStore::add_tasks(const std::vector<VerificationTask>& tasks) {
  std::lock_guard lock(mutex_);
  exec("BEGIN");
  std::size_t added = 0;
  try {
    for (const auto& task : tasks) {
      auto record = task;
      record.status = TaskStatus::Open;
      Statement s(db_, "INSERT OR IGNORE INTO tasks(task_id, payload) VALUES (?, ?)");
      s.bind(1, task.task_id).bind(2, task_to_json(record).dump());
      s.step();
      added += static_cast<std::size_t>(sqlite3_changes(db_));
    }
    exec("COMMIT");
  } catch (...) {
    exec("ROLLBACK");
    throw;
  }
  return added;
}

std::vector<VerificationTask> VerificationStore::tasks() const {
  std::lock_guard lock(mutex_);
  std::vector<VerificationTask> out;
  Statement s(db_, "SELECT payload FROM tasks ORDER BY seq");
  while (s.step()) out.push_back(task_from_json(nlohmann::json::parse(s.text(0))));
  const auto all = decisions();
  std::map<std::string, std::vector<Decision>> by_task;
  for (const auto& d : all) by_task[d.task_id].push_back(d);
  for (auto& t : out) t.status = resolve_task(t.task_id, by_task[t.task_id]).status;
  return out;
}

std::optional<VerificationTask> VerificationStore::task(std::string_view task_id) const {
  std::lock_guard lock(mutex_);
  Statement s(db_, "SELECT payload FROM tasks WHERE task_id = ?");
  s.bind(1, task_id);
  if (!s.step()) return std::nullopt;
  auto t = task_from_json(nlohmann::json::parse(s.text(0)));
  t.status = status(task_id);
  return t;
}

AppendResult VerificationStore::append_decision(const Decision& decision,
                                                std::string_view idempotency_key) {
  std::lock_guard lock(mutex_);
  {
    Statement exists(db_, "SELECT 1 FROM tasks WHERE task_id = ?");
    exists.bind(1, decision.task_id);
    if (!exists.step()) throw DataError("unknown task " + decision.task_id);
  }
  {
    Statement prior(db_,
                    "SELECT idempotency_key FROM decisions WHERE task_id = ? AND annotator_id = ?");
    prior.bind(1, decision.task_id).bind(2, decision.annotator_id);
    if (prior.step()) {
      const std::string key = prior.text(0);
      return !idempotency_key.empty() && key == idempotency_key ? AppendResult::Replayed
                                                                : AppendResult::Duplicate;
    }
  }
  Statement insert(db_,
                   "INSERT INTO decisions(task_id, annotator_id, role, verdict, timestamp_ms, "
                   "idempotency_key) VALUES (?, ?, ?, ?, ?, ?)");
  insert.bind(1, decision.task_id)
      .bind(2, decision.annotator_id)
      .bind(3, to_string(decision.role))
      .bind(4, to_string(decision.verdict))
      .bind(5, decision.timestamp_ms)
      .bind(6, idempotency_key);
  insert.step();
  return AppendResult::Inserted;
}

std::vector<Decision> VerificationStore::decisions() const {
  std::lock_guard lock(mutex_);
  std::vector<Decision> out;
  Statement s(db_,
              "SELECT task_id, annotator_id, role, verdict, timestamp_ms FROM decisions ORDER BY seq");
  while (s.step()) out.push_back(decision_from_row(s));
  return out;
}

std::vector<Decision> VerificationStore::decisions_for(std::string_view task_id) const {
  std::lock_guard lock(mutex_);
  std::vector<Decision> out;
  Statement s(db_,
              "SELECT task_id, annotator_id, role, verdict, timestamp_ms FROM decisions "
              "WHERE task_id = ? ORDER BY seq");
  s.bind(1, task_id);
  while (s.step()) out.push_back(decision_from_row(s));
  return out;
}

TaskStatus VerificationStore::status(std::string_view task_id) const {
  return resolve_task(task_id, decisions_for(task_id)).status;
}

}  // namespace relforge
