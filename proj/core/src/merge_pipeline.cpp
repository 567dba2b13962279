#include "relforge/merge_pipeline.hpp"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "relforge/errors.hpp"
#include "relforge/verification.hpp"

#ifndef RELFORGE_DEFAULT_DATA_DIR
#define RELFORGE_DEFAULT_DATA_DIR "data"
#endif

namespace relforge {

namespace fs = std::filesystem;

namespace {

// Runs fn(i) for i in [0, n) on up to `workers` threads. The first exception
// is rethrown after all threads join.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn fn) {
  const std::size_t threads = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < threads; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
            next = n;
          }
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                const std::string& where) {
  if (!j.is_object()) throw UsageError(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.contains(key)) throw UsageError("unknown config key '" + where + key + "'");
  }
}

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key) || j[key].is_null()) return fallback;
  try {
    return j[key].get<T>();
  } catch (const nlohmann::json::exception&) {
    throw UsageError("config key '" + where + key + "' has the wrong type");
  }
}

fs::path resolve(const fs::path& base, const std::string& value) {
  if (value.empty()) return {};
  fs::path p(value);
  return p.is_absolute() ? p : base / p;
}

nlohmann::ordered_json outcome_to_json(const DocOutcome& d) {
  nlohmann::ordered_json j;
  j["title"] = d.title;
  j["failed"] = d.failed;
  if (!d.error.empty()) j["error"] = d.error;
  j["llm_calls"] = d.llm_calls;
  j["parsed"] = d.parsed;
  j["skipped_lines"] = d.skipped_lines;
  j["proposals"] = d.proposals;
  j["dropped"] = d.dropped;
  j["direct"] = d.direct;
  j["nli"] = d.nli;
  j["below_threshold"] = d.below_threshold;
  j["no_candidate"] = d.no_candidate;
  j["unscored"] = d.unscored;
  j["aligned"] = d.aligned;
  return j;
}

std::string transcript_file_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "doc-%05zu.json", index);
  return buf;
}

struct LoadedInputs {
  Registry registry;
  Corpus corpus;
  LlmConfig llm;
};

LoadedInputs load_inputs(const PipelineConfig& config) {
  config.align.validate();
  if (config.output_dir.empty()) throw UsageError("config: output_dir is required");
  if (config.corpus_path.empty()) throw UsageError("config: corpus is required");
  if (config.workers < 1) throw UsageError("config: workers must be >= 1");
  LoadedInputs in;
  in.registry = load_configured_registry(config);
  in.corpus = load_corpus(config.corpus_path, in.registry);
  in.llm = config.llm;
  if (in.llm.demonstration.empty()) {
    const fs::path demo = config.demonstration_path.empty()
                              ? default_data_dir() / "demonstration.txt"
                              : config.demonstration_path;
    try {
      in.llm.demonstration = read_text_file(demo);
    } catch (const DataError& e) {
      throw UsageError(e.what());
    }
  }
  in.llm.validate();
  return in;
}

RunManifest run_loaded(const PipelineConfig& config, const LoadedInputs& in, LlmClient& llm,
                       NliBackend& nli) {
  using clock = std::chrono::steady_clock;
  const auto started = clock::now();
  const auto& corpus = in.corpus;

  fs::create_directories(config.output_dir / "transcripts");

  RunManifest manifest;
  manifest.config = config.snapshot;
  if (manifest.config.is_object()) manifest.config.erase("output_dir");
  manifest.mode = config.mode;
  manifest.distant_watermark = config.mode == RunMode::Test && config.force_distant;
  manifest.triples_before = dataset_stats(corpus).triple_count;

  BoundedChatClient bounded(llm, in.llm.max_in_flight);
  auto proposed = propose_corpus(corpus, in.llm, bounded, config.workers);
  manifest.propose_time = std::chrono::duration_cast<std::chrono::milliseconds>(clock::now() - started);

  std::vector<ProposalTriple> proposals;
  std::vector<nlohmann::ordered_json> proposal_lines;
  std::vector<nlohmann::ordered_json> skipped_lines;
  std::vector<nlohmann::ordered_json> failure_lines;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    auto& out = proposed.outcomes[i];
    write_text_file(config.output_dir / "transcripts" / transcript_file_name(i),
                    transcript_to_json(out.transcript).dump(2) + "\n");
    DocOutcome doc;
    doc.title = corpus[i].title;
    doc.failed = out.failed;
    doc.error = out.error;
    doc.llm_calls = out.llm_calls;
    doc.parsed = out.parsed;
    doc.skipped_lines = out.skipped_lines.size();
    doc.proposals = out.proposals.size();
    doc.dropped = out.dropped.size();
    manifest.documents.push_back(std::move(doc));
    if (out.failed) failure_lines.push_back({{"title", corpus[i].title}, {"error", out.error}});
    for (const auto& s : out.skipped_lines) {
      skipped_lines.push_back(
          {{"title", corpus[i].title},
           {"round", s.round},
           {"line", s.line_index},
           {"text", s.text},
           {"kind", "unparsable"}});
    }
    for (const auto& d : out.dropped) {
      auto j = proposal_to_json(d.proposal);
      j["kind"] = to_string(d.reason);
      skipped_lines.push_back(std::move(j));
    }
    for (auto& p : out.proposals) {
      proposal_lines.push_back(proposal_to_json(p));
      proposals.push_back(std::move(p));
    }
  }

  const auto align_started = clock::now();
  ScorerGateway scorer(nli, config.scorer);
  auto aligned = align_corpus(corpus, proposals, in.registry, scorer, config.align, config.workers);
  manifest.align_time =
      std::chrono::duration_cast<std::chrono::milliseconds>(clock::now() - align_started);

  std::vector<nlohmann::ordered_json> unscored_lines;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& da = aligned.documents[i];
    auto& doc = manifest.documents[i];
    doc.direct = da.direct;
    doc.nli = da.nli;
    doc.below_threshold = da.below_threshold;
    doc.no_candidate = da.no_candidate;
    doc.unscored = da.unscored.size();
    doc.aligned = da.triples.size();
    for (const auto& p : da.unscored) unscored_lines.push_back(proposal_to_json(p));
  }

  write_text_file(config.output_dir / "proposals.jsonl", dump_json_lines(proposal_lines));
  write_text_file(config.output_dir / "skipped.jsonl", dump_json_lines(skipped_lines));
  write_text_file(config.output_dir / "failures.jsonl", dump_json_lines(failure_lines));
  write_text_file(config.output_dir / "unscored.jsonl", dump_json_lines(unscored_lines));
  write_text_file(config.output_dir / "candidates.jsonl", dump_candidates(aligned.candidates));

  if (config.mode == RunMode::Train || config.force_distant) {
    auto merged = merge_into_dataset(corpus, aligned.candidates);
    manifest.merged_added = merged.added;
    manifest.triples_after = dataset_stats(merged.corpus).triple_count;
    write_text_file(config.output_dir / "augmented.json", dump_corpus(merged.corpus));
  } else {
    auto tasks = export_tasks(aligned.candidates, corpus, in.registry);
    manifest.tasks_exported = tasks.size();
    manifest.triples_after = manifest.triples_before;
    save_tasks(config.output_dir / "verification_tasks.jsonl", tasks);
  }

  for (const auto& d : manifest.documents) {
    auto& t = manifest.totals;
    t.failed = t.failed || d.failed;
    t.llm_calls += d.llm_calls;
    t.parsed += d.parsed;
    t.skipped_lines += d.skipped_lines;
    t.proposals += d.proposals;
    t.dropped += d.dropped;
    t.direct += d.direct;
    t.nli += d.nli;
    t.below_threshold += d.below_threshold;
    t.no_candidate += d.no_candidate;
    t.unscored += d.unscored;
    t.aligned += d.aligned;
  }
  manifest.total_time = std::chrono::duration_cast<std::chrono::milliseconds>(clock::now() - started);

  write_text_file(config.output_dir / "manifest.json", manifest_to_json(manifest).dump(2) + "\n");
  write_text_file(config.output_dir / "timings.json", timings_to_json(manifest).dump(2) + "\n");
  if (manifest.distant_watermark) {
    spdlog::warn("test-mode candidates merged without verification (force_distant)");
  }
  return manifest;
}

}  // namespace

fs::path default_data_dir() {
  if (const char* env = std::getenv("RELFORGE_DATA_DIR"); env && *env) return env;
  return RELFORGE_DEFAULT_DATA_DIR;
}

std::size_t backend_failures(const RunManifest& manifest) {
  std::size_t n = manifest.totals.unscored;
  for (const auto& d : manifest.documents) n += d.failed;
  return n;
}

MergeResult merge_into_dataset(const Corpus& corpus, const std::vector<AlignedTriple>& aligned) {
  MergeResult result;
  result.corpus = corpus;
  const auto titles = title_index(corpus);
  for (const auto& a : aligned) {
    auto it = titles.find(a.doc_title);
    if (it == titles.end()) throw DataError("merge: unknown title '" + a.doc_title + "'");
    Document& doc = result.corpus[it->second];
    const int n = static_cast<int>(doc.vertex_set.size());
    if (a.h < 0 || a.h >= n || a.t < 0 || a.t >= n || a.h == a.t) {
      throw DataError("merge: invalid entity indices for '" + a.doc_title + "'");
    }
    if (doc.has_label(a.h, a.t, a.r)) {
      ++result.duplicates;
      continue;
    }
    doc.labels.push_back({a.h, a.t, a.r, {}});
    ++result.added;
  }
  return result;
}

PipelineConfig parse_pipeline_config(const nlohmann::json& j, const fs::path& base_dir) {
  check_keys(j,
             {"corpus", "registry", "constraints", "demonstration", "output_dir", "mode",
              "force_distant", "workers", "preset", "llm", "nli", "align"},
             "");
  PipelineConfig c;
  c.snapshot = j;
  c.corpus_path = resolve(base_dir, get_or<std::string>(j, "corpus", "", ""));
  if (c.corpus_path.empty()) throw UsageError("config: corpus is required");
  const std::string registry = get_or<std::string>(j, "registry", "", "");
  c.registry_path = registry.empty() ? default_data_dir() / "relations.json" : resolve(base_dir, registry);
  if (j.contains("constraints") && j["constraints"].is_boolean()) {
    if (j["constraints"].get<bool>()) c.constraints_path = default_data_dir() / "type_constraints.json";
  } else {
    const std::string constraints = get_or<std::string>(j, "constraints", "", "");
    c.constraints_path = constraints.empty() ? default_data_dir() / "type_constraints.json"
                                             : resolve(base_dir, constraints);
  }
  c.demonstration_path = resolve(base_dir, get_or<std::string>(j, "demonstration", "", ""));
  c.output_dir = resolve(base_dir, get_or<std::string>(j, "output_dir", "", ""));

  const std::string mode = get_or<std::string>(j, "mode", "train", "");
  if (mode == "train") {
    c.mode = RunMode::Train;
  } else if (mode == "test") {
    c.mode = RunMode::Test;
  } else {
    throw UsageError("config: mode must be 'train' or 'test'");
  }
  c.force_distant = get_or<bool>(j, "force_distant", false, "");
  c.workers = get_or<int>(j, "workers", 1, "");

  const std::string preset = get_or<std::string>(j, "preset", "", "");
  if (preset == "gpt") {
    c.llm.rounds = 0;
  } else if (preset == "more-gpt") {
    c.llm.rounds = 2;
  } else if (!preset.empty()) {
    throw UsageError("config: preset must be 'gpt' or 'more-gpt'");
  }

  if (j.contains("llm")) {
    const auto& l = j["llm"];
    check_keys(l,
               {"backend", "endpoint", "model", "temperature", "rounds", "timeout_ms", "retries",
                "backoff_ms", "api_key_env", "max_document_tokens", "max_in_flight",
                "transcripts_dir", "script"},
               "llm.");
    c.llm_backend = get_or<std::string>(l, "backend", c.llm_backend, "llm.");
    c.llm.endpoint = get_or<std::string>(l, "endpoint", "", "llm.");
    c.llm.model = get_or<std::string>(l, "model", c.llm.model, "llm.");
    c.llm.temperature = get_or<double>(l, "temperature", c.llm.temperature, "llm.");
    c.llm.rounds = get_or<int>(l, "rounds", c.llm.rounds, "llm.");
    c.llm.timeout = std::chrono::milliseconds(get_or<long>(l, "timeout_ms", c.llm.timeout.count(), "llm."));
    c.llm.retries = get_or<int>(l, "retries", c.llm.retries, "llm.");
    c.llm.backoff = std::chrono::milliseconds(get_or<long>(l, "backoff_ms", c.llm.backoff.count(), "llm."));
    c.llm.api_key_env = get_or<std::string>(l, "api_key_env", c.llm.api_key_env, "llm.");
    c.llm.max_document_tokens =
        get_or<std::size_t>(l, "max_document_tokens", c.llm.max_document_tokens, "llm.");
    c.llm.max_in_flight = get_or<int>(l, "max_in_flight", c.llm.max_in_flight, "llm.");
    c.transcripts_dir = resolve(base_dir, get_or<std::string>(l, "transcripts_dir", "", "llm."));
    c.llm_script = resolve(base_dir, get_or<std::string>(l, "script", "", "llm."));
  }
  if (c.llm_backend != "http" && c.llm_backend != "replay" && c.llm_backend != "script") {
    throw UsageError("config: llm.backend must be http, replay or script");
  }

  if (j.contains("nli")) {
    const auto& n = j["nli"];
    check_keys(n, {"backend", "endpoint", "timeout_ms", "batch_size", "retries", "backoff_ms",
                   "max_in_flight"},
               "nli.");
    c.nli_backend = get_or<std::string>(n, "backend", c.nli_backend, "nli.");
    c.nli_endpoint = get_or<std::string>(n, "endpoint", "", "nli.");
    c.nli_timeout = std::chrono::milliseconds(get_or<long>(n, "timeout_ms", c.nli_timeout.count(), "nli."));
    c.scorer.batch_size = get_or<std::size_t>(n, "batch_size", c.scorer.batch_size, "nli.");
    c.scorer.retries = get_or<int>(n, "retries", c.scorer.retries, "nli.");
    c.scorer.backoff = std::chrono::milliseconds(get_or<long>(n, "backoff_ms", c.scorer.backoff.count(), "nli."));
    c.scorer.max_in_flight = get_or<int>(n, "max_in_flight", c.scorer.max_in_flight, "nli.");
  }
  if (c.nli_backend != "http" && c.nli_backend != "mock") {
    throw UsageError("config: nli.backend must be http or mock");
  }
  if (c.scorer.batch_size == 0) throw UsageError("config: nli.batch_size must be positive");

  if (j.contains("align")) {
    const auto& a = j["align"];
    check_keys(a, {"threshold", "type_constraints"}, "align.");
    c.align.threshold = get_or<double>(a, "threshold", c.align.threshold, "align.");
    c.align.apply_type_constraints =
        get_or<bool>(a, "type_constraints", c.align.apply_type_constraints, "align.");
  }
  c.align.validate();
  if (c.workers < 1) throw UsageError("config: workers must be >= 1");
  return c;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
  return parse_pipeline_config(j, path.parent_path());
}

std::unique_ptr<LlmClient> make_llm_client(const PipelineConfig& config) {
  if (config.llm_backend == "replay") {
    if (config.transcripts_dir.empty()) throw UsageError("config: llm.transcripts_dir is required for replay");
    return std::make_unique<ReplayChatClient>(config.transcripts_dir);
  }
  if (config.llm_backend == "script") {
    if (config.llm_script.empty()) throw UsageError("config: llm.script is required for the script backend");
    return std::make_unique<ScriptedChatClient>(ScriptedChatClient::from_file(config.llm_script));
  }
  if (config.llm.endpoint.empty()) throw UsageError("config: llm.endpoint is required");
  return std::make_unique<HttpChatClient>(config.llm.endpoint, config.llm.api_key_env,
                                          config.llm.timeout);
}

std::unique_ptr<NliBackend> make_nli_backend(const PipelineConfig& config) {
  if (config.nli_backend == "mock") return std::make_unique<MockNliBackend>();
  if (config.nli_endpoint.empty()) throw UsageError("config: nli.endpoint is required");
  return std::make_unique<HttpNliBackend>(config.nli_endpoint, config.nli_timeout);
}

Registry load_configured_registry(const PipelineConfig& config) {
  Registry registry = load_registry(config.registry_path);
  if (!config.constraints_path.empty()) {
    registry = registry.with_constraints(load_constraint_table(config.constraints_path));
  }
  return registry;
}

nlohmann::ordered_json manifest_to_json(const RunManifest& m) {
  nlohmann::ordered_json j;
  j["config"] = m.config;
  j["mode"] = m.mode == RunMode::Train ? "train" : "test";
  j["distant_watermark"] = m.distant_watermark;
  auto docs = nlohmann::ordered_json::array();
  for (const auto& d : m.documents) docs.push_back(outcome_to_json(d));
  j["documents"] = std::move(docs);
  auto totals = outcome_to_json(m.totals);
  totals.erase("title");
  totals.erase("failed");
  std::size_t failed = 0;
  for (const auto& d : m.documents) failed += d.failed;
  totals["failed_documents"] = failed;
  j["totals"] = std::move(totals);
  j["triples_before"] = m.triples_before;
  j["triples_after"] = m.triples_after;
  j["merged_added"] = m.merged_added;
  j["tasks_exported"] = m.tasks_exported;
  return j;
}

nlohmann::ordered_json timings_to_json(const RunManifest& m) {
  nlohmann::ordered_json j;
  j["propose_ms"] = m.propose_time.count();
  j["align_ms"] = m.align_time.count();
  j["total_ms"] = m.total_time.count();
  return j;
}

ProposeStage propose_corpus(const Corpus& corpus, const LlmConfig& config, LlmClient& client,
                            int workers) {
  ProposeStage stage;
  stage.outcomes.resize(corpus.size());
  parallel_for(corpus.size(), workers,
               [&](std::size_t i) { stage.outcomes[i] = propose(corpus[i], config, client); });
  return stage;
}

AlignStage align_corpus(const Corpus& corpus, const std::vector<ProposalTriple>& proposals,
                        const Registry& registry, ScorerGateway& scorer, const AlignConfig& config,
                        int workers) {
  const auto titles = title_index(corpus);
  std::vector<std::vector<ProposalTriple>> grouped(corpus.size());
  for (const auto& p : proposals) {
    auto it = titles.find(p.doc_title);
    if (it == titles.end()) throw DataError("proposal references unknown title '" + p.doc_title + "'");
    grouped[it->second].push_back(p);
  }
  AlignStage stage;
  stage.documents.resize(corpus.size());
  parallel_for(corpus.size(), workers, [&](std::size_t i) {
    stage.documents[i] = align_document(grouped[i], corpus[i], registry, scorer, config);
  });
  for (const auto& d : stage.documents) {
    stage.candidates.insert(stage.candidates.end(), d.triples.begin(), d.triples.end());
  }
  return stage;
}

RunManifest run_pipeline(const PipelineConfig& config) {
  auto inputs = load_inputs(config);
  auto llm = make_llm_client(config);
  auto nli = make_nli_backend(config);
  return run_loaded(config, inputs, *llm, *nli);
}

RunManifest run_pipeline(const PipelineConfig& config, LlmClient& llm, NliBackend& nli) {
  return run_loaded(config, load_inputs(config), llm, nli);
}

void write_text_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << content;
  if (!out) throw DataError("write failed for " + path.string());
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string dump_json_lines(const std::vector<nlohmann::ordered_json>& records) {
  std::string out;
  for (const auto& r : records) {
    out += r.dump();
    out += '\n';
  }
  return out;
}

}  // namespace relforge
