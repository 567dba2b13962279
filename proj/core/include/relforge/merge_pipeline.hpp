#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "relforge/corpus.hpp"
#include "relforge/llm_client.hpp"
#include "relforge/llm_proposer.hpp"
#include "relforge/nli_aligner.hpp"
#include "relforge/relation_registry.hpp"
#include "relforge/scorer_gateway.hpp"

namespace relforge {

struct MergeResult {
  Corpus corpus;
  std::size_t added = 0;
  std::size_t duplicates = 0;
};

// Appends each triple to its document with empty evidence, skipping (h, t, r)
// already present. Throws DataError for unknown titles or entity indices.
MergeResult merge_into_dataset(const Corpus& corpus, const std::vector<AlignedTriple>& aligned);

enum class RunMode { Train, Test };

struct PipelineConfig {
  std::filesystem::path corpus_path;
  std::filesystem::path registry_path;
  std::filesystem::path constraints_path;  // optional
  std::filesystem::path demonstration_path;  // optional, default shipped
  std::filesystem::path output_dir;
  RunMode mode = RunMode::Train;
  bool force_distant = false;
  int workers = 1;

  std::string llm_backend = "http";  // http | replay | script
  std::filesystem::path transcripts_dir;  // replay input
  std::filesystem::path llm_script;       // script input
  LlmConfig llm;

  std::string nli_backend = "http";  // http | mock
  std::string nli_endpoint;
  std::chrono::milliseconds nli_timeout{60000};
  ScorerConfig scorer;

  AlignConfig align;

  // The raw JSON the config was parsed from (for the manifest).
  nlohmann::json snapshot;
};

// Parses the config object. Relative paths are resolved against `base_dir`.
// Throws UsageError on unknown enum values or invalid settings.
PipelineConfig parse_pipeline_config(const nlohmann::json& j,
                                     const std::filesystem::path& base_dir);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

std::unique_ptr<LlmClient> make_llm_client(const PipelineConfig& config);
std::unique_ptr<NliBackend> make_nli_backend(const PipelineConfig& config);

// Loads the registry and applies the constraint table when configured.
Registry load_configured_registry(const PipelineConfig& config);

struct DocOutcome {
  std::string title;
  bool failed = false;
  std::string error;
  int llm_calls = 0;
  std::size_t parsed = 0;
  std::size_t skipped_lines = 0;
  std::size_t proposals = 0;
  std::size_t dropped = 0;
  std::size_t direct = 0;
  std::size_t nli = 0;
  std::size_t below_threshold = 0;
  std::size_t no_candidate = 0;
  std::size_t unscored = 0;
  std::size_t aligned = 0;
};

struct RunManifest {
  nlohmann::json config;
  RunMode mode = RunMode::Train;
  bool distant_watermark = false;
  std::vector<DocOutcome> documents;
  DocOutcome totals;
  std::size_t merged_added = 0;
  std::size_t triples_before = 0;
  std::size_t triples_after = 0;
  std::size_t tasks_exported = 0;
  std::chrono::milliseconds propose_time{0};
  std::chrono::milliseconds align_time{0};
  std::chrono::milliseconds total_time{0};
};

// Deterministic part of the manifest; timings are excluded.
nlohmann::ordered_json manifest_to_json(const RunManifest& manifest);
nlohmann::ordered_json timings_to_json(const RunManifest& manifest);

struct ProposeStage {
  std::vector<ProposeOutcome> outcomes;  // corpus order
};

// Runs propose() for every document on `workers` threads.
ProposeStage propose_corpus(const Corpus& corpus, const LlmConfig& config, LlmClient& client,
                            int workers);

struct AlignStage {
  std::vector<DocumentAlignment> documents;  // corpus order
  std::vector<AlignedTriple> candidates;     // concatenated, corpus order
};

// Aligns proposals grouped by title; proposals for unknown titles throw
// DataError.
AlignStage align_corpus(const Corpus& corpus, const std::vector<ProposalTriple>& proposals,
                        const Registry& registry, ScorerGateway& scorer,
                        const AlignConfig& config, int workers);

// Full run: propose -> align -> merge (train) or task export (test). Reads
// everything local before the first backend call. Writes into
// config.output_dir:
//   candidates.jsonl, proposals.jsonl, skipped.jsonl, unscored.jsonl,
//   failures.jsonl, transcripts/, manifest.json, timings.json, and either
//   augmented.json (train, or test with force_distant) or
//   verification_tasks.jsonl (test).
RunManifest run_pipeline(const PipelineConfig& config);
RunManifest run_pipeline(const PipelineConfig& config, LlmClient& llm, NliBackend& nli);

// Shipped data files (registry, constraint table, demonstration). The
// RELFORGE_DATA_DIR environment variable overrides the built-in location.
std::filesystem::path default_data_dir();

// Documents that failed plus proposals left unscored; nonzero means the run
// hit backend exhaustion somewhere.
std::size_t backend_failures(const RunManifest& manifest);

// Helpers shared with the CLI.
void write_text_file(const std::filesystem::path& path, const std::string& content);
std::string read_text_file(const std::filesystem::path& path);
std::string dump_json_lines(const std::vector<nlohmann::ordered_json>& records);

}  // namespace relforge
