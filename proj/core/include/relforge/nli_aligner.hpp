#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "relforge/corpus.hpp"
#include "relforge/proposal.hpp"
#include "relforge/relation_registry.hpp"
#include "relforge/scorer_gateway.hpp"

namespace relforge {

enum class Provenance { Direct, Nli };

std::string_view to_string(Provenance provenance);

struct AlignedTriple {
  std::string doc_title;
  int h = 0;
  int t = 0;
  std::string r;
  double fused_score = 0.0;  // 1.0 for direct matches
  Provenance provenance = Provenance::Nli;
  std::string premise;
  std::string chosen_hypothesis;

  friend bool operator==(const AlignedTriple&, const AlignedTriple&) = default;
};

struct AlignConfig {
  double threshold = 0.6;
  bool apply_type_constraints = true;

  // Throws UsageError unless threshold is in (-1, 1).
  void validate() const;
};

// Relation id whose name equals the phrase (lowercased, trimmed).
std::optional<std::string> direct_match(const ProposalTriple& proposal, const Registry& registry);

enum class AlignStatus { Direct, Aligned, BelowThreshold, NoCandidate, Unscored };

std::string_view to_string(AlignStatus status);

struct AlignResult {
  AlignStatus status = AlignStatus::NoCandidate;
  std::optional<AlignedTriple> triple;
  // Best admissible candidate even when it missed the threshold.
  std::optional<Hypothesis> best;
  double best_score = 0.0;
};

// Direct match short-circuits. Otherwise every hypothesis is scored against
// the premise; candidates failing type constraints are removed; the highest
// fused score wins (ties: lower registry index, then forward); it is emitted
// only if strictly above the threshold.
AlignResult align(const ProposalTriple& proposal, const Document& doc, const Registry& registry,
                  ScorerGateway& scorer, const AlignConfig& config);

struct DocumentAlignment {
  std::vector<AlignedTriple> triples;
  std::vector<ProposalTriple> unscored;
  std::size_t direct = 0;
  std::size_t nli = 0;
  std::size_t below_threshold = 0;
  std::size_t no_candidate = 0;
  std::size_t already_gold = 0;
};

// Aligns every proposal, keeps the best-scoring triple per (h, t, r), drops
// triples already labelled in the document and sorts by (h, t, registry
// index).
DocumentAlignment align_document(const std::vector<ProposalTriple>& proposals,
                                 const Document& doc, const Registry& registry,
                                 ScorerGateway& scorer, const AlignConfig& config);

// Candidate file: one JSON object per line
// {title, h, t, r, score, provenance, premise, hypothesis}.
nlohmann::ordered_json candidate_to_json(const AlignedTriple& triple);
AlignedTriple candidate_from_json(const nlohmann::json& j);
std::string dump_candidates(const std::vector<AlignedTriple>& triples);
void save_candidates(const std::filesystem::path& path, const std::vector<AlignedTriple>& triples);
std::vector<AlignedTriple> load_candidates(const std::filesystem::path& path);

// Reads a JSON-lines file, skipping blank lines. Throws DataError with the
// line number on parse failure.
std::vector<nlohmann::json> read_json_lines(const std::filesystem::path& path);

}  // namespace relforge
