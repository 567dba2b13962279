#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "relforge/corpus.hpp"

namespace relforge {

// Match identity for evaluation: (title, h, t, r).
struct TripleKey {
  std::string title;
  int h = 0;
  int t = 0;
  std::string r;

  friend auto operator<=>(const TripleKey&, const TripleKey&) = default;
};

using TripleSet = std::set<TripleKey>;

TripleSet gold_triples(const Corpus& corpus);
TripleSet to_triple_set(const std::vector<DocTriple>& triples);

struct RelationCounts {
  std::size_t tp = 0;
  std::size_t predicted = 0;
  std::size_t gold = 0;

  friend bool operator==(const RelationCounts&, const RelationCounts&) = default;
};

// Percentages in [0, 100].
struct EvalReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t true_positive = 0;
  std::size_t predicted = 0;
  std::size_t gold = 0;
  std::map<std::string, RelationCounts> per_relation;
  std::map<std::string, double> subset_recalls;
};

double f1_from_pr(double precision, double recall);

// Micro-averaged exact match. Throws DataError when a prediction names a
// title missing from the gold corpus or an entity index out of range.
EvalReport exact_match_prf(const TripleSet& predictions, const Corpus& gold);

// Percentage of `subset` found in `predictions`. Throws UsageError on an
// empty subset.
double recall_on_subset(const TripleSet& predictions, const TripleSet& subset);

// Half-up rounding to two decimals, e.g. 57.142857 -> "57.14".
std::string format_percent(double value);

std::string render_report_table(const EvalReport& report);
nlohmann::ordered_json report_to_json(const EvalReport& report);

// Prediction file: JSON lines {title, h, t, r}.
TripleSet load_predictions(const std::filesystem::path& path);

}  // namespace relforge
