#include "relforge/evaluator.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "relforge/errors.hpp"
#include "relforge/nli_aligner.hpp"

namespace relforge {

TripleSet gold_triples(const Corpus& corpus) {
  TripleSet out;
  for (const auto& doc : corpus) {
    for (const auto& l : doc.labels) out.insert({doc.title, l.h, l.t, l.r});
  }
  return out;
}

TripleSet to_triple_set(const std::vector<DocTriple>& triples) {
  TripleSet out;
  for (const auto& t : triples) out.insert({t.title, t.triple.h, t.triple.t, t.triple.r});
  return out;
}

double f1_from_pr(double precision, double recall) {
  if (precision + recall <= 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

EvalReport exact_match_prf(const TripleSet& predictions, const Corpus& gold) {
  const auto titles = title_index(gold);
  for (const auto& p : predictions) {
    auto it = titles.find(p.title);
    if (it == titles.end()) throw DataError("prediction references unknown title '" + p.title + "'");
    const int n = static_cast<int>(gold[it->second].vertex_set.size());
    if (p.h < 0 || p.h >= n || p.t < 0 || p.t >= n) {
      throw DataError("prediction for '" + p.title + "' has an entity index out of range");
    }
  }
  const TripleSet gold_set = gold_triples(gold);

  EvalReport report;
  report.predicted = predictions.size();
  report.gold = gold_set.size();
  for (const auto& g : gold_set) ++report.per_relation[g.r].gold;
  for (const auto& p : predictions) {
    auto& counts = report.per_relation[p.r];
    ++counts.predicted;
    if (gold_set.contains(p)) {
      ++counts.tp;
      ++report.true_positive;
    }
  }
  if (report.predicted > 0) {
    report.precision = 100.0 * static_cast<double>(report.true_positive) /
                       static_cast<double>(report.predicted);
  }
  if (report.gold > 0) {
    report.recall =
        100.0 * static_cast<double>(report.true_positive) / static_cast<double>(report.gold);
  }
  report.f1 = f1_from_pr(report.precision, report.recall);
  return report;
}

double recall_on_subset(const TripleSet& predictions, const TripleSet& subset) {
  if (subset.empty()) throw UsageError("recall_on_subset: subset is empty");
  std::size_t hit = 0;
  for (const auto& s : subset) hit += predictions.count(s);
  return 100.0 * static_cast<double>(hit) / static_cast<double>(subset.size());
}

std::string format_percent(double value) {
  // The epsilon absorbs binary representation error so that exact halves
  // (e.g. 12.345 stored as 12.34499...) round up.
  const double scaled = std::floor(value * 100.0 + 0.5 + 1e-7);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", scaled / 100.0);
  return buf;
}

std::string render_report_table(const EvalReport& report) {
  std::ostringstream out;
  out << "P        R        F1       TP       Pred     Gold\n";
  char line[160];
  std::snprintf(line, sizeof line, "%-8s %-8s %-8s %-8zu %-8zu %zu\n",
                format_percent(report.precision).c_str(), format_percent(report.recall).c_str(),
                format_percent(report.f1).c_str(), report.true_positive, report.predicted,
                report.gold);
  out << line;
  if (!report.subset_recalls.empty()) {
    out << "\nSubset recall\n";
    for (const auto& [name, recall] : report.subset_recalls) {
      out << "  " << name << ": " << format_percent(recall) << "\n";
    }
  }
  if (!report.per_relation.empty()) {
    out << "\nRelation   TP       Pred     Gold\n";
    for (const auto& [r, c] : report.per_relation) {
      std::snprintf(line, sizeof line, "%-10s %-8zu %-8zu %zu\n", r.c_str(), c.tp, c.predicted,
                    c.gold);
      out << line;
    }
  }
  return out.str();
}

nlohmann::ordered_json report_to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["precision"] = format_percent(report.precision);
  j["recall"] = format_percent(report.recall);
  j["f1"] = format_percent(report.f1);
  j["true_positive"] = report.true_positive;
  j["predicted"] = report.predicted;
  j["gold"] = report.gold;
  nlohmann::ordered_json subsets = nlohmann::ordered_json::object();
  for (const auto& [name, recall] : report.subset_recalls) subsets[name] = format_percent(recall);
  j["subset_recalls"] = std::move(subsets);
  nlohmann::ordered_json per = nlohmann::ordered_json::object();
  for (const auto& [r, c] : report.per_relation) {
    per[r] = {{"tp", c.tp}, {"predicted", c.predicted}, {"gold", c.gold}};
  }
  j["per_relation"] = std::move(per);
  return j;
}

TripleSet load_predictions(const std::filesystem::path& path) {
  TripleSet out;
  for (const auto& j : read_json_lines(path)) {
    try {
      out.insert({j.at("title").get<std::string>(), j.at("h").get<int>(), j.at("t").get<int>(),
                  j.at("r").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ": malformed prediction: " + e.what());
    }
  }
  return out;
}

}  // namespace relforge
