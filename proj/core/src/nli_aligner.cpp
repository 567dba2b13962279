#include "relforge/nli_aligner.hpp"

#include <fstream>
#include <map>
#include <tuple>

#include "relforge/errors.hpp"
#include "relforge/text.hpp"

namespace relforge {

std::string_view to_string(Provenance provenance) {
  return provenance == Provenance::Direct ? "direct" : "nli";
}

std::string_view to_string(AlignStatus status) {
  switch (status) {
    case AlignStatus::Direct:
      return "direct";
    case AlignStatus::Aligned:
      return "aligned";
    case AlignStatus::BelowThreshold:
      return "below_threshold";
    case AlignStatus::NoCandidate:
      return "no_candidate";
    case AlignStatus::Unscored:
      return "unscored";
  }
  return "unknown";
}

void AlignConfig::validate() const {
  if (!(threshold > -1.0 && threshold < 1.0)) {
    throw UsageError("align.threshold must lie strictly between -1 and 1");
  }
}

std::optional<std::string> direct_match(const ProposalTriple& proposal, const Registry& registry) {
  return registry.id_for_name(proposal.relation_phrase);
}

AlignResult align(const ProposalTriple& proposal, const Document& doc, const Registry& registry,
                  ScorerGateway& scorer, const AlignConfig& config) {
  if (!proposal.linked()) throw DataError("align: proposal is not linked to entities");
  const int subject = *proposal.subject_idx;
  const int object = *proposal.object_idx;
  if (subject < 0 || object < 0 || subject >= static_cast<int>(doc.vertex_set.size()) ||
      object >= static_cast<int>(doc.vertex_set.size())) {
    throw DataError("align: entity index out of range for '" + doc.title + "'");
  }
  const std::string premise = verbalize_premise(proposal);

  AlignResult result;
  if (auto id = direct_match(proposal, registry)) {
    const auto& rel = registry.get(*id);
    result.status = AlignStatus::Direct;
    result.best_score = 1.0;
    result.triple = AlignedTriple{doc.title, subject, object, *id, 1.0, Provenance::Direct, premise,
                                  verbalize_hypothesis(rel, proposal.subject_surface,
                                                       proposal.object_surface)};
    return result;
  }

  const auto hypotheses = enumerate_hypotheses(proposal, registry);
  std::vector<NliPair> pairs;
  pairs.reserve(hypotheses.size());
  for (const auto& h : hypotheses) {
    pairs.push_back({premise, h.sentence, {proposal.subject_surface, proposal.object_surface}});
  }
  const auto scores = scorer.score_batch(pairs);
  for (const auto& s : scores) {
    if (!s) {
      result.status = AlignStatus::Unscored;
      return result;
    }
  }

  const EntityType subject_type = doc.vertex_set[subject].entity_type;
  const EntityType object_type = doc.vertex_set[object].entity_type;
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const auto& h = hypotheses[i];
    if (config.apply_type_constraints) {
      const auto& rel = registry.at(h.relation_index);
      const bool ok = h.direction == Direction::Forward
                          ? check_type_constraint(rel, subject_type, object_type)
                          : check_type_constraint(rel, object_type, subject_type);
      if (!ok) continue;
    }
    // Strict comparison keeps the earliest (lower index, forward) on ties.
    if (!best || scores[i]->fused > scores[*best]->fused) best = i;
  }
  if (!best) {
    result.status = AlignStatus::NoCandidate;
    return result;
  }

  const auto& winner = hypotheses[*best];
  result.best = winner;
  result.best_score = scores[*best]->fused;
  if (!(result.best_score > config.threshold)) {
    result.status = AlignStatus::BelowThreshold;
    return result;
  }
  const bool forward = winner.direction == Direction::Forward;
  result.status = AlignStatus::Aligned;
  result.triple = AlignedTriple{doc.title,        forward ? subject : object,
                                forward ? object : subject,
                                winner.relation_id, result.best_score,
                                Provenance::Nli,  premise,
                                winner.sentence};
  return result;
}

DocumentAlignment align_document(const std::vector<ProposalTriple>& proposals,
                                 const Document& doc, const Registry& registry,
                                 ScorerGateway& scorer, const AlignConfig& config) {
  DocumentAlignment out;
  std::map<std::tuple<int, int, std::size_t>, AlignedTriple> best;
  for (const auto& p : proposals) {
    if (p.doc_title != doc.title) {
      throw DataError("proposal for '" + p.doc_title + "' passed with document '" + doc.title + "'");
    }
    auto r = align(p, doc, registry, scorer, config);
    switch (r.status) {
      case AlignStatus::Direct:
        ++out.direct;
        break;
      case AlignStatus::Aligned:
        ++out.nli;
        break;
      case AlignStatus::BelowThreshold:
        ++out.below_threshold;
        break;
      case AlignStatus::NoCandidate:
        ++out.no_candidate;
        break;
      case AlignStatus::Unscored:
        out.unscored.push_back(p);
        break;
    }
    if (!r.triple) continue;
    auto& t = *r.triple;
    std::tuple key{t.h, t.t, *registry.index_of(t.r)};
    auto it = best.find(key);
    if (it == best.end()) {
      best.emplace(key, std::move(t));
    } else if (t.fused_score > it->second.fused_score) {
      it->second = std::move(t);
    }
  }
  for (auto& [key, triple] : best) {
    if (doc.has_label(triple.h, triple.t, triple.r)) {
      ++out.already_gold;
      continue;
    }
    out.triples.push_back(std::move(triple));
  }
  return out;
}

nlohmann::ordered_json candidate_to_json(const AlignedTriple& t) {
  nlohmann::ordered_json j;
  j["title"] = t.doc_title;
  j["h"] = t.h;
  j["t"] = t.t;
  j["r"] = t.r;
  j["score"] = t.fused_score;
  j["provenance"] = to_string(t.provenance);
  j["premise"] = t.premise;
  j["hypothesis"] = t.chosen_hypothesis;
  return j;
}

AlignedTriple candidate_from_json(const nlohmann::json& j) {
  AlignedTriple t;
  try {
    t.doc_title = j.at("title").get<std::string>();
    t.h = j.at("h").get<int>();
    t.t = j.at("t").get<int>();
    t.r = j.at("r").get<std::string>();
    t.fused_score = j.value("score", 1.0);
    const std::string prov = j.value("provenance", "nli");
    if (prov == "direct") {
      t.provenance = Provenance::Direct;
    } else if (prov == "nli") {
      t.provenance = Provenance::Nli;
    } else {
      throw DataError("unknown provenance '" + prov + "'");
    }
    t.premise = j.value("premise", "");
    t.chosen_hypothesis = j.value("hypothesis", "");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed candidate record: ") + e.what());
  }
  return t;
}

std::string dump_candidates(const std::vector<AlignedTriple>& triples) {
  std::string out;
  for (const auto& t : triples) {
    out += candidate_to_json(t).dump();
    out += '\n';
  }
  return out;
}

void save_candidates(const std::filesystem::path& path, const std::vector<AlignedTriple>& triples) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << dump_candidates(triples);
}

std::vector<AlignedTriple> load_candidates(const std::filesystem::path& path) {
  std::vector<AlignedTriple> out;
  for (const auto& j : read_json_lines(path)) out.push_back(candidate_from_json(j));
  return out;
}

std::vector<nlohmann::json> read_json_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<nlohmann::json> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (trim(line).empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace relforge
