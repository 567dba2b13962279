#include "relforge/llm_proposer.hpp"

#include <cctype>
#include <set>
#include <thread>
#include <tuple>

#include <spdlog/spdlog.h>

#include "relforge/errors.hpp"
#include "relforge/text.hpp"

namespace relforge {

namespace {

constexpr std::string_view kInitialInstruction =
    "Generate at least 20 relation triples expressed in the document above. Use only the given "
    "entities from the entity list as subjects and objects, and write one triple per line in the "
    "form (subject, relation, object).";

// Removes "12." / "12)" / "-" / "*" list markers.
std::string_view strip_list_prefix(std::string_view line) {
  std::size_t i = 0;
  while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
  if (i > 0 && i < line.size() && (line[i] == '.' || line[i] == ')')) {
    line.remove_prefix(i + 1);
  } else if (!line.empty() && (line[0] == '-' || line[0] == '*')) {
    line.remove_prefix(1);
  }
  while (!line.empty() && std::isspace(static_cast<unsigned char>(line.front()))) line.remove_prefix(1);
  return line;
}

std::string strip_matching_quotes(std::string s) {
  while (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') ||
                           (s.front() == '\'' && s.back() == '\''))) {
    s = trim(std::string_view(s).substr(1, s.size() - 2));
  }
  return s;
}

// Splits on commas outside (), [], {} and double quotes. Returns nothing if
// the brackets are unbalanced.
std::optional<std::vector<std::string>> split_top_level(std::string_view inner) {
  std::vector<std::string> parts;
  int depth = 0;
  bool quoted = false;
  std::size_t start = 0;
  for (std::size_t i = 0; i < inner.size(); ++i) {
    char c = inner[i];
    if (c == '"') {
      quoted = !quoted;
    } else if (quoted) {
      continue;
    } else if (c == '(' || c == '[' || c == '{') {
      ++depth;
    } else if (c == ')' || c == ']' || c == '}') {
      if (--depth < 0) return std::nullopt;
    } else if (c == ',' && depth == 0) {
      parts.push_back(trim(inner.substr(start, i - start)));
      start = i + 1;
    }
  }
  if (depth != 0 || quoted) return std::nullopt;
  parts.push_back(trim(inner.substr(start)));
  return parts;
}

std::optional<std::array<std::string, 3>> parse_line(std::string_view raw, bool& empty_relation) {
  empty_relation = false;
  std::string line = trim(raw);
  std::string_view s = strip_list_prefix(line);
  while (!s.empty() && (s.back() == '.' || s.back() == ',' || s.back() == ';')) s.remove_suffix(1);
  if (s.size() < 2) return std::nullopt;
  const char open = s.front();
  const char close = s.back();
  if (!((open == '(' && close == ')') || (open == '<' && close == '>'))) return std::nullopt;
  auto parts = split_top_level(s.substr(1, s.size() - 2));
  if (!parts || parts->size() != 3) return std::nullopt;
  std::array<std::string, 3> out;
  for (std::size_t i = 0; i < 3; ++i) out[i] = strip_matching_quotes((*parts)[i]);
  if (out[0].empty() || out[2].empty()) return std::nullopt;
  if (out[1].empty()) {
    empty_relation = true;
    return std::nullopt;
  }
  return out;
}

std::optional<std::string> complete_with_retry(LlmClient& client, const ChatRequest& request,
                                               const LlmConfig& config, int& calls,
                                               std::string& last_error) {
  const int attempts = 1 + std::max(0, config.retries);
  for (int attempt = 0; attempt < attempts; ++attempt) {
    if (attempt > 0 && config.backoff.count() > 0) {
      std::this_thread::sleep_for(config.backoff * (1LL << (attempt - 1)));
    }
    ++calls;
    try {
      std::string response = client.complete(request);
      if (!trim(response).empty()) return response;
      last_error = "empty response";
    } catch (const BackendError& e) {
      last_error = e.what();
    }
    spdlog::warn("LLM call for '{}' round {} failed (attempt {}/{}): {}", request.doc_title,
                 request.round, attempt + 1, attempts, last_error);
  }
  return std::nullopt;
}

}  // namespace

bool PromptBundle::well_formed() const {
  if (turns.empty() || turns.front().role != Role::User) return false;
  for (std::size_t i = 1; i < turns.size(); ++i) {
    if (turns[i].role == turns[i - 1].role) return false;
  }
  return true;
}

std::vector<ChatMessage> PromptBundle::to_messages() const {
  std::vector<ChatMessage> out;
  if (system_text) out.push_back({"system", *system_text});
  for (const auto& turn : turns) {
    out.push_back({turn.role == Role::User ? "user" : "assistant", turn.text});
  }
  return out;
}

void LlmConfig::validate() const {
  if (temperature < 0.0) throw UsageError("llm.temperature must be >= 0");
  if (rounds < 0) throw UsageError("llm.rounds must be >= 0");
  if (retries < 0) throw UsageError("llm.retries must be >= 0");
  if (max_in_flight < 1) throw UsageError("llm.max_in_flight must be >= 1");
  if (trim(demonstration).empty()) throw UsageError("demonstration text is empty");
}

PromptBundle build_initial_prompt(const Document& doc, std::string_view demonstration,
                                  std::size_t max_document_tokens,
                                  std::vector<std::string>* warnings) {
  if (trim(demonstration).empty()) throw UsageError("demonstration text is empty");

  std::string text;
  std::size_t tokens = 0;
  bool truncated = false;
  for (const auto& sent : doc.sents) {
    for (const auto& tok : sent) {
      if (max_document_tokens > 0 && tokens == max_document_tokens) {
        truncated = true;
        break;
      }
      if (!text.empty()) text += ' ';
      text += tok;
      ++tokens;
    }
    if (truncated) break;
  }
  if (truncated) {
    std::string msg = "document '" + doc.title + "' truncated to " +
                      std::to_string(max_document_tokens) + " tokens";
    spdlog::warn("{}", msg);
    if (warnings) warnings->push_back(std::move(msg));
  }

  std::string prompt = trim(demonstration);
  prompt += "\n\nDocument:\n";
  prompt += text;
  prompt += "\n\nEntity list:\n";
  for (const auto& entity : doc.vertex_set) {
    prompt += entity.canonical_name;
    prompt += '\n';
  }
  prompt += '\n';
  prompt += kInitialInstruction;

  PromptBundle bundle;
  bundle.turns.push_back({Role::User, std::move(prompt)});
  return bundle;
}

PromptBundle build_continuation_prompt(const PromptBundle& previous,
                                       std::string_view previous_answer) {
  if (trim(previous_answer).empty()) throw UsageError("previous answer is empty");
  PromptBundle next = previous;
  next.turns.push_back({Role::Assistant, std::string(previous_answer)});
  next.turns.push_back({Role::User, std::string(kContinuationInstruction)});
  return next;
}

ParsedResponse parse_triples(std::string_view response_text, std::string_view doc_title,
                             int round) {
  ParsedResponse out;
  const auto lines = split_lines(response_text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    bool empty_relation = false;
    auto parts = parse_line(lines[i], empty_relation);
    if (!parts) {
      if (!empty_relation) out.skipped.push_back({round, static_cast<int>(i), lines[i]});
      continue;
    }
    ProposalTriple p;
    p.subject_surface = std::move((*parts)[0]);
    p.relation_phrase = std::move((*parts)[1]);
    p.object_surface = std::move((*parts)[2]);
    p.doc_title = std::string(doc_title);
    p.round = round;
    p.line_index = static_cast<int>(i);
    out.triples.push_back(std::move(p));
  }
  return out;
}

std::string_view to_string(DropReason reason) {
  switch (reason) {
    case DropReason::SubjectNotInList:
      return "subject_not_in_entity_list";
    case DropReason::ObjectNotInList:
      return "object_not_in_entity_list";
    case DropReason::SelfRelation:
      return "self_relation";
    case DropReason::Duplicate:
      return "duplicate";
  }
  return "unknown";
}

FilterResult link_and_filter(const std::vector<ProposalTriple>& proposals, const Document& doc) {
  const auto index = entity_surface_index(doc);
  FilterResult result;
  std::set<std::tuple<int, std::string, int>> seen;
  for (const auto& p : proposals) {
    if (trim(p.relation_phrase).empty()) continue;
    auto s = index.find(normalize_surface(p.subject_surface));
    auto o = index.find(normalize_surface(p.object_surface));
    if (s == index.end()) {
      result.dropped.push_back({p, DropReason::SubjectNotInList});
      continue;
    }
    if (o == index.end()) {
      result.dropped.push_back({p, DropReason::ObjectNotInList});
      continue;
    }
    if (s->second == o->second) {
      result.dropped.push_back({p, DropReason::SelfRelation});
      continue;
    }
    if (!seen.emplace(s->second, normalize_phrase(p.relation_phrase), o->second).second) {
      result.dropped.push_back({p, DropReason::Duplicate});
      continue;
    }
    ProposalTriple linked = p;
    linked.subject_idx = s->second;
    linked.object_idx = o->second;
    result.kept.push_back(std::move(linked));
  }
  return result;
}

ProposeOutcome propose(const Document& doc, const LlmConfig& config, LlmClient& client) {
  ProposeOutcome outcome;
  outcome.transcript.title = doc.title;
  outcome.transcript.model = config.model;
  outcome.transcript.temperature = config.temperature;

  PromptBundle bundle = build_initial_prompt(doc, config.demonstration, config.max_document_tokens);
  std::vector<ProposalTriple> raw;
  for (int round = 0; round <= config.rounds; ++round) {
    ChatRequest request{config.model, config.temperature, bundle.to_messages(), doc.title, round};
    std::string error;
    auto response = complete_with_retry(client, request, config, outcome.llm_calls, error);
    if (!response) {
      outcome.failed = true;
      outcome.error = "round " + std::to_string(round) + ": " + error;
      outcome.transcript.failed = true;
      outcome.transcript.error = outcome.error;
      outcome.skipped_lines.clear();
      spdlog::error("document '{}' failed: {}", doc.title, outcome.error);
      return outcome;
    }
    outcome.transcript.rounds.push_back({round, request.messages, *response});
    auto parsed = parse_triples(*response, doc.title, round);
    outcome.parsed += parsed.triples.size();
    for (auto& s : parsed.skipped) outcome.skipped_lines.push_back(std::move(s));
    for (auto& t : parsed.triples) raw.push_back(std::move(t));
    if (round < config.rounds) bundle = build_continuation_prompt(bundle, *response);
  }
  auto filtered = link_and_filter(raw, doc);
  outcome.proposals = std::move(filtered.kept);
  outcome.dropped = std::move(filtered.dropped);
  return outcome;
}

nlohmann::ordered_json proposal_to_json(const ProposalTriple& p) {
  nlohmann::ordered_json j;
  j["title"] = p.doc_title;
  j["round"] = p.round;
  j["line"] = p.line_index;
  j["subject"] = p.subject_surface;
  j["relation"] = p.relation_phrase;
  j["object"] = p.object_surface;
  if (p.subject_idx) j["subject_idx"] = *p.subject_idx;
  if (p.object_idx) j["object_idx"] = *p.object_idx;
  return j;
}

ProposalTriple proposal_from_json(const nlohmann::json& j) {
  ProposalTriple p;
  try {
    p.doc_title = j.at("title").get<std::string>();
    p.round = j.value("round", 0);
    p.line_index = j.value("line", 0);
    p.subject_surface = j.at("subject").get<std::string>();
    p.relation_phrase = j.at("relation").get<std::string>();
    p.object_surface = j.at("object").get<std::string>();
    if (j.contains("subject_idx")) p.subject_idx = j["subject_idx"].get<int>();
    if (j.contains("object_idx")) p.object_idx = j["object_idx"].get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed proposal record: ") + e.what());
  }
  return p;
}

}  // namespace relforge
