#pragma once

#include <chrono>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "relforge/corpus.hpp"
#include "relforge/llm_client.hpp"
#include "relforge/proposal.hpp"

namespace relforge {

inline constexpr std::string_view kContinuationInstruction =
    "Please keep generating 20 more triples using only the given entities from the entity list.";

enum class Role { User, Assistant };

struct Turn {
  Role role = Role::User;
  std::string text;
};

struct PromptBundle {
  std::optional<std::string> system_text;
  std::vector<Turn> turns;

  // First turn is a user turn and roles alternate.
  bool well_formed() const;
  std::vector<ChatMessage> to_messages() const;
};

struct LlmConfig {
  std::string endpoint;
  std::string model = "gpt-3.5-turbo";
  double temperature = 0.0;
  int rounds = 0;  // continuation prompts after the initial one
  std::chrono::milliseconds timeout{60000};
  int retries = 3;  // extra attempts after the first
  std::chrono::milliseconds backoff{500};
  std::string api_key_env = "OPENAI_API_KEY";
  std::string demonstration;
  std::size_t max_document_tokens = 0;  // 0 = no truncation
  int max_in_flight = 4;

  // Throws UsageError on invalid settings (negative rounds, empty
  // demonstration, ...).
  void validate() const;
};

// Initial user turn: demonstration, document text, entity list (canonical
// names, one per line), then the "at least 20 triples" instruction. Documents
// longer than `max_document_tokens` are truncated (token count), with a
// warning appended to `warnings` when given.
PromptBundle build_initial_prompt(const Document& doc, std::string_view demonstration,
                                  std::size_t max_document_tokens = 0,
                                  std::vector<std::string>* warnings = nullptr);

// Appends the previous assistant answer and the continuation instruction.
PromptBundle build_continuation_prompt(const PromptBundle& previous,
                                       std::string_view previous_answer);

struct SkippedLine {
  int round = 0;
  int line_index = 0;
  std::string text;
};

struct ParsedResponse {
  std::vector<ProposalTriple> triples;
  std::vector<SkippedLine> skipped;
};

// Lenient line parser. Accepts "(s, r, o)", "<s, r, o>" and either form with
// an "N." or "N)" list prefix. Commas nested in brackets or quotes do not
// split. Blank lines are ignored; other unparseable lines are reported as
// skipped.
ParsedResponse parse_triples(std::string_view response_text, std::string_view doc_title = {},
                             int round = 0);

enum class DropReason { SubjectNotInList, ObjectNotInList, SelfRelation, Duplicate };

std::string_view to_string(DropReason reason);

struct DroppedProposal {
  ProposalTriple proposal;
  DropReason reason;
};

struct FilterResult {
  std::vector<ProposalTriple> kept;
  std::vector<DroppedProposal> dropped;
};

// Links surfaces to entity indices and drops proposals that do not resolve,
// self-relations and duplicates by (subject, normalized phrase, object).
FilterResult link_and_filter(const std::vector<ProposalTriple>& proposals, const Document& doc);

struct ProposeOutcome {
  std::vector<ProposalTriple> proposals;
  std::vector<SkippedLine> skipped_lines;  // across all rounds
  std::vector<DroppedProposal> dropped;
  Transcript transcript;
  std::size_t parsed = 0;
  int llm_calls = 0;
  bool failed = false;
  std::string error;
};

// Runs the initial round plus config.rounds continuations. Each call is
// retried with exponential backoff; a document whose retries are exhausted is
// marked failed and yields no proposals.
ProposeOutcome propose(const Document& doc, const LlmConfig& config, LlmClient& client);

// Line-delimited proposal records.
nlohmann::ordered_json proposal_to_json(const ProposalTriple& proposal);
ProposalTriple proposal_from_json(const nlohmann::json& j);

}  // namespace relforge
