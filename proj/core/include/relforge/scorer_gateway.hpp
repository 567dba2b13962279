#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <cstddef>
#include <optional>
#include <semaphore>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace relforge {

// Logits of the four decoder subsequences, in this order:
// "_0" (no entailment), "_</s>", "10", "1</s>" (entailment).
struct RawNliLogits {
  std::array<double, 4> values{};

  static constexpr std::size_t kNoEntail = 0;
  static constexpr std::size_t kEntail = 3;
};

struct EntailmentScore {
  double p_entail = 0.0;
  double p_no_entail = 0.0;
  double fused = 0.0;  // p_entail - p_no_entail
};

// Softmax over the four logits; fused = P("1</s>") - P("_0").
// Throws DataError on non-finite input.
EntailmentScore fuse_scores(const RawNliLogits& logits);

// Precomputed probabilities, consumed as-is. Throws DataError if either is
// outside [0, 1] or their sum exceeds 1.
EntailmentScore fuse_probabilities(double p_entail, double p_no_entail);

struct ProbabilityPair {
  double p_entail = 0.0;
  double p_no_entail = 0.0;
};

// One backend result: raw logits, precomputed probabilities, or a per-item
// failure (monostate).
using NliResult = std::variant<std::monostate, RawNliLogits, ProbabilityPair>;

struct NliPair {
  std::string premise;
  std::string hypothesis;
  // Entity surfaces present in both sentences. Only the mock backend reads
  // them; they are not part of the wire request.
  std::vector<std::string> entity_names;
};

class NliBackend {
 public:
  virtual ~NliBackend() = default;
  // Returns one result per pair, in order. Throws BackendError when the
  // whole request fails.
  virtual std::vector<NliResult> score(std::span<const NliPair> pairs) = 0;
};

nlohmann::json nli_request_body(std::span<const NliPair> pairs);
// Parses {"results": [{"logits": [...]} | {"p_entail", "p_no_entail"}]}.
// Entries that match neither form become monostate. Throws BackendError on
// a malformed envelope or length mismatch.
std::vector<NliResult> parse_nli_response(const nlohmann::json& body, std::size_t expected);

class HttpNliBackend : public NliBackend {
 public:
  HttpNliBackend(std::string endpoint, std::chrono::milliseconds timeout);
  std::vector<NliResult> score(std::span<const NliPair> pairs) override;

 private:
  std::string base_;
  std::string path_;
  std::chrono::milliseconds timeout_;
};

// Deterministic lexical stand-in for a real NLI model: with J the Jaccard
// overlap of the premise and hypothesis token sets (entity-name tokens
// removed), returns p_entail = J and p_no_entail = 1 - J, so fused = 2J - 1.
class MockNliBackend : public NliBackend {
 public:
  std::vector<NliResult> score(std::span<const NliPair> pairs) override;
  static double jaccard(const NliPair& pair);
};

struct ScorerConfig {
  std::size_t batch_size = 32;
  int retries = 3;
  std::chrono::milliseconds backoff{200};
  int max_in_flight = 4;
};

// Batches pairs through a backend with retries. A batch that still fails is
// retried pair by pair so that one bad pair does not sink its neighbours.
// Safe to call from several threads; concurrent backend calls are capped at
// max_in_flight.
class ScorerGateway {
 public:
  ScorerGateway(NliBackend& backend, ScorerConfig config);

  // nullopt marks a pair whose score is unavailable.
  std::vector<std::optional<EntailmentScore>> score_batch(std::span<const NliPair> pairs);

  std::size_t backend_calls() const;

 private:
  std::optional<std::vector<NliResult>> call_with_retry(std::span<const NliPair> pairs);

  NliBackend& backend_;
  ScorerConfig config_;
  std::counting_semaphore<> slots_;
  std::atomic<std::size_t> calls_{0};
};

std::vector<std::optional<EntailmentScore>> score_batch(std::span<const NliPair> pairs,
                                                        NliBackend& backend,
                                                        const ScorerConfig& config = {});

}  // namespace relforge
