#include "relforge/scorer_gateway.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <thread>

#include <spdlog/spdlog.h>

#include "http_util.hpp"
#include "relforge/errors.hpp"
#include "relforge/llm_client.hpp"

namespace relforge {

namespace {

std::set<std::string> tokenize(std::string_view text) {
  std::set<std::string> tokens;
  std::string current;
  for (char ch : text) {
    auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c >= 0x80) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      tokens.insert(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.insert(std::move(current));
  return tokens;
}

std::optional<EntailmentScore> to_score(const NliResult& result) {
  try {
    if (const auto* logits = std::get_if<RawNliLogits>(&result)) return fuse_scores(*logits);
    if (const auto* probs = std::get_if<ProbabilityPair>(&result)) {
      return fuse_probabilities(probs->p_entail, probs->p_no_entail);
    }
  } catch (const DataError& e) {
    spdlog::warn("discarding NLI result: {}", e.what());
  }
  return std::nullopt;
}

}  // namespace

EntailmentScore fuse_scores(const RawNliLogits& logits) {
  for (double v : logits.values) {
    if (!std::isfinite(v)) throw DataError("non-finite NLI logit");
  }
  const double max = *std::max_element(logits.values.begin(), logits.values.end());
  std::array<double, 4> e{};
  double sum = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    e[i] = std::exp(logits.values[i] - max);
    sum += e[i];
  }
  EntailmentScore s;
  s.p_entail = e[RawNliLogits::kEntail] / sum;
  s.p_no_entail = e[RawNliLogits::kNoEntail] / sum;
  // e^a - e^b as -e^hi * expm1(lo - hi) keeps full relative precision when
  // the two logits are close and the plain difference would cancel.
  const double a = logits.values[RawNliLogits::kEntail];
  const double b = logits.values[RawNliLogits::kNoEntail];
  const double hi = std::max(a, b);
  const double lo = std::min(a, b);
  const double diff = -std::exp(hi - max) * std::expm1(lo - hi) / sum;
  s.fused = a >= b ? diff : -diff;
  return s;
}

EntailmentScore fuse_probabilities(double p_entail, double p_no_entail) {
  if (!std::isfinite(p_entail) || !std::isfinite(p_no_entail) || p_entail < 0.0 ||
      p_entail > 1.0 || p_no_entail < 0.0 || p_no_entail > 1.0 ||
      p_entail + p_no_entail > 1.0 + 1e-9) {
    throw DataError("NLI probabilities out of range");
  }
  return {p_entail, p_no_entail, p_entail - p_no_entail};
}

nlohmann::json nli_request_body(std::span<const NliPair> pairs) {
  auto items = nlohmann::json::array();
  for (const auto& p : pairs) items.push_back({{"premise", p.premise}, {"hypothesis", p.hypothesis}});
  return {{"pairs", std::move(items)}};
}

std::vector<NliResult> parse_nli_response(const nlohmann::json& body, std::size_t expected) {
  if (!body.is_object() || !body.contains("results") || !body["results"].is_array()) {
    throw BackendError("NLI response lacks a results array");
  }
  const auto& results = body["results"];
  if (results.size() != expected) {
    throw BackendError("NLI response has " + std::to_string(results.size()) + " results, expected " +
                       std::to_string(expected));
  }
  std::vector<NliResult> out;
  out.reserve(expected);
  for (const auto& r : results) {
    if (r.contains("logits") && r["logits"].is_array() && r["logits"].size() == 4 &&
        std::all_of(r["logits"].begin(), r["logits"].end(),
                    [](const auto& v) { return v.is_number(); })) {
      RawNliLogits logits;
      for (std::size_t i = 0; i < 4; ++i) logits.values[i] = r["logits"][i].get<double>();
      out.emplace_back(logits);
    } else if (r.contains("p_entail") && r.contains("p_no_entail") && r["p_entail"].is_number() &&
               r["p_no_entail"].is_number()) {
      out.emplace_back(ProbabilityPair{r["p_entail"].get<double>(), r["p_no_entail"].get<double>()});
    } else {
      out.emplace_back(std::monostate{});
    }
  }
  return out;
}

HttpNliBackend::HttpNliBackend(std::string endpoint, std::chrono::milliseconds timeout)
    : timeout_(timeout) {
  auto ep = parse_endpoint(endpoint);
  base_ = ep.scheme_host_port;
  path_ = ep.path;
}

std::vector<NliResult> HttpNliBackend::score(std::span<const NliPair> pairs) {
  auto response = detail::post_json({base_, path_}, nli_request_body(pairs).dump(), {}, timeout_);
  if (response.status != 200) {
    throw BackendError("NLI endpoint returned HTTP " + std::to_string(response.status));
  }
  nlohmann::json body;
  try {
    body = nlohmann::json::parse(response.body);
  } catch (const nlohmann::json::parse_error& e) {
    throw BackendError(std::string("NLI endpoint returned invalid JSON: ") + e.what());
  }
  return parse_nli_response(body, pairs.size());
}

double MockNliBackend::jaccard(const NliPair& pair) {
  auto premise = tokenize(pair.premise);
  auto hypothesis = tokenize(pair.hypothesis);
  for (const auto& name : pair.entity_names) {
    for (const auto& tok : tokenize(name)) {
      premise.erase(tok);
      hypothesis.erase(tok);
    }
  }
  std::size_t inter = 0;
  for (const auto& tok : premise) inter += hypothesis.count(tok);
  const std::size_t uni = premise.size() + hypothesis.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<NliResult> MockNliBackend::score(std::span<const NliPair> pairs) {
  std::vector<NliResult> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    const double j = jaccard(p);
    out.emplace_back(ProbabilityPair{j, 1.0 - j});
  }
  return out;
}

ScorerGateway::ScorerGateway(NliBackend& backend, ScorerConfig config)
    : backend_(backend),
      config_(config),
      slots_(std::max(1, config.max_in_flight)) {
  if (config_.batch_size == 0) throw UsageError("nli.batch_size must be positive");
}

std::size_t ScorerGateway::backend_calls() const { return calls_.load(); }

std::optional<std::vector<NliResult>> ScorerGateway::call_with_retry(
    std::span<const NliPair> pairs) {
  const int attempts = 1 + std::max(0, config_.retries);
  for (int attempt = 0; attempt < attempts; ++attempt) {
    if (attempt > 0 && config_.backoff.count() > 0) {
      std::this_thread::sleep_for(config_.backoff * (1LL << (attempt - 1)));
    }
    try {
      slots_.acquire();
      struct Release {
        std::counting_semaphore<>& s;
        ~Release() { s.release(); }
      } release{slots_};
      ++calls_;
      auto results = backend_.score(pairs);
      if (results.size() == pairs.size()) return results;
      spdlog::warn("NLI backend returned {} results for {} pairs", results.size(), pairs.size());
    } catch (const BackendError& e) {
      spdlog::warn("NLI call failed (attempt {}/{}): {}", attempt + 1, attempts, e.what());
    }
  }
  return std::nullopt;
}

std::vector<std::optional<EntailmentScore>> ScorerGateway::score_batch(
    std::span<const NliPair> pairs) {
  std::vector<std::optional<EntailmentScore>> out(pairs.size());
  for (std::size_t begin = 0; begin < pairs.size(); begin += config_.batch_size) {
    const std::size_t n = std::min(config_.batch_size, pairs.size() - begin);
    auto chunk = pairs.subspan(begin, n);
    if (auto results = call_with_retry(chunk)) {
      for (std::size_t i = 0; i < n; ++i) out[begin + i] = to_score((*results)[i]);
      continue;
    }
    if (n == 1) continue;
    // Isolate the failing pairs.
    for (std::size_t i = 0; i < n; ++i) {
      if (auto single = call_with_retry(chunk.subspan(i, 1))) out[begin + i] = to_score(single->front());
    }
  }
  return out;
}

std::vector<std::optional<EntailmentScore>> score_batch(std::span<const NliPair> pairs,
                                                        NliBackend& backend,
                                                        const ScorerConfig& config) {
  ScorerGateway gateway(backend, config);
  return gateway.score_batch(pairs);
}

}  // namespace relforge
