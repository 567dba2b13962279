#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <semaphore>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace relforge {

struct ChatMessage {
  std::string role;  // "system", "user" or "assistant"
  std::string content;

  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

struct ChatRequest {
  std::string model;
  double temperature = 0.0;
  std::vector<ChatMessage> messages;
  // Routing metadata for replay/scripted clients; never sent on the wire.
  std::string doc_title;
  int round = 0;
};

// Wire body for a chat-completions endpoint.
nlohmann::json chat_request_body(const ChatRequest& request);
// Extracts choices[0].message.content. Throws BackendError if absent.
std::string parse_chat_response(const nlohmann::json& body);

// Chat-completion backend. complete() throws BackendError on transport or
// protocol failure; retry policy lives in the caller.
class LlmClient {
 public:
  virtual ~LlmClient() = default;
  virtual std::string complete(const ChatRequest& request) = 0;
};

struct HttpEndpoint {
  std::string scheme_host_port;  // e.g. "https://api.openai.com"
  std::string path;              // e.g. "/v1/chat/completions"
};

// Splits "http(s)://host[:port]/path". Throws UsageError if malformed.
HttpEndpoint parse_endpoint(const std::string& url);

// OpenAI-compatible POST client. The API key (if any) is read from the named
// environment variable at construction.
class HttpChatClient : public LlmClient {
 public:
  HttpChatClient(std::string endpoint, std::string api_key_env,
                 std::chrono::milliseconds timeout);
  std::string complete(const ChatRequest& request) override;

 private:
  HttpEndpoint endpoint_;
  std::string api_key_;
  std::chrono::milliseconds timeout_;
};

struct TranscriptRound {
  int round = 0;
  std::vector<ChatMessage> messages;
  std::string response;
};

// Verbatim record of one document's conversation with the LLM.
struct Transcript {
  std::string title;
  std::string model;
  double temperature = 0.0;
  std::vector<TranscriptRound> rounds;
  bool failed = false;
  std::string error;
};

nlohmann::ordered_json transcript_to_json(const Transcript& transcript);
Transcript transcript_from_json(const nlohmann::json& j);

// Serves responses from transcripts persisted by a previous run, matched by
// (title, round).
class ReplayChatClient : public LlmClient {
 public:
  explicit ReplayChatClient(const std::filesystem::path& transcripts_dir);
  std::string complete(const ChatRequest& request) override;
  std::size_t transcript_count() const { return responses_.size(); }

 private:
  std::map<std::string, std::vector<std::string>> responses_;
};

// Canned responses keyed by document title: {"title": ["round 0", ...]}.
class ScriptedChatClient : public LlmClient {
 public:
  explicit ScriptedChatClient(std::map<std::string, std::vector<std::string>> script);
  static ScriptedChatClient from_file(const std::filesystem::path& path);
  std::string complete(const ChatRequest& request) override;

 private:
  std::map<std::string, std::vector<std::string>> script_;
};

// Caps the number of concurrent complete() calls on the wrapped client.
class BoundedChatClient : public LlmClient {
 public:
  BoundedChatClient(LlmClient& inner, std::ptrdiff_t max_in_flight);
  std::string complete(const ChatRequest& request) override;

 private:
  LlmClient& inner_;
  std::counting_semaphore<> slots_;
};

}  // namespace relforge
