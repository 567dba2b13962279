#include "relforge/llm_client.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <regex>

#include "http_util.hpp"
#include "relforge/errors.hpp"

namespace relforge {

nlohmann::json chat_request_body(const ChatRequest& request) {
  nlohmann::json body;
  body["model"] = request.model;
  body["temperature"] = request.temperature;
  auto messages = nlohmann::json::array();
  for (const auto& m : request.messages) {
    messages.push_back({{"role", m.role}, {"content", m.content}});
  }
  body["messages"] = std::move(messages);
  return body;
}

std::string parse_chat_response(const nlohmann::json& body) {
  const auto* choices = body.contains("choices") ? &body["choices"] : nullptr;
  if (!choices || !choices->is_array() || choices->empty()) {
    throw BackendError("chat response has no choices");
  }
  const auto& first = (*choices)[0];
  if (!first.contains("message") || !first["message"].contains("content") ||
      !first["message"]["content"].is_string()) {
    throw BackendError("chat response has no message content");
  }
  return first["message"]["content"].get<std::string>();
}

HttpEndpoint parse_endpoint(const std::string& url) {
  static const std::regex pattern(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, pattern)) throw UsageError("malformed endpoint URL '" + url + "'");
  HttpEndpoint ep;
  ep.scheme_host_port = m[1].str();
  ep.path = m[2].matched ? m[2].str() : "/";
  return ep;
}

HttpChatClient::HttpChatClient(std::string endpoint, std::string api_key_env,
                               std::chrono::milliseconds timeout)
    : endpoint_(parse_endpoint(endpoint)), timeout_(timeout) {
  if (endpoint_.path == "/") endpoint_.path = "/v1/chat/completions";
  if (!api_key_env.empty()) {
    if (const char* key = std::getenv(api_key_env.c_str())) api_key_ = key;
  }
}

std::string HttpChatClient::complete(const ChatRequest& request) {
  detail::HeaderList headers;
  if (!api_key_.empty()) headers.emplace_back("Authorization", "Bearer " + api_key_);
  auto response = detail::post_json(endpoint_, chat_request_body(request).dump(), headers, timeout_);
  if (response.status != 200) {
    throw BackendError("chat endpoint returned HTTP " + std::to_string(response.status));
  }
  nlohmann::json body;
  try {
    body = nlohmann::json::parse(response.body);
  } catch (const nlohmann::json::parse_error& e) {
    throw BackendError(std::string("chat endpoint returned invalid JSON: ") + e.what());
  }
  return parse_chat_response(body);
}

nlohmann::ordered_json transcript_to_json(const Transcript& transcript) {
  nlohmann::ordered_json j;
  j["title"] = transcript.title;
  j["model"] = transcript.model;
  j["temperature"] = transcript.temperature;
  auto rounds = nlohmann::ordered_json::array();
  for (const auto& r : transcript.rounds) {
    nlohmann::ordered_json rj;
    rj["round"] = r.round;
    auto messages = nlohmann::ordered_json::array();
    for (const auto& m : r.messages) {
      nlohmann::ordered_json mj;
      mj["role"] = m.role;
      mj["content"] = m.content;
      messages.push_back(std::move(mj));
    }
    rj["messages"] = std::move(messages);
    rj["response"] = r.response;
    rounds.push_back(std::move(rj));
  }
  j["rounds"] = std::move(rounds);
  j["status"] = transcript.failed ? "failed" : "ok";
  if (transcript.failed) j["error"] = transcript.error;
  return j;
}

Transcript transcript_from_json(const nlohmann::json& j) {
  Transcript t;
  try {
    t.title = j.at("title").get<std::string>();
    t.model = j.value("model", "");
    t.temperature = j.value("temperature", 0.0);
    for (const auto& rj : j.at("rounds")) {
      TranscriptRound r;
      r.round = rj.at("round").get<int>();
      for (const auto& mj : rj.at("messages")) {
        r.messages.push_back({mj.at("role").get<std::string>(), mj.at("content").get<std::string>()});
      }
      r.response = rj.at("response").get<std::string>();
      t.rounds.push_back(std::move(r));
    }
    t.failed = j.value("status", "ok") == "failed";
    t.error = j.value("error", "");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed transcript: ") + e.what());
  }
  return t;
}

ReplayChatClient::ReplayChatClient(const std::filesystem::path& transcripts_dir) {
  if (!std::filesystem::is_directory(transcripts_dir)) {
    throw UsageError("transcript directory " + transcripts_dir.string() + " does not exist");
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(transcripts_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& file : files) {
    std::ifstream in(file, std::ios::binary);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(file.string() + ": " + e.what());
    }
    Transcript t = transcript_from_json(j);
    auto& responses = responses_[t.title];
    responses.clear();
    std::sort(t.rounds.begin(), t.rounds.end(),
              [](const auto& a, const auto& b) { return a.round < b.round; });
    for (auto& r : t.rounds) responses.push_back(std::move(r.response));
  }
}

std::string ReplayChatClient::complete(const ChatRequest& request) {
  auto it = responses_.find(request.doc_title);
  if (it == responses_.end() || request.round < 0 ||
      static_cast<std::size_t>(request.round) >= it->second.size()) {
    throw BackendError("no recorded response for '" + request.doc_title + "' round " +
                       std::to_string(request.round));
  }
  return it->second[static_cast<std::size_t>(request.round)];
}

ScriptedChatClient::ScriptedChatClient(std::map<std::string, std::vector<std::string>> script)
    : script_(std::move(script)) {}

ScriptedChatClient ScriptedChatClient::from_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read LLM script " + path.string());
  std::map<std::string, std::vector<std::string>> script;
  try {
    auto j = nlohmann::json::parse(in);
    for (const auto& [title, responses] : j.items()) {
      script[title] = responses.get<std::vector<std::string>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return ScriptedChatClient(std::move(script));
}

std::string ScriptedChatClient::complete(const ChatRequest& request) {
  auto it = script_.find(request.doc_title);
  if (it == script_.end() || request.round < 0 ||
      static_cast<std::size_t>(request.round) >= it->second.size()) {
    throw BackendError("script has no response for '" + request.doc_title + "' round " +
                       std::to_string(request.round));
  }
  return it->second[static_cast<std::size_t>(request.round)];
}

BoundedChatClient::BoundedChatClient(LlmClient& inner, std::ptrdiff_t max_in_flight)
    : inner_(inner), slots_(std::max<std::ptrdiff_t>(1, max_in_flight)) {}

std::string BoundedChatClient::complete(const ChatRequest& request) {
  slots_.acquire();
  struct Release {
    std::counting_semaphore<>& s;
    ~Release() { s.release(); }
  } release{slots_};
  return inner_.complete(request);
}

}  // namespace relforge
