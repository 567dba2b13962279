#pragma once

#include <chrono>
#include <string>
#include <utility>
#include <vector>

#include "relforge/llm_client.hpp"

namespace relforge::detail {

struct HttpResponse {
  int status = 0;
  std::string body;
};

using HeaderList = std::vector<std::pair<std::string, std::string>>;

// POSTs a JSON body. Throws BackendError when no response arrives.
HttpResponse post_json(const HttpEndpoint& endpoint, const std::string& body,
                       const HeaderList& headers, std::chrono::milliseconds timeout);

}  // namespace relforge::detail
