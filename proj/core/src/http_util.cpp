#include "http_util.hpp"

#include <httplib.h>

#include "relforge/errors.hpp"

namespace relforge::detail {

HttpResponse post_json(const HttpEndpoint& endpoint, const std::string& body,
                       const HeaderList& headers, std::chrono::milliseconds timeout) {
  httplib::Client client(endpoint.scheme_host_port);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  httplib::Headers h;
  for (const auto& [k, v] : headers) h.emplace(k, v);
  auto result = client.Post(endpoint.path, h, body, "application/json");
  if (!result) {
    throw BackendError("POST " + endpoint.scheme_host_port + endpoint.path + " failed: " +
                       httplib::to_string(result.error()));
  }
  return {result->status, result->body};
}

}  // namespace relforge::detail
