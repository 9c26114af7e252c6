#include <cstdlib>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "expert/errors.hpp"
#include "expert/llm_gateway.hpp"

namespace expert {

std::vector<std::string> HttpBackend::send(const WireRequest& request) {
  httplib::Client client(scheme_host_port_);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());

  httplib::Headers headers;
  if (const char* key = std::getenv("EXPERT_API_KEY"); key && *key) {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  WireRequest wire = request;
  if (wire.model.empty()) wire.model = config_.model;
  const auto body = build_body(wire).dump();

  auto result = client.Post(path_, headers, body, "application/json");
  if (!result) {
    throw TransportError("request to " + scheme_host_port_ + path_ + " failed: " +
                         httplib::to_string(result.error()));
  }
  const int status = result->status;
  if (status < 200 || status >= 300) {
    const bool retryable = status == 429 || status >= 500;
    throw BackendRefused("backend returned HTTP " + std::to_string(status) + ": " + result->body.substr(0, 200),
                         status, retryable);
  }
  auto parsed = nlohmann::json::parse(result->body, nullptr, false);
  if (parsed.is_discarded()) throw BackendRefused("backend returned a non-JSON body", status, false);
  return parse_body(parsed, request.n);
}

}  // namespace expert
