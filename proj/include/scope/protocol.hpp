#pragma once

// Wire protocol shared by every backend kind.
//
//   request:  POST /v1/{kind}  {"kind":..., "version":"1.0", "payload":{...}}
//   response: 200              {"kind":..., "version":"1.0", "payload":{...}}
//   error:    4xx/5xx          {"code":..., "message":..., "retryable":bool}
//
// Masks travel as {"w","h","runs"}; depth maps as base64 of row-major
// little-endian float32 values.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scope/backends.hpp"

namespace scope {

nlohmann::json make_envelope(BackendKind kind, nlohmann::json payload);
// Checks kind/version/payload keys; returns the kind. Throws ProtocolError.
BackendKind validate_envelope(const nlohmann::json& envelope);

// Schema checks per kind. Throw ProtocolError naming the offending field.
void validate_request(BackendKind kind, const nlohmann::json& payload);
void validate_response(BackendKind kind, const nlohmann::json& payload);
void validate_error_body(const nlohmann::json& body);

nlohmann::json error_body(const std::string& code, const std::string& message, bool retryable);

std::string base64_encode(std::span<const std::uint8_t> bytes);
// Throws ProtocolError on malformed input.
std::vector<std::uint8_t> base64_decode(const std::string& text);

nlohmann::json depth_to_json(const DepthMap& depth);
DepthMap depth_from_json(const nlohmann::json& j);

nlohmann::json candidate_to_json(const ScoredCandidate& c);
ScoredCandidate candidate_from_json(const nlohmann::json& j);

nlohmann::json llm_request_to_json(const LlmRequest& r);
LlmRequest llm_request_from_json(const nlohmann::json& j);

struct DispatchResult {
  int status = 200;
  nlohmann::json body;
};

// Serves one request envelope with the given implementations. Validation
// failures map to 400, range errors to 404, backend failures to 502/504 and
// anything else to 500, each with an error body.
DispatchResult dispatch_request(const BackendSet& backends, const nlohmann::json& envelope);

}  // namespace scope
