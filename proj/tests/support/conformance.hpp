#pragma once

// Backend protocol conformance harness shared by the unit tests and the
// acceptance binary.
//
// Fixture directory layout:
//   scene.json         {"seed":n,"spec":{...}} for the mock backends
//   cases/<name>.json  {"request":<envelope>,"status":int,"response":<body>}
// For status 200 the response is the full expected envelope; otherwise only
// its "code" is compared.

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scope/backends.hpp"

namespace scope::testing {

struct ConformanceCase {
  std::string name;
  nlohmann::json request;
  int status = 200;
  nlohmann::json response;
};

std::vector<ConformanceCase> load_conformance_cases(const std::filesystem::path& dir);
BackendSet fixture_backends(const std::filesystem::path& dir);

struct ConformanceResult {
  std::string name;
  std::string path;  // "dispatch", "http-server" or "http-client"
  bool passed = false;
  std::string detail;
};

// Runs every case in-process, against a BackendServer over HTTP, and through
// HttpBackendClient where the request is one a client could send.
std::vector<ConformanceResult> run_conformance(const std::filesystem::path& dir);

// Rewrites the expected responses of every case from the current mocks.
void regenerate_conformance_responses(const std::filesystem::path& dir);

struct TimeoutProbe {
  bool timed_out = false;      // BackendTimeoutError was raised
  double elapsed_ms = 0.0;
  std::string error;
};

// Calls a server that accepts the request and never answers in time.
TimeoutProbe probe_stalled_backend(int timeout_ms, int stall_ms);

}  // namespace scope::testing
