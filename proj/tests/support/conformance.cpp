#include "conformance.hpp"

#include <httplib.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <thread>

#include "scope/errors.hpp"
#include "scope/http_backends.hpp"
#include "scope/mock_backends.hpp"
#include "scope/protocol.hpp"

namespace scope::testing {

using nlohmann::json;

namespace {

json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  return json::parse(in);
}

// A request a well-behaved client could produce: the envelope is valid and
// the payload passes schema checks.
bool client_sendable(const json& request) {
  try {
    const BackendKind k = validate_envelope(request);
    validate_request(k, request.at("payload"));
    return true;
  } catch (const Error&) {
    return false;
  }
}

std::string compare(const ConformanceCase& c, int status, const json& body) {
  if (status != c.status) {
    return "status " + std::to_string(status) + ", expected " + std::to_string(c.status) + ": " + body.dump();
  }
  if (c.status == 200) {
    if (body != c.response) return "response body differs from the golden fixture";
    try {
      validate_response(validate_envelope(body), body.at("payload"));
    } catch (const Error& e) {
      return std::string("golden response fails validation: ") + e.what();
    }
    return "";
  }
  try {
    validate_error_body(body);
  } catch (const Error& e) {
    return std::string("malformed error body: ") + e.what();
  }
  if (body.at("code") != c.response.at("code")) return "error code " + body.at("code").dump();
  return "";
}

}  // namespace

std::vector<ConformanceCase> load_conformance_cases(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir / "cases"))
    if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<ConformanceCase> out;
  for (const auto& f : files) {
    const json j = read_json(f);
    out.push_back({f.stem().string(), j.at("request"), j.at("status").get<int>(), j.at("response")});
  }
  return out;
}

BackendSet fixture_backends(const std::filesystem::path& dir) {
  const json scene = read_json(dir / "scene.json");
  auto truth = std::make_shared<const SceneTruth>(
      generate_synthetic_scene(scene.at("seed").get<std::uint64_t>(), scene_spec_from_json(scene.at("spec"))));
  return make_mock_backends(truth);
}

std::vector<ConformanceResult> run_conformance(const std::filesystem::path& dir) {
  const auto cases = load_conformance_cases(dir);
  const BackendSet mocks = fixture_backends(dir);
  std::vector<ConformanceResult> results;

  for (const auto& c : cases) {
    const DispatchResult r = dispatch_request(mocks, c.request);
    const std::string why = compare(c, r.status, r.body);
    results.push_back({c.name, "dispatch", why.empty(), why});
  }

  BackendServer server(mocks);
  const int port = server.start();
  const std::string base = "http://127.0.0.1:" + std::to_string(port);
  httplib::Client raw(base);
  raw.set_read_timeout(std::chrono::seconds(10));
  for (const auto& c : cases) {
    const std::string kind = c.request.value("kind", std::string("unknown"));
    auto res = raw.Post("/v1/" + kind, c.request.dump(), "application/json");
    std::string why;
    if (!res) {
      why = "no response: " + httplib::to_string(res.error());
    } else {
      try {
        why = compare(c, res->status, json::parse(res->body));
      } catch (const json::exception& e) {
        why = std::string("unparseable body: ") + e.what();
      }
    }
    results.push_back({c.name, "http-server", why.empty(), why});
  }

  HttpBackendClient client(base, 10000);
  for (const auto& c : cases) {
    if (!client_sendable(c.request)) continue;
    const BackendKind kind = validate_envelope(c.request);
    std::string why;
    try {
      const json payload = client.call(kind, c.request.at("payload"));
      if (c.status != 200) {
        why = "call succeeded, expected error " + c.response.at("code").dump();
      } else if (payload != c.response.at("payload")) {
        why = "payload differs from the golden fixture";
      }
    } catch (const BackendError& e) {
      if (c.status == 200 || e.code() != c.response.at("code").get<std::string>()) {
        why = "unexpected backend error " + e.code() + ": " + e.what();
      }
    } catch (const std::exception& e) {
      why = std::string("unexpected exception: ") + e.what();
    }
    results.push_back({c.name, "http-client", why.empty(), why});
  }
  server.stop();
  return results;
}

void regenerate_conformance_responses(const std::filesystem::path& dir) {
  const BackendSet mocks = fixture_backends(dir);
  for (const auto& c : load_conformance_cases(dir)) {
    const DispatchResult r = dispatch_request(mocks, c.request);
    json out{{"request", c.request}, {"status", r.status}};
    out["response"] = r.status == 200 ? r.body : json{{"code", r.body.at("code")}};
    std::ofstream(dir / "cases" / (c.name + ".json")) << out.dump(1) << '\n';
  }
}

TimeoutProbe probe_stalled_backend(int timeout_ms, int stall_ms) {
  httplib::Server stub;
  std::atomic<bool> release{false};
  stub.Post(R"(/v1/(\w+))", [&](const httplib::Request&, httplib::Response& res) {
    const auto until = std::chrono::steady_clock::now() + std::chrono::milliseconds(stall_ms);
    while (!release && std::chrono::steady_clock::now() < until)
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    res.set_content(R"({"code":"late","message":"too late","retryable":false})", "application/json");
    res.status = 500;
  });
  const int port = stub.bind_to_any_port("127.0.0.1");
  std::thread serving([&] { stub.listen_after_bind(); });
  stub.wait_until_ready();

  TimeoutProbe probe;
  HttpBackendClient client("http://127.0.0.1:" + std::to_string(port), timeout_ms);
  const auto started = std::chrono::steady_clock::now();
  try {
    client.call(BackendKind::depth, {{"frame", 0}});
    probe.error = "call returned";
  } catch (const BackendTimeoutError& e) {
    probe.timed_out = true;
    probe.error = e.what();
  } catch (const std::exception& e) {
    probe.error = e.what();
  }
  probe.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();

  release = true;
  stub.stop();
  serving.join();
  return probe;
}

}  // namespace scope::testing
