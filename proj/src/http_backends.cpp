#include "scope/http_backends.hpp"

#include <httplib.h>

#include <chrono>

#include "scope/errors.hpp"
#include "scope/protocol.hpp"

namespace scope {

using nlohmann::json;

BackendServer::BackendServer(BackendSet backends)
    : backends_(std::move(backends)), server_(std::make_unique<httplib::Server>()) {
  server_->Get("/v1/healthz", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"status":"ok"})", "application/json");
  });
  server_->Post(R"(/v1/(\w+))", [this](const httplib::Request& req, httplib::Response& res) {
    DispatchResult result;
    try {
      json envelope = json::parse(req.body);
      if (envelope.value("kind", "") != req.matches[1].str()) {
        result = {400, error_body("bad_request", "envelope kind does not match the endpoint", false)};
      } else {
        result = dispatch_request(backends_, envelope);
      }
    } catch (const json::exception& e) {
      result = {400, error_body("bad_request", std::string("invalid JSON: ") + e.what(), false)};
    }
    res.status = result.status;
    res.set_content(result.body.dump(), "application/json");
  });
}

BackendServer::~BackendServer() { stop(); }

int BackendServer::start(const std::string& host, int port) {
  port_ = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (port_ < 0) throw Error("cannot bind backend server to " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void BackendServer::listen(const std::string& host, int port) {
  port_ = port;
  if (!server_->listen(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port));
}

void BackendServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

HttpBackendClient::HttpBackendClient(std::string base_url, int timeout_ms)
    : base_url_(std::move(base_url)), timeout_ms_(timeout_ms) {
  if (timeout_ms <= 0) throw ConfigError("backend timeout must be positive");
}

json HttpBackendClient::call(BackendKind kind, const json& payload) const {
  httplib::Client cli(base_url_);
  const auto timeout = std::chrono::milliseconds(timeout_ms_);
  cli.set_connection_timeout(timeout);
  cli.set_read_timeout(timeout);
  cli.set_write_timeout(timeout);

  const std::string path = "/v1/" + std::string(to_string(kind));
  const auto started = std::chrono::steady_clock::now();
  auto res = cli.Post(path, make_envelope(kind, payload).dump(), "application/json");
  const auto elapsed = std::chrono::steady_clock::now() - started;

  if (!res) {
    const auto err = res.error();
    if (err == httplib::Error::ConnectionTimeout || (err == httplib::Error::Read && elapsed >= timeout)) {
      throw BackendTimeoutError(std::string(to_string(kind)) + " backend did not answer within " +
                                std::to_string(timeout_ms_) + " ms");
    }
    throw BackendUnavailableError(std::string(to_string(kind)) + " backend unreachable: " + httplib::to_string(err));
  }

  json body;
  try {
    body = json::parse(res->body);
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed response body: ") + e.what());
  }
  if (res->status != 200) {
    validate_error_body(body);
    throw BackendError(body.at("code").get<std::string>(), body.at("message").get<std::string>(),
                       body.at("retryable").get<bool>());
  }
  if (validate_envelope(body) != kind) throw ProtocolError("response kind does not match the request");
  validate_response(kind, body.at("payload"));
  return body.at("payload");
}

bool HttpBackendClient::healthy() const {
  httplib::Client cli(base_url_);
  cli.set_connection_timeout(std::chrono::milliseconds(timeout_ms_));
  cli.set_read_timeout(std::chrono::milliseconds(timeout_ms_));
  auto res = cli.Get("/v1/healthz");
  return res && res->status == 200;
}

namespace {

class HttpSpeechToText final : public SpeechToText {
 public:
  explicit HttpSpeechToText(HttpBackendClient c) : client_(std::move(c)) {}
  std::string transcribe(std::span<const std::uint8_t> audio) override {
    return client_.call(BackendKind::stt, {{"audio_b64", base64_encode(audio)}}).at("text").get<std::string>();
  }

 private:
  HttpBackendClient client_;
};

class HttpLlm final : public LlmBackend {
 public:
  explicit HttpLlm(HttpBackendClient c) : client_(std::move(c)) {}
  std::string complete(const LlmRequest& request) override {
    return client_.call(BackendKind::llm, llm_request_to_json(request)).at("text").get<std::string>();
  }

 private:
  HttpBackendClient client_;
};

class HttpTextSegmenter final : public TextSegmenter {
 public:
  explicit HttpTextSegmenter(HttpBackendClient c) : client_(std::move(c)) {}
  std::vector<ScoredCandidate> segment(const std::string& prompt, int frame_index) override {
    const auto out = client_.call(BackendKind::segment_text, {{"prompt", prompt}, {"frame", frame_index}});
    std::vector<ScoredCandidate> cands;
    for (const auto& c : out.at("candidates")) cands.push_back(candidate_from_json(c));
    return cands;
  }

 private:
  HttpBackendClient client_;
};

class HttpPointSegmenter final : public PointSegmenter {
 public:
  explicit HttpPointSegmenter(HttpBackendClient c) : client_(std::move(c)) {}
  Mask segment(const PointPrompt& prompt, int frame_index) override {
    const json payload{{"frame", frame_index},
                       {"point", {{"x", prompt.point.x}, {"y", prompt.point.y}}},
                       {"polarity", prompt.positive ? "positive" : "negative"}};
    return mask_from_json(client_.call(BackendKind::segment_point, payload).at("mask"));
  }

 private:
  HttpBackendClient client_;
};

class HttpPropagator final : public Propagator {
 public:
  explicit HttpPropagator(HttpBackendClient c) : client_(std::move(c)) {}
  std::vector<Mask> propagate(const Mask& initial, int from_frame, int to_frame) override {
    const json payload{{"initial", mask_to_json(initial)}, {"from_frame", from_frame}, {"to_frame", to_frame}};
    std::vector<Mask> masks;
    const json out = client_.call(BackendKind::propagate, payload);
    for (const auto& m : out.at("masks")) masks.push_back(mask_from_json(m));
    return masks;
  }

 private:
  HttpBackendClient client_;
};

class HttpDepthEstimator final : public DepthEstimator {
 public:
  explicit HttpDepthEstimator(HttpBackendClient c) : client_(std::move(c)) {}
  DepthMap estimate(int frame_index) override {
    return depth_from_json(client_.call(BackendKind::depth, {{"frame", frame_index}}));
  }

 private:
  HttpBackendClient client_;
};

}  // namespace

BackendSet make_http_backends(const std::string& base_url, int timeout_ms) {
  HttpBackendClient client(base_url, timeout_ms);
  BackendSet set;
  set.stt = std::make_shared<HttpSpeechToText>(client);
  set.llm = std::make_shared<HttpLlm>(client);
  set.segment_text = std::make_shared<HttpTextSegmenter>(client);
  set.segment_point = std::make_shared<HttpPointSegmenter>(client);
  set.propagate = std::make_shared<HttpPropagator>(client);
  set.depth = std::make_shared<HttpDepthEstimator>(client);
  for (BackendKind k : all_backend_kinds()) set.descriptors.push_back({k, base_url, timeout_ms, kProtocolVersion});
  return set;
}

}  // namespace scope
