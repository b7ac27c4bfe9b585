#pragma once

// HTTP transport for the backend protocol: a gateway server that serves any
// BackendSet, and thin clients implementing the backend interfaces.

#include <memory>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "scope/backends.hpp"

namespace httplib {
class Server;
}

namespace scope {

class BackendServer {
 public:
  explicit BackendServer(BackendSet backends);
  ~BackendServer();
  BackendServer(const BackendServer&) = delete;
  BackendServer& operator=(const BackendServer&) = delete;

  // Binds (port 0 picks a free port) and serves on a background thread.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  // Serves on the calling thread until stop().
  void listen(const std::string& host, int port);
  void stop();
  int port() const { return port_; }

 private:
  BackendSet backends_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
};

class HttpBackendClient {
 public:
  // base_url like "http://127.0.0.1:8080".
  HttpBackendClient(std::string base_url, int timeout_ms);

  // POSTs the envelope and returns the validated response payload. Throws
  // BackendTimeoutError when no response arrives within the timeout,
  // BackendUnavailableError when the server cannot be reached, BackendError
  // carrying the server's error body otherwise.
  nlohmann::json call(BackendKind kind, const nlohmann::json& payload) const;
  bool healthy() const;
  int timeout_ms() const { return timeout_ms_; }

 private:
  std::string base_url_;
  int timeout_ms_;
};

BackendSet make_http_backends(const std::string& base_url, int timeout_ms);

}  // namespace scope
