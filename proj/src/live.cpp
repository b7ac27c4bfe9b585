#include "scope/live.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <chrono>
#include <cstdio>
#include <regex>
#include <vector>

#include "scope/errors.hpp"

namespace scope {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using nlohmann::json;

LiveSession::LiveSession(SessionConfig config, BackendSet backends, FrameInfo frames, EventHub& hub,
                         SessionHeader header, std::ostream* log_sink)
    : config_(std::move(config)), backends_(std::move(backends)), frames_(frames), hub_(hub) {
  if (header.config.empty()) header.config = session_config_to_json(config_);
  if (header.backends.empty()) header.backends = backends_.descriptors;
  log_ = open_session_log(std::move(header), log_sink);
}

LiveSession::~LiveSession() { stop(); }

void LiveSession::start() {
  if (thread_.joinable()) return;
  thread_ = std::thread([this] { run(); });
}

void LiveSession::stop() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
  }
  cv_.notify_all();
  if (thread_.joinable()) thread_.join();
}

void LiveSession::enqueue(ClientCommand cmd) {
  {
    std::lock_guard lock(mu_);
    commands_.push_back(std::move(cmd));
  }
  cv_.notify_all();
}

void LiveSession::wait_until_idle() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [this] { return stopping_ || (frames_done_ && commands_.empty() && !busy_); });
}

void LiveSession::run() {
  SessionEngine engine(config_, backends_, frames_, [this](const SessionEvent& e) {
    append_log_event(log_, e);
    hub_.publish(e);
  });
  const auto period = std::chrono::duration<double>(1.0 / config_.fps);
  auto next_tick = std::chrono::steady_clock::now();

  auto drain = [&](std::unique_lock<std::mutex>& lock) {
    while (!commands_.empty() && !stopping_) {
      ClientCommand cmd = std::move(commands_.front());
      commands_.pop_front();
      busy_ = true;
      lock.unlock();
      try {
        engine.command(cmd);
      } catch (const std::exception& e) {
        // The agent reports its own failures; anything reaching here must
        // still not kill the session.
        std::fprintf(stderr, "scope: command failed: %s\n", e.what());
      }
      lock.lock();
      busy_ = false;
    }
  };

  for (int f = 0; f < frames_.count; ++f) {
    std::unique_lock lock(mu_);
    if (stopping_) return;
    engine.begin_frame(f);
    drain(lock);
    lock.unlock();
    engine.process_frame();
    next_tick += std::chrono::duration_cast<std::chrono::steady_clock::duration>(period);
    lock.lock();
    cv_.wait_until(lock, next_tick, [this] { return stopping_; });
  }
  frames_done_ = true;
  cv_.notify_all();

  // Past the last frame: keep serving commands until stopped.
  std::unique_lock lock(mu_);
  while (!stopping_) {
    drain(lock);
    cv_.notify_all();
    cv_.wait(lock, [this] { return stopping_ || !commands_.empty(); });
  }
}

struct EventServer::Impl : std::enable_shared_from_this<EventServer::Impl> {
  EventHub& hub;
  CommandHandler on_command;
  asio::io_context ioc;
  tcp::acceptor acceptor{ioc};
  std::thread thread;
  // Closes each open connection; touched only on the io thread.
  std::vector<std::function<void()>> closers;

  Impl(EventHub& h, CommandHandler c) : hub(h), on_command(std::move(c)) {}

  void accept();
};

namespace {

class Connection : public std::enable_shared_from_this<Connection> {
 public:
  Connection(tcp::socket socket, std::shared_ptr<EventServer::Impl> server)
      : ws_(std::move(socket)), timer_(ws_.get_executor()), server_(std::move(server)) {}

  ~Connection() {
    if (subscription_) server_->hub.unsubscribe(*subscription_);
  }

  void shutdown() {
    closed_ = true;
    timer_.cancel();
    beast::error_code ec;
    ws_.next_layer().shutdown(tcp::socket::shutdown_both, ec);
    ws_.next_layer().close(ec);
  }

  void start() {
    http::async_read(ws_.next_layer(), buffer_, request_,
                     [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_request(ec); });
  }

 private:
  void on_request(beast::error_code ec) {
    if (ec) return;
    if (!websocket::is_upgrade(request_)) return;
    std::optional<std::uint64_t> resume;
    static const std::regex resume_re(R"([?&]resume=(\d+))");
    std::smatch m;
    const std::string target(request_.target());
    if (std::regex_search(target, m, resume_re)) resume = std::stoull(m[1].str());
    subscription_ = server_->hub.subscribe(resume);
    ws_.async_accept(request_, [self = shared_from_this()](beast::error_code ec2) {
      if (ec2) return;
      self->read();
      self->pump();
    });
  }

  void read() {
    ws_.async_read(in_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->closed_ = true;
        self->timer_.cancel();
        return;
      }
      const std::string text = beast::buffers_to_string(self->in_.data());
      self->in_.consume(self->in_.size());
      try {
        self->server_->on_command(parse_client_command(json::parse(text)));
      } catch (const std::exception& e) {
        self->send(json{{"type", "error"}, {"message", e.what()}}.dump());
      }
      self->read();
    });
  }

  void pump() {
    if (closed_) return;
    for (const auto& msg : server_->hub.poll(*subscription_)) send(hub_message_to_json(msg).dump());
    const std::uint64_t dropped = server_->hub.dropped(*subscription_);
    if (dropped != reported_dropped_) {
      reported_dropped_ = dropped;
      send(json{{"type", "stats"}, {"dropped", dropped}}.dump());
    }
    timer_.expires_after(std::chrono::milliseconds(5));
    timer_.async_wait([self = shared_from_this()](beast::error_code ec) {
      if (!ec) self->pump();
    });
  }

  void send(std::string text) {
    outbox_.push_back(std::move(text));
    if (outbox_.size() == 1) write_next();
  }

  void write_next() {
    ws_.text(true);
    ws_.async_write(asio::buffer(outbox_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->closed_ = true;
        self->timer_.cancel();
        return;
      }
      self->outbox_.pop_front();
      if (!self->outbox_.empty()) self->write_next();
    });
  }

  websocket::stream<tcp::socket> ws_;
  asio::steady_timer timer_;
  std::shared_ptr<EventServer::Impl> server_;
  beast::flat_buffer buffer_;
  beast::flat_buffer in_;
  http::request<http::string_body> request_;
  std::deque<std::string> outbox_;
  std::optional<int> subscription_;
  std::uint64_t reported_dropped_ = 0;
  bool closed_ = false;
};

}  // namespace

void EventServer::Impl::accept() {
  acceptor.async_accept([self = shared_from_this()](beast::error_code ec, tcp::socket socket) {
    if (ec) return;
    auto conn = std::make_shared<Connection>(std::move(socket), self);
    self->closers.push_back([weak = std::weak_ptr<Connection>(conn)] {
      if (auto c = weak.lock()) c->shutdown();
    });
    conn->start();
    self->accept();
  });
}

EventServer::EventServer(EventHub& hub, CommandHandler on_command)
    : impl_(std::make_shared<Impl>(hub, std::move(on_command))) {}

EventServer::~EventServer() { stop(); }

int EventServer::start(const std::string& host, int port) {
  const tcp::endpoint endpoint(asio::ip::make_address(host), static_cast<unsigned short>(port));
  beast::error_code ec;
  impl_->acceptor.open(endpoint.protocol(), ec);
  if (!ec) impl_->acceptor.set_option(asio::socket_base::reuse_address(true), ec);
  if (!ec) impl_->acceptor.bind(endpoint, ec);
  if (!ec) impl_->acceptor.listen(asio::socket_base::max_listen_connections, ec);
  if (ec) throw Error("cannot listen on " + host + ":" + std::to_string(port) + ": " + ec.message());
  impl_->accept();
  impl_->thread = std::thread([impl = impl_] { impl->ioc.run(); });
  return impl_->acceptor.local_endpoint().port();
}

void EventServer::stop() {
  if (!impl_ || !impl_->thread.joinable()) return;
  // Closing the acceptor and every socket lets run() return once the
  // cancelled handlers have drained.
  asio::post(impl_->ioc, [impl = impl_] {
    beast::error_code ec;
    impl->acceptor.close(ec);
    for (auto& close : impl->closers) close();
    impl->closers.clear();
  });
  impl_->thread.join();
}

}  // namespace scope
