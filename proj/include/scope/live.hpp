#pragma once

// Live sessions for the operator console: a paced frame loop driving a
// SessionEngine, and a WebSocket endpoint that streams its events and accepts
// commands.
//
// Connect to ws://host:port/events (optionally ?resume=<seq>). Server to
// client: SessionEvent JSON objects (the first is kind "snapshot" unless
// resuming) and {"type":"stats","dropped":n} whenever the drop counter moves.
// Client to server: {"utterance":"..."}, {"select":n} or {"stop":true}.

#include <atomic>
#include <condition_variable>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <ostream>
#include <thread>

#include "scope/event_hub.hpp"
#include "scope/session.hpp"

namespace scope {

class LiveSession {
 public:
  // fps paces the frame loop in wall time. The log sink, if any, receives the
  // JSONL session log.
  LiveSession(SessionConfig config, BackendSet backends, FrameInfo frames, EventHub& hub, SessionHeader header,
              std::ostream* log_sink = nullptr);
  ~LiveSession();
  LiveSession(const LiveSession&) = delete;
  LiveSession& operator=(const LiveSession&) = delete;

  void start();
  void stop();
  // Commands run on the session thread between frames, in arrival order.
  void enqueue(ClientCommand cmd);
  // Blocks until every frame has been processed and the command queue is empty.
  void wait_until_idle();
  bool frames_done() const { return frames_done_; }

 private:
  void run();

  SessionConfig config_;
  BackendSet backends_;
  FrameInfo frames_;
  EventHub& hub_;
  SessionLog log_;
  std::thread thread_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<ClientCommand> commands_;
  bool stopping_ = false;
  bool busy_ = false;
  std::atomic<bool> frames_done_{false};
};

class EventServer {
 public:
  using CommandHandler = std::function<void(const ClientCommand&)>;

  EventServer(EventHub& hub, CommandHandler on_command);
  ~EventServer();
  EventServer(const EventServer&) = delete;
  EventServer& operator=(const EventServer&) = delete;

  // Port 0 picks a free port. Returns the bound port.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  void stop();

  struct Impl;

 private:
  std::shared_ptr<Impl> impl_;
};

}  // namespace scope
