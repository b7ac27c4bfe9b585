#pragma once

// Fan-out of session events to subscribers with bounded per-subscriber
// buffers. Frame-kind events are dropped oldest first when a buffer is full;
// control events are never dropped. Late subscribers start from a snapshot;
// reconnecting subscribers resume after the last sequence number they saw.

#include <condition_variable>
#include <chrono>
#include <cstdint>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <vector>

#include "scope/session.hpp"

namespace scope {

// The snapshot a late subscriber receives first: kind "snapshot", seq of the
// last folded event, payload = fold_events over everything published so far.
struct HubMessage {
  bool snapshot = false;
  SessionEvent event;
};

nlohmann::json hub_message_to_json(const HubMessage& m);

class EventHub {
 public:
  explicit EventHub(std::size_t capacity = 256);

  // Without resume: a snapshot followed by the live tail. With resume: every
  // retained event with seq > *resume_after, then the live tail.
  int subscribe(std::optional<std::uint64_t> resume_after = std::nullopt);
  void unsubscribe(int id);

  void publish(const SessionEvent& event);
  // Wakes blocked readers permanently.
  void close();
  bool closed() const;

  // Removes and returns up to `max` queued messages; empty when none.
  std::vector<HubMessage> poll(int id, std::size_t max = 64);
  // Blocks until a message is queued, the hub closes or the timeout passes.
  std::vector<HubMessage> wait(int id, std::chrono::milliseconds timeout, std::size_t max = 64);

  std::uint64_t dropped(int id) const;
  std::size_t queued(int id) const;
  std::uint64_t last_seq() const;
  nlohmann::json snapshot() const;
  std::size_t capacity() const { return capacity_; }

 private:
  struct Subscriber {
    std::deque<HubMessage> queue;
    std::uint64_t dropped = 0;
  };
  void push(Subscriber& s, HubMessage m);

  std::size_t capacity_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::vector<SessionEvent> history_;
  std::map<int, Subscriber> subscribers_;
  int next_id_ = 1;
  bool closed_ = false;
};

}  // namespace scope
