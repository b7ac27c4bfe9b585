#include "scope/event_hub.hpp"

#include <algorithm>

#include "scope/errors.hpp"

namespace scope {

nlohmann::json hub_message_to_json(const HubMessage& m) {
  nlohmann::json j = event_to_json(m.event);
  if (m.snapshot) j["kind"] = "snapshot";
  return j;
}

EventHub::EventHub(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ < 1) throw ConfigError("event buffer capacity must be positive");
}

int EventHub::subscribe(std::optional<std::uint64_t> resume_after) {
  std::lock_guard lock(mu_);
  const int id = next_id_++;
  Subscriber& s = subscribers_[id];
  if (resume_after) {
    const auto first = std::upper_bound(history_.begin(), history_.end(), *resume_after,
                                        [](std::uint64_t seq, const SessionEvent& e) { return seq < e.seq; });
    for (auto it = first; it != history_.end(); ++it) push(s, {false, *it});
  } else {
    SessionEvent snap;
    snap.seq = history_.empty() ? 0 : history_.back().seq;
    snap.frame = history_.empty() ? 0 : history_.back().frame;
    snap.t_ms = history_.empty() ? 0 : history_.back().t_ms;
    snap.kind = "snapshot";
    snap.payload = fold_events(history_);
    s.queue.push_back({true, std::move(snap)});
  }
  return id;
}

void EventHub::unsubscribe(int id) {
  std::lock_guard lock(mu_);
  subscribers_.erase(id);
}

void EventHub::push(Subscriber& s, HubMessage m) {
  if (s.queue.size() >= capacity_) {
    const auto victim = std::find_if(s.queue.begin(), s.queue.end(),
                                     [](const HubMessage& q) { return !q.snapshot && is_frame_kind(q.event.kind); });
    if (victim != s.queue.end()) {
      s.queue.erase(victim);
      ++s.dropped;
    } else if (is_frame_kind(m.event.kind)) {
      ++s.dropped;
      return;
    }
    // Only control events queued and another arrives: the buffer grows.
  }
  s.queue.push_back(std::move(m));
}

void EventHub::publish(const SessionEvent& event) {
  {
    std::lock_guard lock(mu_);
    if (!history_.empty() && event.seq <= history_.back().seq) {
      throw OrderingError("event seq " + std::to_string(event.seq) + " published out of order");
    }
    history_.push_back(event);
    for (auto& [id, s] : subscribers_) push(s, {false, event});
  }
  cv_.notify_all();
}

void EventHub::close() {
  {
    std::lock_guard lock(mu_);
    closed_ = true;
  }
  cv_.notify_all();
}

bool EventHub::closed() const {
  std::lock_guard lock(mu_);
  return closed_;
}

std::vector<HubMessage> EventHub::poll(int id, std::size_t max) {
  std::lock_guard lock(mu_);
  std::vector<HubMessage> out;
  const auto it = subscribers_.find(id);
  if (it == subscribers_.end()) return out;
  auto& q = it->second.queue;
  while (!q.empty() && out.size() < max) {
    out.push_back(std::move(q.front()));
    q.pop_front();
  }
  return out;
}

std::vector<HubMessage> EventHub::wait(int id, std::chrono::milliseconds timeout, std::size_t max) {
  {
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, timeout, [&] {
      const auto it = subscribers_.find(id);
      return closed_ || it == subscribers_.end() || !it->second.queue.empty();
    });
  }
  return poll(id, max);
}

std::uint64_t EventHub::dropped(int id) const {
  std::lock_guard lock(mu_);
  const auto it = subscribers_.find(id);
  return it == subscribers_.end() ? 0 : it->second.dropped;
}

std::size_t EventHub::queued(int id) const {
  std::lock_guard lock(mu_);
  const auto it = subscribers_.find(id);
  return it == subscribers_.end() ? 0 : it->second.queue.size();
}

std::uint64_t EventHub::last_seq() const {
  std::lock_guard lock(mu_);
  return history_.empty() ? 0 : history_.back().seq;
}

nlohmann::json EventHub::snapshot() const {
  std::lock_guard lock(mu_);
  return fold_events(history_);
}

}  // namespace scope
