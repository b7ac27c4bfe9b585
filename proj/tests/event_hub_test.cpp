#include <doctest.h>

#include <algorithm>
#include <climits>
#include <random>
#include <set>
#include <thread>

#include "scope/errors.hpp"
#include "scope/event_hub.hpp"

using namespace scope;
using nlohmann::json;

namespace {

SessionEvent make_event(std::uint64_t seq, int frame, const std::string& kind) {
  SessionEvent e;
  e.seq = seq;
  e.frame = frame;
  e.t_ms = frame * 33;
  e.kind = kind;
  if (kind == "frame") e.payload = {{"objects", json::array()}};
  if (kind == "click") e.payload = {{"x", 1}, {"y", 2}, {"occupancy", 0.8}};
  if (kind == "label_assigned") e.payload = {{"id", 1}, {"label", "l" + std::to_string(seq)}, {"kind", "instrument"}};
  return e;
}

// Mixed stream: mostly frame events, a control event every few.
std::vector<SessionEvent> stream(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<SessionEvent> out;
  for (std::size_t i = 0; i < n; ++i) {
    const int r = static_cast<int>(rng() % 10);
    const std::string kind = r < 6 ? "frame" : r < 8 ? "cursor_moved" : r < 9 ? "click" : "label_assigned";
    out.push_back(make_event(i + 1, static_cast<int>(i / 3), kind));
  }
  return out;
}

}  // namespace

TEST_SUITE("event_hub") {

TEST_CASE("a new subscriber gets a snapshot, then the tail") {
  EventHub hub(16);
  const auto events = stream(10, 1);
  for (const auto& e : events) hub.publish(e);

  const int id = hub.subscribe();
  hub.publish(make_event(11, 9, "click"));
  const auto msgs = hub.poll(id);
  REQUIRE(msgs.size() == 2);
  CHECK(msgs[0].snapshot);
  CHECK(msgs[0].event.kind == "snapshot");
  CHECK(msgs[0].event.seq == 10);
  CHECK(msgs[0].event.payload == fold_events(events));
  CHECK(hub_message_to_json(msgs[0])["kind"] == "snapshot");
  CHECK_FALSE(msgs[1].snapshot);
  CHECK(msgs[1].event.seq == 11);
  CHECK(hub.poll(id).empty());
  CHECK(hub.last_seq() == 11);

  EventHub empty;
  const int first = empty.subscribe();
  const auto snap = empty.poll(first);
  REQUIRE(snap.size() == 1);
  CHECK(snap[0].event.seq == 0);
  CHECK(snap[0].event.payload["module"] == "InteractiveMode");
}

TEST_CASE("a slow subscriber loses frame events first and never control events") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    EventHub hub(8);
    const int id = hub.subscribe(0);  // no snapshot, nothing retained yet
    const auto events = stream(300, seed);
    for (const auto& e : events) hub.publish(e);
    const auto msgs = hub.poll(id, 10000);

    std::vector<std::uint64_t> want_controls, got_controls;
    for (const auto& e : events)
      if (!is_frame_kind(e.kind)) want_controls.push_back(e.seq);
    std::uint64_t prev = 0;
    for (const auto& m : msgs) {
      CHECK(m.event.seq > prev);
      prev = m.event.seq;
      if (!is_frame_kind(m.event.kind)) got_controls.push_back(m.event.seq);
    }
    CHECK(got_controls == want_controls);
    CHECK(hub.dropped(id) == events.size() - msgs.size());
    CHECK(msgs.size() >= std::min<std::size_t>(8, events.size()));
    // Whatever frame events survive are the newest ones.
    std::uint64_t oldest_kept_frame = UINT64_MAX;
    for (const auto& m : msgs)
      if (is_frame_kind(m.event.kind)) oldest_kept_frame = std::min(oldest_kept_frame, m.event.seq);
    std::set<std::uint64_t> kept;
    for (const auto& m : msgs) kept.insert(m.event.seq);
    for (const auto& e : events) {
      if (is_frame_kind(e.kind) && e.seq < oldest_kept_frame) CHECK(kept.count(e.seq) == 0);
    }
  }
}

TEST_CASE("the buffer stays bounded while it holds any frame event") {
  EventHub hub(4);
  const int id = hub.subscribe(0);
  for (std::uint64_t s = 1; s <= 50; ++s) {
    hub.publish(make_event(s, static_cast<int>(s), "frame"));
    CHECK(hub.queued(id) <= 4);
  }
  CHECK(hub.dropped(id) == 46);
  // Control events push out the queued frame events, then are kept even past
  // capacity; a frame event arriving at a buffer of controls is the one dropped.
  for (std::uint64_t s = 51; s <= 60; ++s) hub.publish(make_event(s, 60, "click"));
  CHECK(hub.queued(id) == 10);
  CHECK(hub.dropped(id) == 50);
  hub.publish(make_event(61, 61, "frame"));
  CHECK(hub.queued(id) == 10);
  CHECK(hub.dropped(id) == 51);
}

TEST_CASE("resuming by sequence number never duplicates control events") {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    std::mt19937_64 rng(seed * 7);
    EventHub hub(6);
    const auto events = stream(400, seed);
    std::vector<std::uint64_t> controls;
    std::uint64_t last_seen = 0;
    int id = hub.subscribe(0);
    for (const auto& e : events) {
      hub.publish(e);
      if (rng() % 5 == 0) {
        for (const auto& m : hub.poll(id, 3)) {
          CHECK(m.event.seq > last_seen);
          last_seen = m.event.seq;
          if (!is_frame_kind(m.event.kind)) controls.push_back(m.event.seq);
        }
      }
      if (rng() % 40 == 0) {
        // Disconnect: anything still queued is lost with the connection.
        hub.unsubscribe(id);
        id = hub.subscribe(last_seen);
      }
    }
    for (const auto& m : hub.poll(id, 100000)) {
      CHECK(m.event.seq > last_seen);
      last_seen = m.event.seq;
      if (!is_frame_kind(m.event.kind)) controls.push_back(m.event.seq);
    }
    std::vector<std::uint64_t> want;
    for (const auto& e : events)
      if (!is_frame_kind(e.kind)) want.push_back(e.seq);
    CHECK(controls == want);
  }
}

TEST_CASE("publish order is enforced") {
  EventHub hub;
  hub.publish(make_event(5, 1, "frame"));
  CHECK_THROWS_AS(hub.publish(make_event(5, 1, "frame")), OrderingError);
  CHECK_THROWS_AS(hub.publish(make_event(4, 2, "frame")), OrderingError);
  CHECK_THROWS_AS(EventHub(0), ConfigError);
}

TEST_CASE("blocked readers wake on publish and on close") {
  EventHub hub;
  const int id = hub.subscribe(0);
  std::thread producer([&] {
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    hub.publish(make_event(1, 0, "click"));
  });
  const auto got = hub.wait(id, std::chrono::seconds(5));
  producer.join();
  REQUIRE(got.size() == 1);
  CHECK(got[0].event.kind == "click");

  std::thread closer([&] {
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    hub.close();
  });
  const auto start = std::chrono::steady_clock::now();
  CHECK(hub.wait(id, std::chrono::seconds(5)).empty());
  closer.join();
  CHECK(hub.closed());
  CHECK(std::chrono::steady_clock::now() - start < std::chrono::seconds(2));
}

TEST_CASE("concurrent subscribers each see every control event in order") {
  EventHub hub(8);
  const auto events = stream(2000, 99);
  std::vector<std::uint64_t> want;
  for (const auto& e : events)
    if (!is_frame_kind(e.kind)) want.push_back(e.seq);

  constexpr int kReaders = 4;
  std::vector<int> ids;
  for (int i = 0; i < kReaders; ++i) ids.push_back(hub.subscribe(0));
  std::vector<std::vector<std::uint64_t>> seen(kReaders);
  std::vector<std::thread> readers;
  for (int i = 0; i < kReaders; ++i) {
    readers.emplace_back([&, i] {
      for (;;) {
        const auto msgs = hub.wait(ids[static_cast<std::size_t>(i)], std::chrono::milliseconds(50));
        for (const auto& m : msgs)
          if (!is_frame_kind(m.event.kind)) seen[static_cast<std::size_t>(i)].push_back(m.event.seq);
        if (msgs.empty() && hub.closed()) break;
      }
    });
  }
  for (const auto& e : events) hub.publish(e);
  hub.close();
  for (auto& t : readers) t.join();
  for (const auto& s : seen) CHECK(s == want);
}

}  // TEST_SUITE
