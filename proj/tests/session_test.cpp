#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "scope/errors.hpp"
#include "scope/metrics.hpp"
#include "scope/session.hpp"

using namespace scope;
using nlohmann::json;

namespace {

struct Harness {
  SceneSpec spec;
  std::uint64_t seed = 5;
  MockOptions mock;
  SessionConfig config;

  FrameInfo frames() const { return {spec.frames, spec.width, spec.height}; }
  std::shared_ptr<const SceneTruth> truth() const {
    return std::make_shared<const SceneTruth>(generate_synthetic_scene(seed, spec));
  }
  SessionHeader header() const {
    SessionHeader h;
    h.seed = seed;
    h.scene = spec;
    h.mock = mock;
    return h;
  }
  ScriptedRun run(const std::vector<ScriptEntry>& script, std::ostream* sink = nullptr) const {
    return run_scripted_session(frames(), script, config, make_mock_backends(truth(), mock), header(), sink);
  }
};

Harness default_harness() {
  Harness h;
  h.spec = default_session_scene();
  return h;
}

std::vector<std::string> control_kinds(const std::vector<SessionEvent>& events) {
  std::vector<std::string> out;
  for (const auto& e : events)
    if (!is_frame_kind(e.kind) && e.kind != "agent_text") out.push_back(e.kind);
  return out;
}

bool inside_contact(const SceneSpec& spec, int frame) {
  return std::any_of(spec.contacts.begin(), spec.contacts.end(),
                     [&](const auto& c) { return frame >= c.first && frame <= c.second; });
}

// Steps through an engine with explicit commands: (frame, command) pairs.
struct Driven {
  std::vector<SessionEvent> events;
  SessionState state;
  std::map<int, Mask> masks;
};

Driven drive(const Harness& h, const std::vector<std::pair<int, ClientCommand>>& commands, int last_frame) {
  Driven d;
  SessionEngine engine(h.config, make_mock_backends(h.truth(), h.mock), h.frames(),
                       [&d](const SessionEvent& e) { d.events.push_back(e); });
  std::size_t next = 0;
  for (int f = 0; f <= last_frame; ++f) {
    engine.begin_frame(f);
    while (next < commands.size() && commands[next].first == f) engine.command(commands[next++].second);
    engine.process_frame();
  }
  d.state = engine.agent_state();
  d.masks = engine.masks_at(last_frame);
  return d;
}

}  // namespace

TEST_SUITE("session") {

TEST_CASE("happy path emits the control events in order") {
  const Harness h = default_harness();
  const ScriptedRun run = h.run(happy_path_script());
  const auto kinds = control_kinds(run.log.events);
  const std::vector<std::string> expected{"candidates_page", "mask_selected", "label_assigned", "tip_locked",
                                          "click", "anatomy_segmented"};
  std::size_t at = 0;
  for (const auto& k : kinds)
    if (at < expected.size() && k == expected[at]) ++at;
  CHECK(at == expected.size());
  CHECK(std::count(kinds.begin(), kinds.end(), "error") == 0);

  // One click per scheduled contact, each inside its contact window.
  std::vector<int> click_frames;
  for (const auto& e : run.log.events)
    if (e.kind == "click") click_frames.push_back(e.frame);
  REQUIRE(click_frames.size() == h.spec.contacts.size());
  for (int f : click_frames) CHECK(inside_contact(h.spec, f));

  CHECK(run.final_state.current_module == ModuleName::Tracking);
  REQUIRE(run.objects.size() == 3);
  CHECK(run.objects.at(1).label == "suction");
  CHECK(run.objects.at(1).kind == "instrument");
  CHECK(run.objects.at(2).kind == "tip");
  CHECK(run.objects.at(3).kind == "anatomy");
  CHECK(run.landmarks.size() == static_cast<std::size_t>(h.spec.frames - 8));
}

TEST_CASE("happy path reaches Tracking within six agent steps") {
  const Harness h = default_harness();
  const ScriptedRun run = h.run(happy_path_script());
  int steps = 0;
  int reached = -1;
  for (const auto& e : run.log.events) {
    if (e.kind != "agent_text" || e.payload.at("q").is_null()) continue;
    ++steps;
    if (reached < 0 && e.payload.at("module_after") == "Tracking") reached = steps;
  }
  CHECK(reached > 0);
  CHECK(reached <= 6);
  CHECK(steps == static_cast<int>(happy_path_script().size()));
}

TEST_CASE("the tracked instrument and anatomy follow the scene") {
  const Harness h = default_harness();
  const ScriptedRun run = h.run(happy_path_script());
  const auto truth = h.truth();

  auto mean_dice = [&](int id, const std::vector<Mask>& truth_track) {
    std::vector<FramePair> pairs;
    const auto& masks = run.masks.at(id);
    const auto start = static_cast<std::size_t>(run.objects.at(id).start_frame);
    for (std::size_t i = 0; i < masks.size(); ++i) pairs.push_back({masks[i], truth_track[start + i]});
    return sequence_means(pairs).mdsc;
  };
  CHECK(mean_dice(1, truth->shafts[0]) >= 0.99);
  CHECK(mean_dice(3, truth->anatomy) >= 0.99);
}

TEST_CASE("a rejection shows a second page before the selection") {
  Harness h = default_harness();
  h.mock.noise.extra_distractors = 6;
  h.mock.noise.truth_score = 0.3;
  const ScriptedRun run = h.run({{1, "segment the surgical instruments"},
                                 {2, "none of these"},
                                 {3, "the first one, label it suction"}});
  const auto kinds = control_kinds(run.log.events);
  const auto sel = std::find(kinds.begin(), kinds.end(), "mask_selected");
  REQUIRE(sel != kinds.end());
  CHECK(std::count(kinds.begin(), sel, "candidates_page") == 2);

  std::vector<const SessionEvent*> pages;
  for (const auto& e : run.log.events)
    if (e.kind == "candidates_page") pages.push_back(&e);
  REQUIRE(pages.size() == 2);
  CHECK(pages[0]->payload["candidates"].size() == 6);
  CHECK(pages[0]->payload["page_index"] == 0);
  CHECK(pages[1]->payload["page_index"] == 1);
  CHECK(pages[0]->latency_ms.has_value());

  const auto stats = iteration_stats_from_events(run.log.events);
  REQUIRE(stats.size() == 1);
  CHECK(stats[0].iterations == 2);
}

TEST_CASE("an empty script produces frame events only") {
  const Harness h = default_harness();
  const ScriptedRun run = h.run({});
  CHECK(run.log.events.size() == static_cast<std::size_t>(h.spec.frames));
  for (const auto& e : run.log.events) {
    CHECK(e.kind == "frame");
    CHECK(e.payload["objects"].empty());
  }
  CHECK(run.final_state.current_module == ModuleName::InteractiveMode);
}

TEST_CASE("events are strictly ordered and well formed") {
  const Harness h = default_harness();
  const ScriptedRun run = h.run(happy_path_script());
  for (std::size_t i = 0; i < run.log.events.size(); ++i) {
    const SessionEvent& e = run.log.events[i];
    CHECK_NOTHROW(validate_event(e));
    CHECK(e.t_ms == std::llround(e.frame * 1000.0 / h.config.fps));
    if (i > 0) {
      const SessionEvent& p = run.log.events[i - 1];
      CHECK(std::pair(p.frame, p.seq) < std::pair(e.frame, e.seq));
    }
    CHECK(event_from_json(event_to_json(e)) == e);
  }
}

TEST_CASE("log appends are ordered and written immediately") {
  std::ostringstream sink;
  SessionLog log = open_session_log(default_harness().header(), &sink);
  const std::size_t header_len = sink.str().size();
  CHECK(header_len > 0);
  SessionEvent e;
  e.seq = 1;
  e.frame = 0;
  e.kind = "frame";
  e.payload = {{"objects", json::array()}};
  append_log_event(log, e);
  CHECK(log.events.size() == 1);
  CHECK(sink.str().size() > header_len);

  CHECK_THROWS_AS(append_log_event(log, e), OrderingError);
  SessionEvent older = e;
  older.seq = 2;
  older.frame = -1;
  CHECK_THROWS_AS(append_log_event(log, older), OrderingError);
  SessionEvent next = e;
  next.seq = 2;
  append_log_event(log, next);
  CHECK(log.events.size() == 2);

  std::istringstream in(sink.str());
  const SessionLog back = read_session_log(in);
  CHECK(back.events == log.events);
  CHECK(back.header.seed == log.header.seed);
}

TEST_CASE("replaying a long log reproduces the same events and state") {
  Harness h = default_harness();
  h.spec.frames = 300;
  h.spec.contacts = {{30, 37}, {70, 77}, {150, 160}, {240, 248}};
  std::ostringstream sink;
  const ScriptedRun run = h.run(happy_path_script(), &sink);
  CHECK(run.log.events.size() >= 500);

  std::istringstream in(sink.str());
  const SessionLog log = read_session_log(in);
  REQUIRE(log.events.size() == run.log.events.size());
  const ReplayResult r = replay_session_log(log);
  CHECK(r.identical);
  CHECK(r.logged_hash == r.replayed_hash);
  CHECK(r.logged_state_hash == r.replayed_state_hash);
  CHECK_FALSE(r.first_mismatch);

  // A tampered log is caught.
  SessionLog tampered = log;
  tampered.events[42].payload["objects"] = json::array();
  const ReplayResult bad = replay_session_log(tampered);
  CHECK_FALSE(bad.identical);
  REQUIRE(bad.first_mismatch);
  CHECK(*bad.first_mismatch == 42);
}

TEST_CASE("event hashes ignore latency and nothing else") {
  const ScriptedRun run = default_harness().run(happy_path_script());
  std::vector<SessionEvent> events = run.log.events;
  const std::string h = event_sequence_hash(events);
  CHECK(h.size() == 64);
  for (auto& e : events) e.latency_ms = 123.0;
  CHECK(event_sequence_hash(events) == h);
  events[3].t_ms += 1;
  CHECK(event_sequence_hash(events) != h);
  CHECK(event_sequence_hash(run.log.events) == h);
}

TEST_CASE("console selection and the spoken ordinal change state identically") {
  Harness h = default_harness();
  h.mock.noise.extra_distractors = 2;
  const ClientCommand segment{ClientCommand::Kind::utterance, "segment the surgical instruments", 0};
  const Driven spoken = drive(h, {{1, segment}, {3, {ClientCommand::Kind::utterance, "the third one", 0}}}, 6);
  const Driven console = drive(h, {{1, segment}, {3, parse_client_command({{"select", 3}})}}, 6);

  auto selected = [](const Driven& d) {
    for (const auto& e : d.events)
      if (e.kind == "mask_selected") return e.payload;
    return json();
  };
  REQUIRE_FALSE(selected(spoken).is_null());
  CHECK(selected(spoken) == selected(console));
  CHECK(selected(spoken)["index"] == 3);

  auto comparable = [](const SessionState& s) {
    json j = session_state_to_json(s);
    j.erase("history");
    return j;
  };
  CHECK(comparable(spoken.state) == comparable(console.state));
  CHECK(spoken.state.history.size() == console.state.history.size());
  CHECK(spoken.masks == console.masks);
}

TEST_CASE("stop clears tracking and returns to interactive mode") {
  const Harness h = default_harness();
  const Driven d = drive(h,
                         {{2, {ClientCommand::Kind::utterance, "segment the surgical instruments", 0}},
                          {4, {ClientCommand::Kind::utterance, "the first one, label it suction", 0}},
                          {6, parse_client_command({{"stop", true}})}},
                         8);
  CHECK(d.state.current_module == ModuleName::InteractiveMode);
  CHECK(d.state.inputs.tracked.empty());
  CHECK(d.masks.empty());
  CHECK(d.events.back().kind == "frame");
  CHECK(d.events.back().payload["objects"].empty());
}

TEST_CASE("failed tools surface as agent text without state changes") {
  const Harness h = default_harness();
  const Driven d = drive(h,
                         {{1, {ClientCommand::Kind::utterance, "segment the xyzzy", 0}},
                          {2, {ClientCommand::Kind::utterance, "hello", 0}}},
                         3);
  const auto it = std::find_if(d.events.begin(), d.events.end(),
                               [](const SessionEvent& e) { return e.kind == "agent_text"; });
  REQUIRE(it != d.events.end());
  CHECK(it->payload["outcome"] == "tool_failure");
  CHECK(it->payload["module_after"] == "InteractiveMode");
  CHECK(d.state.inputs.active_query.empty());
}

TEST_CASE("session configuration JSON") {
  SessionConfig c;
  c.ranking.page_size = 4;
  c.cursor.radius_px = 5;
  c.fps = 25;
  const SessionConfig back = session_config_from_json(session_config_to_json(c));
  CHECK(back.ranking.page_size == 4);
  CHECK(back.cursor.radius_px == 5);
  CHECK(back.fps == 25);
  CHECK(session_config_to_json(back) == session_config_to_json(c));

  CHECK_THROWS_AS(session_config_from_json({{"cursour", json::object()}}), ConfigError);
  CHECK_THROWS_AS(session_config_from_json({{"cursor", {{"radius", 3}}}}), ConfigError);
  CHECK_THROWS_AS(session_config_from_json({{"cursor", {{"radius_px", "big"}}}}), ConfigError);
  CHECK_NOTHROW(session_config_from_json(json::object()));
}

TEST_CASE("script parsing and validation") {
  const auto s = parse_script("{\"frame\":0,\"utterance\":\"hello\"}\n\n  \n{\"frame\":3,\"utterance\":\"stop\"}\n");
  REQUIRE(s.size() == 2);
  CHECK(s[1].frame == 3);
  CHECK(s[1].utterance == "stop");
  CHECK_THROWS_AS(parse_script("{\"frame\":0}\n"), ScriptError);
  CHECK_THROWS_AS(parse_script("hello\n"), ScriptError);

  const FrameInfo f{10, 8, 8};
  CHECK_NOTHROW(validate_script(s, f));
  CHECK_THROWS_AS(validate_script(std::vector<ScriptEntry>{{4, "a"}, {2, "b"}}, f), ScriptError);
  CHECK_THROWS_AS(validate_script(std::vector<ScriptEntry>{{10, "a"}}, f), ScriptError);
  CHECK_THROWS_AS(validate_script(std::vector<ScriptEntry>{{-1, "a"}}, f), ScriptError);

  // A bad script is refused before anything runs.
  std::ostringstream sink;
  CHECK_THROWS_AS(default_harness().run({{500, "hello"}}, &sink), ScriptError);
  CHECK(sink.str().empty());
}

TEST_CASE("client commands") {
  CHECK(parse_client_command({{"utterance", "the first one"}}).kind == ClientCommand::Kind::utterance);
  CHECK(parse_client_command({{"select", 2}}).index == 2);
  CHECK(parse_client_command({{"stop", true}}).kind == ClientCommand::Kind::stop);
  CHECK_THROWS_AS(parse_client_command({{"select", "2"}}), ParseError);
  CHECK_THROWS_AS(parse_client_command({{"utterance", "  "}}), ParseError);
  CHECK_THROWS_AS(parse_client_command({{"dance", 1}}), ParseError);
  CHECK_THROWS_AS(parse_client_command({{"select", 1}, {"stop", true}}), ParseError);
  CHECK_THROWS_AS(parse_client_command(json::array()), ParseError);
}

TEST_CASE("event validation") {
  SessionEvent e;
  e.kind = "click";
  e.payload = {{"x", 1}, {"y", 2}, {"occupancy", 0.7}};
  CHECK_NOTHROW(validate_event(e));
  e.kind = "teleport";
  CHECK_THROWS_AS(validate_event(e), ProtocolError);
  e.kind = "click";
  e.payload.erase("y");
  CHECK_THROWS_AS(validate_event(e), ProtocolError);
  CHECK(event_kinds().size() == 10);
  CHECK(is_frame_kind("frame"));
  CHECK(is_frame_kind("cursor_moved"));
  CHECK_FALSE(is_frame_kind("click"));
}

TEST_CASE("engine preconditions") {
  const Harness h = default_harness();
  CHECK_THROWS_AS(SessionEngine(h.config, BackendSet{}, h.frames(), nullptr), ConfigError);
  CHECK_THROWS_AS(SessionEngine(h.config, make_mock_backends(h.truth()), FrameInfo{}, nullptr), ConfigError);
  SessionEngine engine(h.config, make_mock_backends(h.truth()), h.frames(), [](const SessionEvent&) {});
  engine.begin_frame(3);
  engine.process_frame();
  CHECK_THROWS_AS(engine.begin_frame(2), OrderingError);
  CHECK_THROWS_AS(engine.begin_frame(h.spec.frames), RangeError);
  CHECK_THROWS_AS(mock_backends_for(SessionHeader{}), ConfigError);
}

}  // TEST_SUITE
