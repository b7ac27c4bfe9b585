#include "scope/session.hpp"

#include <sodium.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <regex>
#include <set>
#include <sstream>

#include "scope/errors.hpp"
#include "scope/geometry.hpp"

namespace scope {

using nlohmann::json;

namespace {

template <typename T>
void read_key(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

void reject_unknown(const json& obj, std::initializer_list<const char*> keys, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, v] : obj.items()) {
    if (std::none_of(keys.begin(), keys.end(), [&](const char* known) { return k == known; })) {
      throw ConfigError("unknown configuration key " + where + "." + k);
    }
  }
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

}  // namespace

json session_config_to_json(const SessionConfig& c) {
  return {{"candidates",
           {{"overlap_threshold", c.ranking.overlap_threshold},
            {"page_size", c.ranking.page_size},
            {"expansion_count", c.expansion_count},
            {"background_area_fraction", c.ranking.background_area_fraction},
            {"background_penalty", c.ranking.background_penalty}}},
          {"cursor",
           {{"offset_px", c.cursor.offset_px},
            {"radius_px", c.cursor.radius_px},
            {"band_halfwidth_frac", c.cursor.band_halfwidth_frac},
            {"occupancy_threshold", c.cursor.occupancy_threshold},
            {"required_consecutive", c.cursor.required_consecutive},
            {"band_center", c.cursor.band_center}}},
          {"agent", {{"history_limit", c.workflow.history_limit}}},
          {"session", {{"fps", c.fps}, {"event_buffer", c.event_buffer}}}};
}

SessionConfig session_config_from_json(const json& j) {
  SessionConfig c;
  try {
    reject_unknown(j, {"candidates", "cursor", "agent", "session", "workflow"}, "config");
    if (j.contains("workflow")) c.workflow = workflow_config_from_json(j.at("workflow"));
    if (j.contains("candidates")) {
      const json& k = j.at("candidates");
      reject_unknown(k,
                     {"overlap_threshold", "page_size", "expansion_count", "background_area_fraction",
                      "background_penalty"},
                     "candidates");
      read_key(k, "overlap_threshold", c.ranking.overlap_threshold);
      read_key(k, "page_size", c.ranking.page_size);
      read_key(k, "expansion_count", c.expansion_count);
      read_key(k, "background_area_fraction", c.ranking.background_area_fraction);
      read_key(k, "background_penalty", c.ranking.background_penalty);
    }
    if (j.contains("cursor")) {
      const json& k = j.at("cursor");
      reject_unknown(k,
                     {"offset_px", "radius_px", "band_halfwidth_frac", "occupancy_threshold", "required_consecutive",
                      "band_center"},
                     "cursor");
      read_key(k, "offset_px", c.cursor.offset_px);
      read_key(k, "radius_px", c.cursor.radius_px);
      read_key(k, "band_halfwidth_frac", c.cursor.band_halfwidth_frac);
      read_key(k, "occupancy_threshold", c.cursor.occupancy_threshold);
      read_key(k, "required_consecutive", c.cursor.required_consecutive);
      read_key(k, "band_center", c.cursor.band_center);
    }
    if (j.contains("agent")) {
      reject_unknown(j.at("agent"), {"history_limit"}, "agent");
      read_key(j.at("agent"), "history_limit", c.workflow.history_limit);
    }
    if (j.contains("session")) {
      reject_unknown(j.at("session"), {"fps", "event_buffer"}, "session");
      read_key(j.at("session"), "fps", c.fps);
      read_key(j.at("session"), "event_buffer", c.event_buffer);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid configuration: ") + e.what());
  }
  if (c.ranking.page_size < 1) throw ConfigError("candidates.page_size must be positive");
  if (c.expansion_count < 0) throw ConfigError("candidates.expansion_count must not be negative");
  if (!(c.ranking.overlap_threshold > 0.0 && c.ranking.overlap_threshold < 1.0)) {
    throw ConfigError("candidates.overlap_threshold must lie in (0, 1)");
  }
  if (c.cursor.offset_px < 0) throw ConfigError("cursor.offset_px must not be negative");
  if (c.cursor.radius_px < 1) throw ConfigError("cursor.radius_px must be at least 1");
  if (!(c.cursor.occupancy_threshold > 0.0 && c.cursor.occupancy_threshold <= 1.0)) {
    throw ConfigError("cursor.occupancy_threshold must lie in (0, 1]");
  }
  if (c.cursor.required_consecutive < 1) throw ConfigError("cursor.required_consecutive must be at least 1");
  if (!(c.fps > 0)) throw ConfigError("session.fps must be positive");
  if (c.event_buffer < 1) throw ConfigError("session.event_buffer must be positive");
  return c;
}

SessionConfig load_session_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return session_config_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not JSON: " + e.what());
  }
}

FrameInfo directory_frame_info(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ConfigError("frame directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string ext = lower(entry.path().extension().string());
    if (ext == ".pgm" || ext == ".ppm" || ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(entry.path());
  }
  if (files.empty()) throw ConfigError("no frames in " + dir.string());
  std::sort(files.begin(), files.end());

  FrameInfo info;
  info.count = static_cast<int>(files.size());
  const std::string ext = lower(files.front().extension().string());
  if (ext == ".pgm" || ext == ".ppm") {
    std::ifstream in(files.front(), std::ios::binary);
    std::string magic;
    in >> magic;
    auto next_int = [&in]() {
      in >> std::ws;
      while (in.peek() == '#') {
        std::string comment;
        std::getline(in, comment);
        in >> std::ws;
      }
      int v = 0;
      in >> v;
      return v;
    };
    info.width = next_int();
    info.height = next_int();
  }
  if (info.width <= 0 || info.height <= 0) {
    const auto scene = dir / "scene.json";
    if (!std::filesystem::exists(scene)) throw ConfigError("cannot determine frame size in " + dir.string());
    std::ifstream in(scene);
    const SceneSpec spec = scene_spec_from_json(json::parse(in).at("spec"));
    info.width = spec.width;
    info.height = spec.height;
  }
  return info;
}

SceneSpec default_session_scene() {
  SceneSpec s;
  s.contacts = {{30, 37}, {70, 77}};
  return s;
}

std::vector<ScriptEntry> parse_script(const std::string& text) {
  std::vector<ScriptEntry> out;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      out.push_back({j.at("frame").get<int>(), j.at("utterance").get<std::string>()});
    } catch (const json::exception& e) {
      throw ScriptError("script line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<ScriptEntry> load_script(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ScriptError("cannot open script " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_script(ss.str());
}

void validate_script(std::span<const ScriptEntry> script, const FrameInfo& frames) {
  int last = 0;
  for (std::size_t i = 0; i < script.size(); ++i) {
    const auto& e = script[i];
    if (e.frame < 0 || e.frame >= frames.count) {
      throw ScriptError("script entry " + std::to_string(i + 1) + " references frame " + std::to_string(e.frame) +
                        " but the source has " + std::to_string(frames.count) + " frames");
    }
    if (e.frame < last) throw ScriptError("script frames must not decrease (entry " + std::to_string(i + 1) + ")");
    last = e.frame;
  }
}

std::vector<ScriptEntry> happy_path_script() {
  return {{0, "hello"},
          {2, "segment the surgical instruments"},
          {4, "the first one, label it suction"},
          {6, "segment the tip of suction"},
          {8, "the first one"}};
}

ClientCommand parse_client_command(const json& j) {
  if (!j.is_object() || j.size() != 1) throw ParseError("command must be an object with one key");
  ClientCommand c;
  if (j.contains("utterance") && j["utterance"].is_string()) {
    c.kind = ClientCommand::Kind::utterance;
    c.text = j["utterance"].get<std::string>();
    if (c.text.find_first_not_of(" \t\r\n") == std::string::npos) throw ParseError("empty utterance");
  } else if (j.contains("select") && j["select"].is_number_integer()) {
    c.kind = ClientCommand::Kind::select;
    c.index = j["select"].get<int>();
  } else if (j.contains("stop")) {
    c.kind = ClientCommand::Kind::stop;
  } else {
    throw ParseError("unknown command " + j.dump());
  }
  return c;
}

namespace {

const std::map<std::string, std::vector<std::string>>& payload_schemas() {
  static const std::map<std::string, std::vector<std::string>> schemas = {
      {"frame", {"objects"}},
      {"candidates_page", {"query", "prompts", "degraded", "page_index", "page_count", "exhausted", "candidates"}},
      {"mask_selected", {"index", "query", "area", "mask"}},
      {"label_assigned", {"id", "label", "kind"}},
      {"tip_locked", {"id", "instrument", "x", "y", "source", "low_confidence"}},
      {"cursor_moved", {"x", "y", "clamped", "occupancy", "hits", "armed", "landmark"}},
      {"click", {"x", "y", "occupancy"}},
      {"anatomy_segmented", {"id", "label", "x", "y", "area", "mask"}},
      {"agent_text", {"text", "q", "response", "module_before", "module_after", "outcome"}},
      {"error", {"code", "message"}},
  };
  return schemas;
}

}  // namespace

const std::vector<std::string>& event_kinds() {
  static const std::vector<std::string> kinds = {"frame",      "candidates_page",  "mask_selected", "label_assigned",
                                                 "tip_locked", "cursor_moved",     "click",         "anatomy_segmented",
                                                 "agent_text", "error"};
  return kinds;
}

bool is_frame_kind(const std::string& kind) { return kind == "frame" || kind == "cursor_moved"; }

json event_to_json(const SessionEvent& e) {
  json j{{"seq", e.seq}, {"frame", e.frame}, {"t_ms", e.t_ms}, {"kind", e.kind}, {"payload", e.payload}};
  if (e.latency_ms) j["latency_ms"] = *e.latency_ms;
  return j;
}

SessionEvent event_from_json(const json& j) {
  try {
    SessionEvent e;
    e.seq = j.at("seq").get<std::uint64_t>();
    e.frame = j.at("frame").get<int>();
    e.t_ms = j.at("t_ms").get<std::int64_t>();
    e.kind = j.at("kind").get<std::string>();
    e.payload = j.at("payload");
    if (j.contains("latency_ms")) e.latency_ms = j.at("latency_ms").get<double>();
    return e;
  } catch (const json::exception& ex) {
    throw ProtocolError(std::string("malformed event: ") + ex.what());
  }
}

void validate_event(const SessionEvent& e) {
  const auto& schemas = payload_schemas();
  const auto it = schemas.find(e.kind);
  if (it == schemas.end()) throw ProtocolError("unknown event kind " + e.kind);
  if (!e.payload.is_object()) throw ProtocolError(e.kind + " payload must be an object");
  for (const auto& key : it->second) {
    if (!e.payload.contains(key)) throw ProtocolError(e.kind + " payload missing " + key);
  }
  for (const auto& [k, v] : e.payload.items()) {
    if (std::find(it->second.begin(), it->second.end(), k) == it->second.end()) {
      throw ProtocolError(e.kind + " payload has unexpected key " + k);
    }
  }
}

namespace {

std::string_view to_string(PropagationMode m) { return m == PropagationMode::oracle ? "oracle" : "drift"; }

PropagationMode propagation_from_string(const std::string& s) {
  if (s == "oracle") return PropagationMode::oracle;
  if (s == "drift") return PropagationMode::drift;
  throw ConfigError("unknown propagation mode " + s);
}

}  // namespace

json header_to_json(const SessionHeader& h) {
  json script = json::array();
  for (const auto& s : h.script) script.push_back({{"frame", s.frame}, {"utterance", s.utterance}});
  json backends = json::array();
  for (const auto& b : h.backends) {
    backends.push_back(
        {{"kind", to_string(b.kind)}, {"endpoint", b.endpoint}, {"timeout_ms", b.timeout_ms}, {"version", b.version}});
  }
  return {{"type", "header"},
          {"config", h.config},
          {"seed", h.seed},
          {"frames", h.frames},
          {"scene", h.scene ? scene_spec_to_json(*h.scene) : json(nullptr)},
          {"mock",
           {{"extra_distractors", h.mock.noise.extra_distractors},
            {"truth_score", h.mock.noise.truth_score},
            {"propagation", to_string(h.mock.propagation)}}},
          {"script", script},
          {"backends", backends}};
}

SessionHeader header_from_json(const json& j) {
  try {
    if (j.value("type", "") != "header") throw ProtocolError("first log line is not a header");
    SessionHeader h;
    h.config = j.at("config");
    h.seed = j.at("seed").get<std::uint64_t>();
    h.frames = j.at("frames").get<std::string>();
    if (!j.at("scene").is_null()) h.scene = scene_spec_from_json(j.at("scene"));
    const json& m = j.at("mock");
    h.mock.noise.extra_distractors = m.at("extra_distractors").get<int>();
    h.mock.noise.truth_score = m.at("truth_score").get<double>();
    h.mock.propagation = propagation_from_string(m.at("propagation").get<std::string>());
    for (const auto& s : j.at("script")) h.script.push_back({s.at("frame").get<int>(), s.at("utterance").get<std::string>()});
    for (const auto& b : j.at("backends")) {
      h.backends.push_back({backend_kind_from_string(b.at("kind").get<std::string>()), b.at("endpoint").get<std::string>(),
                            b.at("timeout_ms").get<int>(), b.at("version").get<std::string>()});
    }
    return h;
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed log header: ") + e.what());
  }
}

SessionLog open_session_log(SessionHeader header, std::ostream* sink) {
  SessionLog log;
  log.header = std::move(header);
  log.sink = sink;
  if (sink) {
    *sink << header_to_json(log.header).dump() << '\n';
    sink->flush();
  }
  return log;
}

void append_log_event(SessionLog& log, SessionEvent event) {
  if (!log.events.empty()) {
    const auto& last = log.events.back();
    if (std::pair(event.frame, event.seq) <= std::pair(last.frame, last.seq)) {
      throw OrderingError("event (frame " + std::to_string(event.frame) + ", seq " + std::to_string(event.seq) +
                          ") does not follow (frame " + std::to_string(last.frame) + ", seq " +
                          std::to_string(last.seq) + ")");
    }
  }
  if (log.sink) {
    *log.sink << event_to_json(event).dump() << '\n';
    log.sink->flush();
  }
  log.events.push_back(std::move(event));
}

SessionLog read_session_log(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ProtocolError("empty session log");
  SessionLog log;
  try {
    log.header = header_from_json(json::parse(line));
  } catch (const json::parse_error& e) {
    throw ProtocolError(std::string("log header is not JSON: ") + e.what());
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      // A torn final line from a crash is tolerated; anything else is not.
      if (in.peek() == std::char_traits<char>::eof()) break;
      throw ProtocolError(std::string("corrupt log line: ") + e.what());
    }
    append_log_event(log, event_from_json(j));
  }
  return log;
}

SessionLog read_session_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ProtocolError("cannot open log " + path.string());
  return read_session_log(in);
}

std::string json_hash(const json& j) {
  if (sodium_init() < 0) throw Error("libsodium failed to initialise");
  const std::string text = j.dump();
  unsigned char digest[crypto_generichash_BYTES];
  crypto_generichash(digest, sizeof digest, reinterpret_cast<const unsigned char*>(text.data()), text.size(), nullptr,
                     0);
  char hex[crypto_generichash_BYTES * 2 + 1];
  sodium_bin2hex(hex, sizeof hex, digest, sizeof digest);
  return hex;
}

std::string event_sequence_hash(std::span<const SessionEvent> events) {
  if (sodium_init() < 0) throw Error("libsodium failed to initialise");
  crypto_generichash_state st;
  crypto_generichash_init(&st, nullptr, 0, crypto_generichash_BYTES);
  for (const auto& e : events) {
    SessionEvent copy = e;
    copy.latency_ms.reset();
    const std::string line = event_to_json(copy).dump() + "\n";
    crypto_generichash_update(&st, reinterpret_cast<const unsigned char*>(line.data()), line.size());
  }
  unsigned char digest[crypto_generichash_BYTES];
  crypto_generichash_final(&st, digest, sizeof digest);
  char hex[crypto_generichash_BYTES * 2 + 1];
  sodium_bin2hex(hex, sizeof hex, digest, sizeof digest);
  return hex;
}

json fold_events(std::span<const SessionEvent> events) {
  json s{{"frame", 0},          {"last_seq", 0},     {"module", "InteractiveMode"}, {"objects", json::array()},
         {"labels", json::object()}, {"candidates", nullptr}, {"tip", nullptr},  {"cursor", nullptr},
         {"clicks", 0},         {"anatomy", nullptr}, {"errors", 0},        {"exchanges", 0}};
  for (const auto& e : events) {
    s["frame"] = e.frame;
    s["last_seq"] = e.seq;
    const json& p = e.payload;
    if (e.kind == "frame") {
      s["objects"] = p.at("objects");
    } else if (e.kind == "candidates_page") {
      s["candidates"] = p;
    } else if (e.kind == "mask_selected") {
      s["candidates"] = nullptr;
    } else if (e.kind == "label_assigned") {
      s["labels"][std::to_string(p.at("id").get<int>())] = p.at("label");
    } else if (e.kind == "tip_locked") {
      s["tip"] = p;
    } else if (e.kind == "cursor_moved") {
      s["cursor"] = p;
    } else if (e.kind == "click") {
      s["clicks"] = s["clicks"].get<int>() + 1;
    } else if (e.kind == "anatomy_segmented") {
      s["anatomy"] = p;
    } else if (e.kind == "agent_text") {
      s["module"] = p.at("module_after");
      if (!p.at("q").is_null()) s["exchanges"] = s["exchanges"].get<int>() + 1;
      if (p.at("module_after") == "InteractiveMode" && p.at("module_before") != "InteractiveMode") {
        s["tip"] = nullptr;
        s["cursor"] = nullptr;
        s["candidates"] = nullptr;
      }
    } else if (e.kind == "error") {
      s["errors"] = s["errors"].get<int>() + 1;
    }
  }
  return s;
}

std::vector<IterationStats> iteration_stats_from_events(std::span<const SessionEvent> events) {
  std::vector<IterationStats> out;
  int pages = 0;
  double latency_sum = 0.0;
  for (const auto& e : events) {
    if (e.kind == "candidates_page") {
      ++pages;
      latency_sum += e.latency_ms.value_or(0.0) / 1000.0;
    } else if (e.kind == "mask_selected" && pages > 0) {
      out.push_back({pages, latency_sum / pages});
      pages = 0;
      latency_sum = 0.0;
    }
  }
  return out;
}

json landmark_record_to_json(const LandmarkRecord& r) {
  return {{"frame", r.frame},
          {"instrument", r.instrument},
          {"x", r.landmark.point.x},
          {"y", r.landmark.point.y},
          {"source", to_string(r.landmark.source)},
          {"stale", r.landmark.stale}};
}

namespace {

json landmark_json(const TipLandmark& t) {
  return {{"x", t.point.x}, {"y", t.point.y}, {"source", to_string(t.source)}, {"stale", t.stale}};
}

// "tip of suction", "the suction tip" -> "suction"; empty when not a tip query.
std::string tip_parent(const std::string& query) {
  static const std::regex of_re(R"(^tip of (?:the )?(.+)$)");
  static const std::regex suffix_re(R"(^(?:the )?(.+) tip$)");
  std::smatch m;
  if (std::regex_match(query, m, of_re) || std::regex_match(query, m, suffix_re)) return m[1].str();
  return "";
}

}  // namespace

SessionEngine::SessionEngine(SessionConfig config, BackendSet backends, FrameInfo frames, Sink sink)
    : config_(std::move(config)),
      backends_(std::move(backends)),
      frames_(frames),
      sink_(std::move(sink)),
      agent_(config_.workflow, backends_.llm) {
  if (frames_.count < 1 || frames_.width < 1 || frames_.height < 1) throw ConfigError("empty frame source");
  if (!backends_.segment_text || !backends_.segment_point || !backends_.propagate || !backends_.depth) {
    throw ConfigError("session needs all backends");
  }
  // Depth is normalized per frame, so the value range is 1 until calibrated.
  detector_ = make_click_detector(config_.cursor, config_.cursor.band_center, config_.cursor.band_halfwidth_frac);
  register_tools();
}

void SessionEngine::emit(const std::string& kind, json payload, std::optional<double> latency) {
  SessionEvent e;
  e.seq = ++seq_;
  e.frame = frame_;
  e.t_ms = std::llround(frame_ * 1000.0 / config_.fps);
  e.kind = kind;
  e.payload = std::move(payload);
  e.latency_ms = latency;
  if (sink_) sink_(e);
}

void SessionEngine::begin_frame(int frame) {
  if (frame < frame_ && seq_ > 0) throw OrderingError("frames must not go backwards");
  if (frame < 0 || frame >= frames_.count) throw RangeError("frame " + std::to_string(frame) + " outside the source");
  frame_ = frame;
  state_.inputs.frame_index = frame;
}

const Mask* SessionEngine::mask_for(int id, int frame) const {
  const auto it = tracks_.find(id);
  if (it == tracks_.end()) return nullptr;
  const int k = frame - it->second.start_frame;
  if (k < 0 || k >= static_cast<int>(it->second.masks.size())) return nullptr;
  return &it->second.masks[static_cast<std::size_t>(k)];
}

std::map<int, Mask> SessionEngine::masks_at(int frame) const {
  std::map<int, Mask> out;
  for (const auto& [id, t] : tracks_) {
    if (const Mask* m = mask_for(id, frame)) out.emplace(id, *m);
  }
  return out;
}

const std::vector<Mask>* SessionEngine::object_masks(int id) const {
  const auto it = tracks_.find(id);
  return it == tracks_.end() ? nullptr : &it->second.masks;
}

SessionEngine::Track SessionEngine::propagate_object(int id, const Mask& mask, int start_frame) const {
  Track t{id, start_frame, {mask}};
  if (start_frame + 1 < frames_.count) {
    auto rest = backends_.propagate->propagate(mask, start_frame, frames_.count - 1);
    if (static_cast<int>(rest.size()) != frames_.count - 1 - start_frame) {
      throw ProtocolError("propagation returned " + std::to_string(rest.size()) + " masks");
    }
    for (auto& m : rest) t.masks.push_back(std::move(m));
  }
  return t;
}

TrackedObject SessionEngine::commit_object(SessionState& s, const Mask& mask, const std::string& label,
                                           const std::string& kind) {
  // Candidate masks belong to the frame they were computed on; tracking
  // starts there so later frames come from propagation.
  const int start = s.inputs.candidates ? s.inputs.candidates_frame : frame_;
  TrackedObject obj{s.inputs.next_object_id++, label, kind, mask, start};
  staged_.tracks.push_back(propagate_object(obj.id, mask, start));
  s.inputs.tracked.push_back(obj);
  s.inputs.candidates.reset();
  s.inputs.pending.reset();
  s.inputs.active_query.clear();
  staged_.events.emplace_back("label_assigned", json{{"id", obj.id}, {"label", label}, {"kind", kind}});
  return obj;
}

void SessionEngine::register_tools() {
  tools_.add("segment", [this](const json& args, SessionState& s) {
    const std::string query = normalize_prompt(args.at("query").get<std::string>());
    const ExpansionResult expanded = expand_query(query, *backends_.llm, config_.expansion_count);
    const CollectResult collected = collect_candidates(expanded.prompts, frame_, *backends_.segment_text);
    const std::size_t area = static_cast<std::size_t>(frames_.width) * static_cast<std::size_t>(frames_.height);
    CandidatePageState page = rank_and_dedup(collected.candidates, config_.ranking, area);
    if (page.all_candidates().empty()) throw Error("no candidates found for " + query);
    s.inputs.active_query = query;
    s.inputs.candidates = page;
    s.inputs.candidates_frame = frame_;
    s.inputs.pending.reset();

    json cands = json::array();
    int index = 1;
    for (const auto& c : page.page()) {
      cands.push_back({{"index", index++},
                       {"score", c.score},
                       {"area", c.mask.area()},
                       {"source_prompt", c.source_prompt},
                       {"mask", mask_to_json(c.mask)}});
    }
    staged_.events.emplace_back("candidates_page", json{{"query", query},
                                                        {"prompts", expanded.prompts},
                                                        {"degraded", expanded.degraded},
                                                        {"page_index", page.page_index()},
                                                        {"page_count", page.page_count()},
                                                        {"exhausted", false},
                                                        {"candidates", cands}});
    std::string text = std::to_string(page.page().size()) + " candidates shown.";
    if (expanded.degraded) text += " Query expansion was unavailable.";
    return ToolResult{text};
  });

  tools_.add("next_page", [this](const json&, SessionState& s) {
    if (!s.inputs.candidates) throw Error("no candidates are displayed");
    const CandidatePageState page = next_page(*s.inputs.candidates);
    s.inputs.candidates = page;
    s.inputs.pending.reset();
    json cands = json::array();
    int index = 1;
    for (const auto& c : page.page()) {
      cands.push_back({{"index", index++},
                       {"score", c.score},
                       {"area", c.mask.area()},
                       {"source_prompt", c.source_prompt},
                       {"mask", mask_to_json(c.mask)}});
    }
    staged_.events.emplace_back("candidates_page", json{{"query", s.inputs.active_query},
                                                        {"prompts", json::array()},
                                                        {"degraded", false},
                                                        {"page_index", page.page_index()},
                                                        {"page_count", page.page_count()},
                                                        {"exhausted", page.exhausted()},
                                                        {"candidates", cands}});
    if (page.exhausted()) return ToolResult{"No more candidates. Please describe the object differently."};
    return ToolResult{std::to_string(page.page().size()) + " more candidates shown."};
  });

  tools_.add("select", [this](const json& args, SessionState& s) {
    if (!s.inputs.candidates || s.inputs.candidates->exhausted()) throw Error("no candidates are displayed");
    const int index = args.at("index").get<int>();
    const auto page = s.inputs.candidates->page();
    if (index < 1 || index > static_cast<int>(page.size())) {
      throw RangeError("candidate " + std::to_string(index) + " is not displayed");
    }
    const Mask mask = page[static_cast<std::size_t>(index - 1)].mask;
    const std::string query = s.inputs.active_query;
    const std::string parent = tip_parent(query);
    std::optional<std::string> label;
    if (args.contains("label")) label = normalize_prompt(args.at("label").get<std::string>());

    staged_.events.emplace_back("mask_selected",
                                json{{"index", index}, {"query", query}, {"area", mask.area()}, {"mask", mask_to_json(mask)}});

    if (classify_prompt(query) == PromptClass::tip) {
      // The tip belongs to a tracked instrument: the named one, else the latest.
      const TrackedObject* shaft_obj = nullptr;
      for (const auto& t : s.inputs.tracked) {
        if (t.kind != "instrument") continue;
        if (!parent.empty() && t.label == parent) shaft_obj = &t;
      }
      if (shaft_obj == nullptr) {
        for (const auto& t : s.inputs.tracked) {
          if (t.kind == "instrument") shaft_obj = &t;
        }
      }
      if (shaft_obj == nullptr) throw Error("select the instrument before its tip");
      const int shaft_id = shaft_obj->id;
      const int at = s.inputs.candidates_frame;
      const Mask* shaft = mask_for(shaft_id, at);
      if (shaft == nullptr) throw Error("the instrument is not tracked in the candidates' frame");
      const TipLandmark lm = tip_landmark(*shaft, mask, at);
      const TrackedObject tip = commit_object(s, mask, label.value_or(query), "tip");
      staged_.tip = TipState{shaft_id, lm, std::nullopt};
      staged_.events.emplace_back("tip_locked", json{{"id", tip.id},
                                                     {"instrument", shaft_id},
                                                     {"x", lm.point.x},
                                                     {"y", lm.point.y},
                                                     {"source", to_string(lm.source)},
                                                     {"low_confidence", lm.low_confidence}});
      return ToolResult{"Tip locked."};
    }
    if (label) {
      const std::string kind = classify_prompt(query) == PromptClass::anatomy ? "anatomy" : "instrument";
      commit_object(s, mask, *label, kind);
      return ToolResult{"Tracking " + *label + "."};
    }
    s.inputs.pending = PendingSelection{index, mask};
    return ToolResult{"What should I call it?"};
  });

  tools_.add("label", [this](const json& args, SessionState& s) {
    const std::string label = normalize_prompt(args.at("label").get<std::string>());
    if (s.inputs.pending) {
      const std::string kind = classify_prompt(s.inputs.active_query) == PromptClass::anatomy ? "anatomy" : "instrument";
      const Mask mask = s.inputs.pending->mask;
      commit_object(s, mask, label, kind);
      return ToolResult{"Tracking " + label + "."};
    }
    if (s.inputs.tracked.empty()) throw Error("nothing is selected to label");
    auto& last = s.inputs.tracked.back();
    last.label = label;
    staged_.events.emplace_back("label_assigned", json{{"id", last.id}, {"label", label}, {"kind", last.kind}});
    return ToolResult{};
  });

  tools_.add("track", [this](const json& args, SessionState& s) {
    const std::string mode = args.value("mode", "");
    if (!mode.empty() && mode != "medial") throw Error("unknown tracking mode " + mode);
    if (s.inputs.pending) {
      const Mask mask = s.inputs.pending->mask;
      const std::string kind = classify_prompt(s.inputs.active_query) == PromptClass::anatomy ? "anatomy" : "instrument";
      const std::string label = s.inputs.active_query;
      commit_object(s, mask, label, kind);
    }
    if (mode == "medial") {
      const TrackedObject* shaft_obj = nullptr;
      for (const auto& t : s.inputs.tracked) {
        if (t.kind == "instrument") shaft_obj = &t;
      }
      if (shaft_obj == nullptr) throw Error("no instrument is tracked");
      const int shaft_id = shaft_obj->id;
      const Mask* shaft = mask_for(shaft_id, frame_);
      if (shaft == nullptr) {
        // Committed in this same call.
        for (const auto& t : staged_.tracks) {
          if (t.id == shaft_id) shaft = &t.masks.front();
        }
      }
      if (shaft == nullptr) throw Error("the instrument is not tracked in this frame");
      const TipLandmark lm = medial_axis_point(*shaft, frame_);
      staged_.tip = TipState{shaft_id, lm, std::nullopt};
      staged_.events.emplace_back("tip_locked", json{{"id", shaft_id},
                                                     {"instrument", shaft_id},
                                                     {"x", lm.point.x},
                                                     {"y", lm.point.y},
                                                     {"source", to_string(lm.source)},
                                                     {"low_confidence", lm.low_confidence}});
      return ToolResult{"Following the shaft axis."};
    }
    if (s.inputs.tracked.empty()) throw Error("nothing is selected to track");
    return ToolResult{};
  });

  tools_.add("calibrate", [this](const json&, SessionState&) {
    if (!tip_ || !tip_->cursor) throw Error("the cursor is not active yet");
    const DepthMap depth = backends_.depth->estimate(frame_);
    Mask exclude = Mask::empty(frames_.width, frames_.height);
    for (const auto& [id, m] : masks_at(frame_)) exclude = mask_union(exclude, m);
    const DepthBand band = calibrate_band(depth, tip_->cursor->point, config_.cursor.radius_px, exclude,
                                          config_.cursor.band_halfwidth_frac);
    staged_.detector = make_click_detector(config_.cursor, band.center, band.halfwidth);
    std::ostringstream os;
    os.precision(3);
    os << "Surface depth set to " << band.center << ".";
    return ToolResult{os.str()};
  });

  tools_.add("stop", [this](const json&, SessionState& s) {
    s.inputs.candidates.reset();
    s.inputs.pending.reset();
    s.inputs.tracked.clear();
    s.inputs.active_query.clear();
    staged_.clear_all = true;
    return ToolResult{};
  });
}

void SessionEngine::emit_agent_text(const StepResult& r, const std::string& query) {
  emit("agent_text", {{"text", r.reply},
                      {"q", query},
                      {"response", serialize_agent_response(r.response)},
                      {"module_before", to_string(r.module_before)},
                      {"module_after", to_string(r.module_after)},
                      {"outcome", to_string(r.outcome)}});
}

StepResult SessionEngine::command(const ClientCommand& cmd) {
  const auto started = std::chrono::steady_clock::now();
  staged_ = Staged{};
  StepResult r;
  std::string query;
  switch (cmd.kind) {
    case ClientCommand::Kind::utterance:
      query = cmd.text;
      r = agent_.step(state_, query, tools_);
      break;
    case ClientCommand::Kind::select:
      query = "(console) select " + std::to_string(cmd.index);
      r = agent_.apply_action(state_, query, ToolCall{"select", {{"index", cmd.index}}}, tools_);
      break;
    case ClientCommand::Kind::stop:
      query = "(console) stop";
      r = agent_.apply_action(state_, query, ToolCall{"stop", json::object()}, tools_);
      break;
  }

  if (r.executed) {
    if (staged_.clear_all) {
      tracks_.clear();
      tip_.reset();
    }
    for (auto& t : staged_.tracks) tracks_[t.id] = std::move(t);
    if (staged_.tip) tip_ = staged_.tip;
    if (staged_.detector) detector_ = *staged_.detector;
    for (auto& [kind, payload] : staged_.events) {
      std::optional<double> latency;
      if (kind == "candidates_page") {
        latency = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
      }
      emit(kind, std::move(payload), latency);
    }
  }
  staged_ = Staged{};
  state_ = r.state;
  emit_agent_text(r, query);
  return r;
}

void SessionEngine::on_click(const CursorPoint& cursor) {
  const PointPrompt prompt = make_anatomy_prompt(cursor);
  Mask mask = backends_.segment_point->segment(prompt, frame_);
  if (mask.is_empty()) {
    emit("error", {{"code", "empty_anatomy"}, {"message", "no anatomy under the cursor"}});
    return;
  }
  TrackedObject* existing = nullptr;
  for (auto& t : state_.inputs.tracked) {
    if (t.kind == "anatomy" && t.label == "anatomy") existing = &t;
  }
  Track fresh = propagate_object(existing ? existing->id : state_.inputs.next_object_id, mask, frame_);
  int id = fresh.id;
  if (existing) {
    // Keep history before this frame; re-seed from here on.
    Track& old = tracks_[id];
    old.masks.resize(static_cast<std::size_t>(frame_ - old.start_frame));
    for (auto& m : fresh.masks) old.masks.push_back(std::move(m));
  } else {
    state_.inputs.tracked.push_back({id, "anatomy", "anatomy", mask, frame_});
    state_.inputs.next_object_id++;
    tracks_[id] = std::move(fresh);
  }
  emit("anatomy_segmented", {{"id", id},
                             {"label", "anatomy"},
                             {"x", cursor.point.x},
                             {"y", cursor.point.y},
                             {"area", mask.area()},
                             {"mask", mask_to_json(mask)}});
  StepResult note;
  note.reply = "Contact detected. Anatomy segmented.";
  note.module_before = note.module_after = state_.current_module;
  emit("agent_text", {{"text", note.reply},
                      {"q", nullptr},
                      {"response", nullptr},
                      {"module_before", to_string(note.module_before)},
                      {"module_after", to_string(note.module_after)},
                      {"outcome", "ok"}});
}

void SessionEngine::process_frame() {
  json objects = json::array();
  for (const auto& obj : state_.inputs.tracked) {
    if (const Mask* m = mask_for(obj.id, frame_)) {
      objects.push_back({{"id", obj.id}, {"label", obj.label}, {"kind", obj.kind}, {"mask", mask_to_json(*m)}});
    }
  }
  emit("frame", {{"objects", objects}});

  if (!tip_) return;
  const Mask* shaft = mask_for(tip_->object_id, frame_);
  const Mask empty = Mask::empty(frames_.width, frames_.height);
  if (tip_->landmark.frame_index != frame_) {
    try {
      tip_->landmark = track_tip(shaft ? *shaft : empty, tip_->landmark, frame_);
    } catch (const TrackingLostError& e) {
      emit("error", {{"code", "tracking_lost"}, {"message", e.what()}});
      tip_.reset();
      return;
    }
  }
  landmarks_.push_back({frame_, tip_->object_id, tip_->landmark});
  if (shaft == nullptr || tip_->landmark.stale > 0) return;

  PrincipalAxis axis;
  try {
    axis = principal_axis(*shaft);
  } catch (const DegenerateMaskError&) {
    return;
  }
  const CursorPoint cursor =
      cursor_position(tip_->landmark, axis, config_.cursor.offset_px, frames_.width, frames_.height);
  tip_->cursor = cursor;

  std::optional<DepthMap> depth;
  try {
    depth = backends_.depth->estimate(frame_);
  } catch (const BackendError& e) {
    emit("error", {{"code", e.code()}, {"message", e.what()}});
    return;
  }
  const ClickUpdate upd = update_click_state(detector_, *depth, cursor.point, config_.cursor.radius_px);
  detector_ = upd.state;
  emit("cursor_moved", {{"x", cursor.point.x},
                        {"y", cursor.point.y},
                        {"clamped", cursor.clamped},
                        {"occupancy", upd.occupancy},
                        {"hits", upd.state.consecutive_hits},
                        {"armed", upd.state.armed},
                        {"landmark", landmark_json(tip_->landmark)}});
  if (upd.fired) {
    emit("click", {{"x", cursor.point.x}, {"y", cursor.point.y}, {"occupancy", upd.occupancy}});
    on_click(cursor);
  }
}

ScriptedRun run_scripted_session(const FrameInfo& frames, std::span<const ScriptEntry> script,
                                 const SessionConfig& config, const BackendSet& backends, SessionHeader header,
                                 std::ostream* sink) {
  validate_script(script, frames);
  header.script.assign(script.begin(), script.end());
  if (header.config.empty()) header.config = session_config_to_json(config);
  if (header.backends.empty()) header.backends = backends.descriptors;

  ScriptedRun run;
  run.log = open_session_log(std::move(header), sink);
  SessionEngine engine(config, backends, frames, [&run](const SessionEvent& e) { append_log_event(run.log, e); });

  std::size_t next = 0;
  for (int f = 0; f < frames.count; ++f) {
    engine.begin_frame(f);
    while (next < script.size() && script[next].frame == f) {
      engine.command({ClientCommand::Kind::utterance, script[next].utterance, 0});
      ++next;
    }
    engine.process_frame();
  }

  run.final_state = engine.agent_state();
  for (const auto& obj : run.final_state.inputs.tracked) {
    run.objects.emplace(obj.id, obj);
    if (const auto* masks = engine.object_masks(obj.id)) run.masks.emplace(obj.id, *masks);
  }
  run.landmarks = engine.landmarks();
  run.log.sink = nullptr;
  return run;
}

BackendSet mock_backends_for(const SessionHeader& header) {
  if (!header.scene) throw ConfigError("the log has no scene description; mock backends cannot be rebuilt");
  auto truth = std::make_shared<const SceneTruth>(generate_synthetic_scene(header.seed, *header.scene));
  return make_mock_backends(truth, header.mock);
}

ReplayResult replay_session_log(const SessionLog& log) {
  const SessionHeader& h = log.header;
  if (!h.scene) throw ConfigError("the log has no scene description; cannot replay");
  const SessionConfig config = session_config_from_json(h.config);
  const FrameInfo frames{h.scene->frames, h.scene->width, h.scene->height};
  ScriptedRun again = run_scripted_session(frames, h.script, config, mock_backends_for(h), h);

  ReplayResult r;
  r.events = log.events.size();
  r.logged_hash = event_sequence_hash(log.events);
  r.replayed_hash = event_sequence_hash(again.log.events);
  r.logged_state_hash = json_hash(fold_events(log.events));
  r.replayed_state_hash = json_hash(fold_events(again.log.events));
  const std::size_t n = std::min(log.events.size(), again.log.events.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (!(log.events[i] == again.log.events[i])) {
      r.first_mismatch = i;
      break;
    }
  }
  if (!r.first_mismatch && log.events.size() != again.log.events.size()) r.first_mismatch = n;
  r.identical = !r.first_mismatch && r.logged_hash == r.replayed_hash && r.logged_state_hash == r.replayed_state_hash;
  return r;
}

}  // namespace scope
