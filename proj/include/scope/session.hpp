#pragma once

// Session orchestration: the per-session agent loop, per-frame propagation,
// tip tracking and click detection, the append-only event log, and replay.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scope/agent.hpp"
#include "scope/candidates.hpp"
#include "scope/metrics.hpp"
#include "scope/mock_backends.hpp"
#include "scope/scene.hpp"
#include "scope/virtual_cursor.hpp"

namespace scope {

struct SessionConfig {
  RankConfig ranking;
  int expansion_count = 3;
  CursorConfig cursor;
  WorkflowConfig workflow = default_workflow_config();
  double fps = 30.0;  // virtual clock for t_ms
  std::size_t event_buffer = 256;
};

// {"candidates":{...},"cursor":{...},"agent":{...},"session":{...}}; unknown
// keys throw ConfigError.
nlohmann::json session_config_to_json(const SessionConfig& config);
SessionConfig session_config_from_json(const nlohmann::json& j);
SessionConfig load_session_config(const std::filesystem::path& path);

struct FrameInfo {
  int count = 0;
  int width = 0;
  int height = 0;
};

// Sorted image files (pgm, ppm, png, jpg) in `dir`. Dimensions come from the
// first PGM/PPM header or from a scene.json next to the frames. Throws
// ConfigError for an empty directory.
FrameInfo directory_frame_info(const std::filesystem::path& dir);

// Scene used by `scope run --frames synthetic` and `scope serve`: one
// instrument with two scheduled surface contacts.
SceneSpec default_session_scene();

struct ScriptEntry {
  int frame = 0;
  std::string utterance;
};

// JSONL {"frame":int,"utterance":string}. Blank lines are skipped.
std::vector<ScriptEntry> parse_script(const std::string& text);
std::vector<ScriptEntry> load_script(const std::filesystem::path& path);
// Frames must be non-decreasing and inside the source. Throws ScriptError.
void validate_script(std::span<const ScriptEntry> script, const FrameInfo& frames);
// Greeting, instrument segmentation and labeling, tip segmentation and lock.
std::vector<ScriptEntry> happy_path_script();

struct ClientCommand {
  enum class Kind { utterance, select, stop };
  Kind kind = Kind::utterance;
  std::string text;
  int index = 0;
};

// {"utterance":"..."}, {"select":n} or {"stop":true}. Throws ParseError.
ClientCommand parse_client_command(const nlohmann::json& j);

const std::vector<std::string>& event_kinds();
// frame and cursor_moved may be dropped under backpressure; all others not.
bool is_frame_kind(const std::string& kind);

struct SessionEvent {
  std::uint64_t seq = 0;
  int frame = 0;
  std::int64_t t_ms = 0;
  std::string kind;
  nlohmann::json payload = nlohmann::json::object();
  std::optional<double> latency_ms;  // wall time, excluded from hashes

  bool operator==(const SessionEvent& o) const {
    return seq == o.seq && frame == o.frame && t_ms == o.t_ms && kind == o.kind && payload == o.payload;
  }
};

nlohmann::json event_to_json(const SessionEvent& e);
SessionEvent event_from_json(const nlohmann::json& j);
// Checks the kind and its fixed payload keys. Throws ProtocolError.
void validate_event(const SessionEvent& e);

struct SessionHeader {
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::string frames = "synthetic";
  std::optional<SceneSpec> scene;
  MockOptions mock;
  std::vector<ScriptEntry> script;
  std::vector<BackendDescriptor> backends;
};

nlohmann::json header_to_json(const SessionHeader& h);
SessionHeader header_from_json(const nlohmann::json& j);

struct SessionLog {
  SessionHeader header;
  std::vector<SessionEvent> events;
  std::ostream* sink = nullptr;  // receives each line as it is appended
};

// Starts a log; writes the header line to the sink if one is given.
SessionLog open_session_log(SessionHeader header, std::ostream* sink = nullptr);
// Requires (frame, seq) strictly greater than the last event's; writes and
// flushes the line. Throws OrderingError.
void append_log_event(SessionLog& log, SessionEvent event);
SessionLog read_session_log(std::istream& in);
SessionLog read_session_log(const std::filesystem::path& path);

// BLAKE2b-256 of the canonical event lines, latency excluded. Hex.
std::string event_sequence_hash(std::span<const SessionEvent> events);
// Final session view rebuilt from events alone.
nlohmann::json fold_events(std::span<const SessionEvent> events);
std::string json_hash(const nlohmann::json& j);

// One entry per mask_selected: the candidate pages shown since the previous
// selection and their mean dispatch-to-display latency.
std::vector<IterationStats> iteration_stats_from_events(std::span<const SessionEvent> events);

struct LandmarkRecord {
  int frame = 0;
  int instrument = 0;
  TipLandmark landmark;
};
nlohmann::json landmark_record_to_json(const LandmarkRecord& r);

// The single-writer session core. Commands and frames are applied in the
// order they are given; every state change is reported through the sink.
class SessionEngine {
 public:
  using Sink = std::function<void(const SessionEvent&)>;

  SessionEngine(SessionConfig config, BackendSet backends, FrameInfo frames, Sink sink);

  // Sets the current frame. Frames must not go backwards.
  void begin_frame(int frame);
  // Per-frame work for the current frame: mask events, tip tracking, cursor
  // and click detection.
  void process_frame();
  // Runs one command through the agent at the current frame.
  StepResult command(const ClientCommand& cmd);

  const SessionState& agent_state() const { return state_; }
  int current_frame() const { return frame_; }
  // Tracked masks for `frame`, keyed by object id.
  std::map<int, Mask> masks_at(int frame) const;
  // Per-frame masks of one object from its start frame on.
  const std::vector<Mask>* object_masks(int id) const;
  std::optional<TipLandmark> tip() const { return tip_ ? std::optional(tip_->landmark) : std::nullopt; }
  const std::vector<LandmarkRecord>& landmarks() const { return landmarks_; }
  const ClickDetectorState& click_detector() const { return detector_; }
  const FrameInfo& frames() const { return frames_; }

 private:
  struct Track {
    int id = 0;
    int start_frame = 0;
    std::vector<Mask> masks;
  };
  struct TipState {
    int object_id = 0;  // the shaft being followed
    TipLandmark landmark;
    std::optional<CursorPoint> cursor;
  };
  struct Staged {
    std::vector<std::pair<std::string, nlohmann::json>> events;
    std::vector<Track> tracks;
    std::optional<TipState> tip;
    bool clear_all = false;
    std::optional<ClickDetectorState> detector;
    std::optional<double> latency_ms;
  };

  void register_tools();
  void emit(const std::string& kind, nlohmann::json payload, std::optional<double> latency = std::nullopt);
  void emit_agent_text(const StepResult& r, const std::string& query);
  Track propagate_object(int id, const Mask& mask, int start_frame) const;
  TrackedObject commit_object(SessionState& s, const Mask& mask, const std::string& label, const std::string& kind);
  const Mask* mask_for(int id, int frame) const;
  void on_click(const CursorPoint& cursor);

  SessionConfig config_;
  BackendSet backends_;
  FrameInfo frames_;
  Sink sink_;
  Agent agent_;
  ToolRegistry tools_;
  SessionState state_;
  std::map<int, Track> tracks_;
  std::optional<TipState> tip_;
  ClickDetectorState detector_;
  std::vector<LandmarkRecord> landmarks_;
  Staged staged_;
  int frame_ = 0;
  std::uint64_t seq_ = 0;
};

struct ScriptedRun {
  SessionLog log;
  SessionState final_state;
  std::map<int, std::vector<Mask>> masks;  // object id -> masks from start frame
  std::map<int, TrackedObject> objects;
  std::vector<LandmarkRecord> landmarks;
};

// Validates the script, then for each frame: applies that frame's utterances,
// then the per-frame work.
ScriptedRun run_scripted_session(const FrameInfo& frames, std::span<const ScriptEntry> script,
                                 const SessionConfig& config, const BackendSet& backends, SessionHeader header,
                                 std::ostream* sink = nullptr);

// Mock backends for a header's scene and options. Throws ConfigError when the
// header has no scene.
BackendSet mock_backends_for(const SessionHeader& header);

struct ReplayResult {
  bool identical = false;
  std::string logged_hash;
  std::string replayed_hash;
  std::string logged_state_hash;
  std::string replayed_state_hash;
  std::size_t events = 0;
  std::optional<std::size_t> first_mismatch;
};

// Re-runs the header's script against mock backends and compares.
ReplayResult replay_session_log(const SessionLog& log);

}  // namespace scope
