// scope: command-line entry point.
//
//   scope run     --frames DIR|synthetic --script FILE --backends mock|URL --seed N --log out.jsonl
//   scope replay  --log FILE
//   scope eval    --pred DIR --gt DIR --out report.txt|report.json
//   scope serve   --port P
//   scope synth   --seed N --out DIR
//   scope mock-server --port P

#include <CLI11.hpp>

#include <algorithm>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <thread>

#include "scope/errors.hpp"
#include "scope/http_backends.hpp"
#include "scope/live.hpp"
#include "scope/metrics.hpp"
#include "scope/mock_backends.hpp"
#include "scope/session.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

volatile std::sig_atomic_t g_interrupted = 0;
void on_signal(int) { g_interrupted = 1; }

void ensure_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

void wait_for_signal() {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
}

struct SceneOptions {
  std::uint64_t seed = 7;
  int frames = 0;
  int instruments = 0;
};

scope::SceneSpec scene_from_options(const SceneOptions& o) {
  scope::SceneSpec spec = scope::default_session_scene();
  if (o.frames > 0) spec.frames = o.frames;
  if (o.instruments > 0) spec.instruments = o.instruments;
  return spec;
}

struct MockFlags {
  int distractors = 0;
  double truth_score = 0.9;
  bool drift = false;

  scope::MockOptions options() const {
    scope::MockOptions m;
    m.noise.extra_distractors = distractors;
    m.noise.truth_score = truth_score;
    m.propagation = drift ? scope::PropagationMode::drift : scope::PropagationMode::oracle;
    return m;
  }
};

void add_mock_flags(CLI::App* cmd, MockFlags& f) {
  cmd->add_option("--distractors", f.distractors, "Extra distractor candidates from the mock segmenter");
  cmd->add_option("--truth-score", f.truth_score, "Confidence the mock segmenter gives true masks");
  cmd->add_flag("--drift", f.drift, "Mock propagation erodes masks over time");
}

int cmd_run(const std::string& frames_arg, const std::string& script_path, const std::string& backends_arg,
            const SceneOptions& scene_opts, bool seed_given, const std::string& log_path,
            const std::string& config_path, const std::string& landmarks_path, const std::string& masks_dir,
            const MockFlags& mock, int timeout_ms) {
  scope::SessionConfig config;
  if (!config_path.empty()) config = scope::load_session_config(config_path);

  scope::SessionHeader header;
  header.frames = frames_arg;
  header.seed = scene_opts.seed;
  header.mock = mock.options();
  header.config = scope::session_config_to_json(config);

  scope::FrameInfo frames;
  if (frames_arg == "synthetic") {
    header.scene = scene_from_options(scene_opts);
    frames = {header.scene->frames, header.scene->width, header.scene->height};
  } else {
    frames = scope::directory_frame_info(frames_arg);
    const fs::path scene_file = fs::path(frames_arg) / "scene.json";
    if (fs::exists(scene_file)) {
      std::ifstream in(scene_file);
      const json j = json::parse(in);
      header.scene = scope::scene_spec_from_json(j.at("spec"));
      const auto seed = j.at("seed").get<std::uint64_t>();
      if (seed_given && seed != scene_opts.seed) {
        std::cerr << "note: using seed " << seed << " from " << scene_file.string() << "\n";
      }
      header.seed = seed;
      if (header.scene->frames != frames.count) {
        throw scope::ConfigError("scene.json describes " + std::to_string(header.scene->frames) +
                                 " frames but the directory has " + std::to_string(frames.count));
      }
    }
  }

  scope::BackendSet backends;
  if (backends_arg == "mock") {
    backends = scope::mock_backends_for(header);
  } else {
    backends = scope::make_http_backends(backends_arg, timeout_ms);
  }

  const auto script = script_path.empty() ? scope::happy_path_script() : scope::load_script(script_path);
  std::ofstream log_out;
  if (!log_path.empty()) {
    ensure_parent(log_path);
    log_out.open(log_path);
    if (!log_out) throw scope::Error("cannot write " + log_path);
  }
  const auto run = scope::run_scripted_session(frames, script, config, backends, header,
                                               log_path.empty() ? nullptr : &log_out);

  if (!landmarks_path.empty()) {
    ensure_parent(landmarks_path);
    std::ofstream out(landmarks_path);
    for (const auto& r : run.landmarks) out << scope::landmark_record_to_json(r).dump() << '\n';
  }
  if (!masks_dir.empty()) {
    for (const auto& [id, masks] : run.masks) {
      const auto& obj = run.objects.at(id);
      const fs::path dir = fs::path(masks_dir) / obj.label;
      fs::create_directories(dir);
      for (std::size_t k = 0; k < masks.size(); ++k) {
        scope::save_mask_file(dir / scope::frame_file_name(obj.start_frame + static_cast<int>(k)), masks[k]);
      }
    }
  }

  std::cout << "events: " << run.log.events.size() << "\n";
  std::cout << "event hash: " << scope::event_sequence_hash(run.log.events) << "\n";
  std::cout << "final module: " << scope::to_string(run.final_state.current_module) << "\n";
  for (const auto& [id, obj] : run.objects) {
    std::cout << "object " << id << ": " << obj.label << " (" << obj.kind << ") from frame " << obj.start_frame << "\n";
  }
  return 0;
}

int cmd_replay(const std::string& log_path) {
  const auto log = scope::read_session_log(fs::path(log_path));
  const auto r = scope::replay_session_log(log);
  std::cout << "events: " << r.events << "\n";
  std::cout << "logged hash:   " << r.logged_hash << "\n";
  std::cout << "replayed hash: " << r.replayed_hash << "\n";
  std::cout << "logged state:   " << r.logged_state_hash << "\n";
  std::cout << "replayed state: " << r.replayed_state_hash << "\n";
  if (r.identical) {
    std::cout << "replay: identical\n";
    return 0;
  }
  std::cout << "replay: MISMATCH";
  if (r.first_mismatch) std::cout << " at event " << *r.first_mismatch;
  std::cout << "\n";
  return 1;
}

int cmd_eval(const std::string& pred_dir, const std::string& gt_dir, const std::string& out_path,
             const std::string& label, const std::string& method, const std::string& log_path,
             std::optional<double> iters, std::optional<double> secs) {
  std::vector<fs::path> truth_files;
  for (const auto& e : fs::directory_iterator(gt_dir)) {
    if (e.path().extension() == ".json" && e.path().filename().string().rfind("frame_", 0) == 0) {
      truth_files.push_back(e.path());
    }
  }
  if (truth_files.empty()) throw scope::EmptyInputError("no frame_*.json masks in " + gt_dir);
  std::sort(truth_files.begin(), truth_files.end());

  std::vector<scope::FramePair> pairs;
  std::size_t missing = 0;
  for (const auto& t : truth_files) {
    scope::Mask truth = scope::load_mask_file(t);
    const fs::path p = fs::path(pred_dir) / t.filename();
    if (!fs::exists(p)) {
      // Frames before the object was selected carry no prediction.
      ++missing;
      continue;
    }
    pairs.push_back({scope::load_mask_file(p), std::move(truth)});
  }
  if (pairs.empty()) throw scope::EmptyInputError("no predicted masks match the truth frames");

  scope::ReportRow row;
  row.label = label;
  row.method = method;
  row.dsc = scope::dice(pairs.front());
  try {
    row.asd = scope::asd(pairs.front());
  } catch (const scope::UndefinedMetricError&) {
  }
  const auto means = scope::sequence_means(pairs);
  row.mdsc = means.mdsc;
  row.masd = means.masd;
  if (!log_path.empty()) {
    const auto log = scope::read_session_log(fs::path(log_path));
    const auto stats = scope::iteration_stats_from_events(log.events);
    if (!stats.empty()) {
      const auto s = scope::summarize_iterations(stats);
      row.iters = s.mean_iterations;
      row.secs = s.mean_seconds;
    }
  }
  if (iters) row.iters = iters;
  if (secs) row.secs = secs;

  const std::vector<scope::ReportRow> rows{row};
  std::string text;
  if (fs::path(out_path).extension() == ".json") {
    text = scope::render_report_json(rows).dump(2) + "\n";
  } else {
    text = scope::render_report_text(rows);
  }
  if (out_path.empty() || out_path == "-") {
    std::cout << text;
  } else {
    std::ofstream(out_path) << text;
  }
  std::cerr << "frames evaluated: " << pairs.size() << " (skipped without prediction: " << missing
            << ", ASD undefined: " << means.asd_excluded << ")\n";
  return 0;
}

int cmd_synth(const SceneOptions& o, const std::string& out_dir) {
  const auto scene = scope::generate_synthetic_scene(o.seed, scene_from_options(o));
  scope::write_scene_frames(scene, out_dir);
  const fs::path truth = fs::path(out_dir) / "truth";
  for (int i = 0; i < scene.spec.instruments; ++i) {
    const fs::path shaft_dir = truth / ("instrument_" + std::to_string(i));
    const fs::path tip_dir = truth / ("tip_" + std::to_string(i));
    fs::create_directories(shaft_dir);
    fs::create_directories(tip_dir);
    for (int f = 0; f < scene.frame_count(); ++f) {
      scope::save_mask_file(shaft_dir / scope::frame_file_name(f), scene.shafts[i][f]);
      scope::save_mask_file(tip_dir / scope::frame_file_name(f), scene.tips[i][f]);
    }
  }
  fs::create_directories(truth / "anatomy");
  for (int f = 0; f < scene.frame_count(); ++f) {
    scope::save_mask_file(truth / "anatomy" / scope::frame_file_name(f), scene.anatomy[f]);
  }
  std::cout << "wrote " << scene.frame_count() << " frames to " << out_dir << "\n";
  return 0;
}

int cmd_serve(const std::string& host, int port, const SceneOptions& o, double fps, const std::string& config_path,
              const std::string& log_path, const MockFlags& mock) {
  scope::SessionConfig config;
  if (!config_path.empty()) config = scope::load_session_config(config_path);
  config.fps = fps;
  scope::SessionHeader header;
  header.seed = o.seed;
  header.scene = scene_from_options(o);
  header.mock = mock.options();
  header.config = scope::session_config_to_json(config);
  const scope::FrameInfo frames{header.scene->frames, header.scene->width, header.scene->height};

  std::ofstream log_out;
  if (!log_path.empty()) log_out.open(log_path);
  scope::EventHub hub(config.event_buffer);
  scope::LiveSession session(config, scope::mock_backends_for(header), frames, hub, header,
                             log_path.empty() ? nullptr : &log_out);
  scope::EventServer server(hub, [&session](const scope::ClientCommand& c) { session.enqueue(c); });
  const int bound = server.start(host, port);
  session.start();
  std::cout << "serving session events on ws://" << host << ":" << bound << "/events" << std::endl;
  wait_for_signal();
  session.stop();
  hub.close();
  server.stop();
  return 0;
}

int cmd_mock_server(const std::string& host, int port, const SceneOptions& o, const MockFlags& mock) {
  auto truth = std::make_shared<const scope::SceneTruth>(scope::generate_synthetic_scene(o.seed, scene_from_options(o)));
  scope::BackendServer server(scope::make_mock_backends(truth, mock.options()));
  const int bound = server.start(host, port);
  std::cout << "mock backends listening on http://" << host << ":" << bound << std::endl;
  wait_for_signal();
  server.stop();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Speech/text-guided perception session orchestrator"};
  app.require_subcommand(1);

  SceneOptions scene;
  MockFlags mock;

  auto* run = app.add_subcommand("run", "Run a scripted session and write its event log");
  std::string frames = "synthetic", script, backends = "mock", log, config, landmarks, masks_out;
  int timeout_ms = 5000;
  run->add_option("--frames", frames, "Frame directory or 'synthetic'");
  run->add_option("--script", script, "JSONL {frame, utterance}; default: the happy-path script");
  run->add_option("--backends", backends, "'mock' or an http:// base URL");
  auto* seed_opt = run->add_option("--seed", scene.seed, "Synthetic scene seed");
  run->add_option("--scene-frames", scene.frames, "Synthetic scene length");
  run->add_option("--instruments", scene.instruments, "Synthetic instrument count");
  run->add_option("--log", log, "Session log (JSONL)");
  run->add_option("--config", config, "Session configuration (JSON)");
  run->add_option("--landmarks", landmarks, "Per-frame tip landmarks (JSONL)");
  run->add_option("--masks-out", masks_out, "Write tracked masks as DIR/<label>/frame_%06d.json");
  run->add_option("--timeout-ms", timeout_ms, "HTTP backend timeout");
  add_mock_flags(run, mock);

  auto* replay = app.add_subcommand("replay", "Re-run a logged session with mock backends and compare");
  std::string replay_log;
  replay->add_option("--log", replay_log, "Session log")->required();

  auto* eval = app.add_subcommand("eval", "Score predicted masks against ground truth");
  std::string pred, gt, out = "-", label = "object", method = "scope", eval_log;
  std::optional<double> iters, secs;
  eval->add_option("--pred", pred, "Predicted mask directory")->required();
  eval->add_option("--gt", gt, "Ground-truth mask directory")->required();
  eval->add_option("--out", out, "Report file (.json for JSON, else text; '-' for stdout)");
  eval->add_option("--label", label, "Row label");
  eval->add_option("--method", method, "Method name");
  eval->add_option("--log", eval_log, "Session log to take #Iter. and Time from");
  eval->add_option("--iters", iters, "Mean display iterations");
  eval->add_option("--secs", secs, "Mean seconds per iteration");

  auto* serve = app.add_subcommand("serve", "Run a live synthetic session with a WebSocket event endpoint");
  std::string host = "127.0.0.1", serve_log, serve_config;
  int port = 8765;
  double fps = 10.0;
  serve->add_option("--port", port, "Listen port");
  serve->add_option("--host", host, "Listen address");
  serve->add_option("--seed", scene.seed, "Synthetic scene seed");
  serve->add_option("--scene-frames", scene.frames, "Synthetic scene length");
  serve->add_option("--fps", fps, "Frame rate");
  serve->add_option("--config", serve_config, "Session configuration (JSON)");
  serve->add_option("--log", serve_log, "Session log (JSONL)");
  add_mock_flags(serve, mock);

  auto* synth = app.add_subcommand("synth", "Write a synthetic scene (frames, scene.json, truth masks)");
  std::string synth_out;
  synth->add_option("--seed", scene.seed, "Scene seed");
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--scene-frames", scene.frames, "Scene length");
  synth->add_option("--instruments", scene.instruments, "Instrument count");

  auto* mock_server = app.add_subcommand("mock-server", "Serve the mock backends over HTTP");
  int mock_port = 8080;
  mock_server->add_option("--port", mock_port, "Listen port (0 picks one)");
  mock_server->add_option("--host", host, "Listen address");
  mock_server->add_option("--seed", scene.seed, "Synthetic scene seed");
  mock_server->add_option("--scene-frames", scene.frames, "Synthetic scene length");
  mock_server->add_option("--instruments", scene.instruments, "Synthetic instrument count");
  add_mock_flags(mock_server, mock);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      return cmd_run(frames, script, backends, scene, seed_opt->count() > 0, log, config, landmarks, masks_out, mock,
                     timeout_ms);
    }
    if (*replay) return cmd_replay(replay_log);
    if (*eval) return cmd_eval(pred, gt, out, label, method, eval_log, iters, secs);
    if (*serve) return cmd_serve(host, port, scene, fps, serve_config, serve_log, mock);
    if (*synth) return cmd_synth(scene, synth_out);
    if (*mock_server) return cmd_mock_server(host, mock_port, scene, mock);
  } catch (const scope::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
