#include "scope/mock_backends.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <regex>

#include "scope/candidates.hpp"
#include "scope/errors.hpp"

namespace scope {
namespace {

bool contains_word(const std::string& text, std::initializer_list<const char*> words) {
  return std::any_of(words.begin(), words.end(), [&](const char* w) { return text.find(w) != std::string::npos; });
}

// Left half of the mask's bounding box.
Mask half_mask(const Mask& m) {
  int min_x = m.width(), max_x = -1;
  for (const auto& p : m.foreground()) {
    min_x = std::min(min_x, p.x);
    max_x = std::max(max_x, p.x);
  }
  Bitmap b(m.width(), m.height());
  const int cut = (min_x + max_x) / 2;
  for (const auto& p : m.foreground())
    if (p.x <= cut) b.set(p.x, p.y);
  return Mask::from_bitmap(b);
}

Mask background_blob(int width, int height) {
  Bitmap b(width, height);
  const int margin = std::max(1, width / 20);
  for (int y = 0; y < height; ++y)
    for (int x = margin; x < width; ++x) b.set(x, y);
  return Mask::from_bitmap(b);
}

// Small squares along the bottom edge, away from the instruments.
Mask distractor(int k, int width, int height) {
  Bitmap b(width, height);
  const int size = 5;
  const int per_row = std::max(1, (width - 4) / (size + 3));
  const int x0 = 2 + (k % per_row) * (size + 3);
  const int y0 = height - 2 - size - (k / per_row) * (size + 3);
  for (int y = y0; y < y0 + size; ++y)
    for (int x = x0; x < x0 + size; ++x)
      if (b.contains(x, y)) b.set(x, y);
  return Mask::from_bitmap(b);
}

void check_frame(const SceneTruth& truth, int frame) {
  if (frame < 0 || frame >= truth.frame_count()) {
    throw RangeError("frame " + std::to_string(frame) + " outside scene of " + std::to_string(truth.frame_count()));
  }
}

std::string dump_response(const nlohmann::json& action, const std::string& text) {
  nlohmann::json j{{"text_response", text}};
  if (!action.is_null()) j["action"] = action;
  return j.dump();
}

nlohmann::json action(const std::string& tool, nlohmann::json args = nlohmann::json::object()) {
  return {{"tool", tool}, {"args", std::move(args)}};
}

int ordinal_value(const std::string& word) {
  static const std::map<std::string, int> table{
      {"first", 1}, {"second", 2}, {"third", 3}, {"fourth", 4}, {"fifth", 5}, {"sixth", 6},
      {"1st", 1},   {"2nd", 2},    {"3rd", 3},   {"4th", 4},    {"5th", 5},   {"6th", 6},
      {"one", 1},   {"two", 2},    {"three", 3}, {"four", 4},   {"five", 5},  {"six", 6},
      {"1", 1},     {"2", 2},      {"3", 3},     {"4", 4},      {"5", 5},     {"6", 6},
  };
  auto it = table.find(word);
  return it == table.end() ? 0 : it->second;
}

std::string trim_label(std::string s) {
  s = normalize_prompt(s);
  while (!s.empty() && (s.back() == '.' || s.back() == '!' || s.back() == ',')) s.pop_back();
  return normalize_prompt(s);
}

}  // namespace

PromptClass classify_prompt(const std::string& prompt) {
  const std::string p = normalize_prompt(prompt);
  if (contains_word(p, {"tip"})) return PromptClass::tip;
  if (contains_word(p, {"instrument", "tool", "forceps", "grasper", "tweezer", "suction", "device", "shaft",
                        "scissor", "needle", "probe", "cannula"}))
    return PromptClass::instrument;
  if (contains_word(p, {"anatomy", "tissue", "bone", "eye", "lens", "surface", "organ"})) return PromptClass::anatomy;
  return PromptClass::unknown;
}

std::vector<ScoredCandidate> mock_segment_text(const std::string& prompt, int frame_index, const SceneTruth& truth,
                                               const SegmentNoise& noise) {
  check_frame(truth, frame_index);
  const auto f = static_cast<std::size_t>(frame_index);
  std::vector<Mask> objects;
  switch (classify_prompt(prompt)) {
    case PromptClass::instrument:
      for (const auto& s : truth.shafts) objects.push_back(s[f]);
      break;
    case PromptClass::tip:
      for (const auto& t : truth.tips) objects.push_back(t[f]);
      break;
    case PromptClass::anatomy:
      objects.push_back(truth.anatomy[f]);
      break;
    case PromptClass::unknown:
      return {};
  }

  const std::string id = "mock-segment-text";
  std::vector<ScoredCandidate> out;
  for (const auto& m : objects) {
    out.push_back({m, noise.truth_score, prompt, id});
    out.push_back({dilate(m, 2), 0.7, prompt, id});
    out.push_back({half_mask(m), 0.6, prompt, id});
  }
  out.push_back({background_blob(truth.spec.width, truth.spec.height), 0.5, prompt, id});
  for (int k = 0; k < noise.extra_distractors; ++k) {
    out.push_back({distractor(k, truth.spec.width, truth.spec.height), std::max(0.01, 0.85 - 0.02 * k), prompt, id});
  }
  return out;
}

Mask mock_segment_point(const PointPrompt& prompt, int frame_index, const SceneTruth& truth) {
  check_frame(truth, frame_index);
  const auto f = static_cast<std::size_t>(frame_index);
  const auto [x, y] = prompt.point;
  if (!prompt.positive) return Mask::empty(truth.spec.width, truth.spec.height);
  if (truth.anatomy[f].at_or_background(x, y)) return truth.anatomy[f];
  for (std::size_t i = 0; i < truth.shafts.size(); ++i) {
    if (truth.shafts[i][f].at_or_background(x, y)) return truth.shafts[i][f];
    if (truth.tips[i][f].at_or_background(x, y)) return truth.tips[i][f];
  }
  return Mask::empty(truth.spec.width, truth.spec.height);
}

std::vector<Mask> mock_propagate(const Mask& initial, int from_frame, int to_frame, const SceneTruth& truth,
                                 PropagationMode mode) {
  if (from_frame < 0 || to_frame >= truth.frame_count() || from_frame >= to_frame) {
    throw RangeError("propagation range [" + std::to_string(from_frame) + ", " + std::to_string(to_frame) +
                     "] invalid for " + std::to_string(truth.frame_count()) + " frames");
  }
  const auto f0 = static_cast<std::size_t>(from_frame);

  // Candidate tracks: every shaft, every tip, the anatomy.
  std::vector<const std::vector<Mask>*> tracks;
  for (const auto& s : truth.shafts) tracks.push_back(&s);
  for (const auto& t : truth.tips) tracks.push_back(&t);
  tracks.push_back(&truth.anatomy);

  const std::vector<Mask>* best = nullptr;
  double best_iou = 0.0;
  for (const auto* tr : tracks) {
    const double v = iou(initial, (*tr)[f0]);
    if (v > best_iou) {
      best_iou = v;
      best = tr;
    }
  }

  std::vector<Mask> out;
  for (int f = from_frame + 1; f <= to_frame; ++f) {
    Mask m = best != nullptr ? (*best)[static_cast<std::size_t>(f)] : initial;
    if (mode == PropagationMode::drift) m = erode(m, (f - from_frame) / 10);
    out.push_back(std::move(m));
  }
  return out;
}

std::string mock_llm_expand(const std::string& query, int count) {
  static const std::map<std::string, std::vector<std::string>> synonyms{
      {"surgical instruments", {"surgical tools", "gray instruments", "metal instruments"}},
      {"surgical instrument", {"surgical tool", "gray instrument", "metal instrument"}},
      {"instruments", {"tools", "surgical instruments", "gray instruments"}},
      {"forceps", {"grasper", "tweezers"}},
      {"suction", {"suction tube", "suction cannula"}},
      {"anatomy", {"tissue", "tissue surface"}},
  };
  const std::string q = normalize_prompt(query);
  std::vector<std::string> alts;
  if (auto it = synonyms.find(q); it != synonyms.end()) {
    alts = it->second;
  } else if (q.rfind("tip of ", 0) == 0) {
    const std::string obj = q.substr(7);
    alts = {obj + " tip", "instrument tip", "tool tip"};
  }
  if (static_cast<int>(alts.size()) > count) alts.resize(static_cast<std::size_t>(std::max(count, 0)));
  return nlohmann::json{{"alternatives", alts}}.dump();
}

std::string mock_llm_respond(const std::string& query, const std::string& /*system_prompt*/,
                             std::span<const Exchange> /*history*/) {
  const std::string q = trim_label(query);
  std::smatch m;

  static const std::regex stop_re(R"(^(stop|reset|start over|cancel)$)");
  static const std::regex reject_re(
      R"(^(none of these|none of them|none|no|nope|not these|next|next page|show more|show me more|neither)$)");
  static const std::regex ordinal_re(
      R"(^(?:the\s+|number\s+)?(first|second|third|fourth|fifth|sixth|1st|2nd|3rd|4th|5th|6th|one|two|three|four|five|six|[1-6])(?:\s+one)?(?:\s*,?\s*(?:and\s+)?(?:label|call|name)\s+it\s+(?:as\s+)?(.+))?$)");
  static const std::regex segment_re(R"(^(?:please\s+)?(?:segment|find|show me|highlight|outline)\s+(?:the\s+)?(.+)$)");
  static const std::regex no_tip_re(R"(^(?:it has no tip|no tip|there is no tip|use the shaft)$)");
  static const std::regex track_re(R"(^(?:start\s+)?track(?:ing)?(?:\s+(?:it|them|this))?$)");
  static const std::regex label_re(R"(^(?:label|call|name)\s+it\s+(?:as\s+)?(.+)$)");
  static const std::regex calibrate_re(R"(^(?:calibrate(?: the)?(?: surface)?|this is the surface|surface)$)");
  static const std::regex greet_re(R"(^(hello|hi|hey|good morning)\b.*$)");

  if (std::regex_match(q, stop_re)) return dump_response(action("stop"), "Stopping. Back to interactive mode.");
  if (std::regex_match(q, reject_re)) return dump_response(action("next_page"), "Showing the next candidates.");
  if (std::regex_match(q, m, ordinal_re)) {
    nlohmann::json args{{"index", ordinal_value(m[1].str())}};
    std::string text = "Selected candidate " + std::to_string(args["index"].get<int>()) + ".";
    if (m[2].matched) {
      args["label"] = trim_label(m[2].str());
      text += " Labeled " + args["label"].get<std::string>() + ".";
    }
    return dump_response(action("select", args), text);
  }
  if (std::regex_match(q, m, segment_re)) {
    const std::string target = trim_label(m[1].str());
    return dump_response(action("segment", {{"query", target}}), "Segmenting " + target + " now.");
  }
  if (std::regex_match(q, no_tip_re)) {
    return dump_response(action("track", {{"mode", "medial"}}), "Using a point along the shaft axis.");
  }
  if (std::regex_match(q, track_re)) return dump_response(action("track"), "Tracking.");
  if (std::regex_match(q, m, label_re)) {
    const std::string label = trim_label(m[1].str());
    return dump_response(action("label", {{"label", label}}), "Labeled " + label + ".");
  }
  if (std::regex_match(q, calibrate_re)) return dump_response(action("calibrate"), "Calibrating the surface depth.");
  if (std::regex_match(q, greet_re)) {
    return dump_response(nullptr, "Hello. What would you like me to segment?");
  }
  return dump_response(nullptr, "Sorry, I did not understand. You can ask me to segment something.");
}

std::string MockSpeechToText::transcribe(std::span<const std::uint8_t> audio) {
  return normalize_prompt(std::string(audio.begin(), audio.end()));
}

std::string MockLlm::complete(const LlmRequest& request) {
  if (request.task == "expand") return mock_llm_expand(request.query, request.expansion_count);
  return mock_llm_respond(request.query, request.system_prompt, request.history);
}

std::vector<ScoredCandidate> MockTextSegmenter::segment(const std::string& prompt, int frame_index) {
  return mock_segment_text(prompt, frame_index, *truth_, noise_);
}

Mask MockPointSegmenter::segment(const PointPrompt& prompt, int frame_index) {
  return mock_segment_point(prompt, frame_index, *truth_);
}

std::vector<Mask> MockPropagator::propagate(const Mask& initial, int from_frame, int to_frame) {
  return mock_propagate(initial, from_frame, to_frame, *truth_, mode_);
}

DepthMap MockDepthEstimator::estimate(int frame_index) {
  check_frame(*truth_, frame_index);
  return truth_->depth[static_cast<std::size_t>(frame_index)];
}

BackendSet make_mock_backends(std::shared_ptr<const SceneTruth> truth, const MockOptions& options) {
  BackendSet set;
  set.stt = std::make_shared<MockSpeechToText>();
  set.llm = std::make_shared<MockLlm>();
  set.segment_text = std::make_shared<MockTextSegmenter>(truth, options.noise);
  set.segment_point = std::make_shared<MockPointSegmenter>(truth);
  set.propagate = std::make_shared<MockPropagator>(truth, options.propagation);
  set.depth = std::make_shared<MockDepthEstimator>(truth);
  for (BackendKind k : all_backend_kinds()) set.descriptors.push_back({k, "mock", 5000, kProtocolVersion});
  return set;
}

}  // namespace scope
