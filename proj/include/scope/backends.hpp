#pragma once

// The tool layer: abstract model services the pipeline calls into. Every
// service speaks the same request envelope {kind, version, payload}; in-process
// mocks and HTTP clients implement these interfaces interchangeably.
//
// Implementations must be safe to call concurrently.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "scope/depth_map.hpp"
#include "scope/mask.hpp"

namespace scope {

inline constexpr const char* kProtocolVersion = "1.0";

enum class BackendKind { stt, llm, segment_text, segment_point, propagate, depth };

std::string_view to_string(BackendKind kind);
// Throws ProtocolError on an unknown name.
BackendKind backend_kind_from_string(std::string_view name);
const std::vector<BackendKind>& all_backend_kinds();

struct BackendDescriptor {
  BackendKind kind = BackendKind::llm;
  std::string endpoint = "mock";  // "mock" or an http:// base URL
  int timeout_ms = 5000;
  std::string version = kProtocolVersion;
};

struct ScoredCandidate {
  Mask mask;
  double score = 0.0;
  std::string source_prompt;
  std::string backend_id;
};

struct PointPrompt {
  PixelPoint point;
  bool positive = true;
  bool clamped = false;
};

struct Exchange {
  std::string query;
  std::string response;  // raw structured response text
};

struct LlmRequest {
  std::string task = "respond";  // "respond" or "expand"
  std::string query;
  std::string system_prompt;
  nlohmann::json system_inputs = nlohmann::json::object();
  std::vector<Exchange> history;
  int expansion_count = 3;
};

class SpeechToText {
 public:
  virtual ~SpeechToText() = default;
  virtual std::string transcribe(std::span<const std::uint8_t> audio) = 0;
};

class LlmBackend {
 public:
  virtual ~LlmBackend() = default;
  // Returns the model's raw text output.
  virtual std::string complete(const LlmRequest& request) = 0;
};

class TextSegmenter {
 public:
  virtual ~TextSegmenter() = default;
  virtual std::vector<ScoredCandidate> segment(const std::string& prompt, int frame_index) = 0;
};

class PointSegmenter {
 public:
  virtual ~PointSegmenter() = default;
  virtual Mask segment(const PointPrompt& prompt, int frame_index) = 0;
};

class Propagator {
 public:
  virtual ~Propagator() = default;
  // Masks for frames from_frame+1 .. to_frame inclusive.
  virtual std::vector<Mask> propagate(const Mask& initial, int from_frame, int to_frame) = 0;
};

class DepthEstimator {
 public:
  virtual ~DepthEstimator() = default;
  virtual DepthMap estimate(int frame_index) = 0;
};

struct BackendSet {
  std::shared_ptr<SpeechToText> stt;
  std::shared_ptr<LlmBackend> llm;
  std::shared_ptr<TextSegmenter> segment_text;
  std::shared_ptr<PointSegmenter> segment_point;
  std::shared_ptr<Propagator> propagate;
  std::shared_ptr<DepthEstimator> depth;
  std::vector<BackendDescriptor> descriptors;
};

}  // namespace scope
