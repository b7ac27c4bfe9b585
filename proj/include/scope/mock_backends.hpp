#pragma once

// Deterministic stand-ins for every model service, driven by a SceneTruth.
// All of them are pure functions of their inputs and safe to call
// concurrently.

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "scope/backends.hpp"
#include "scope/scene.hpp"

namespace scope {

struct SegmentNoise {
  int extra_distractors = 0;  // disjoint blobs scored above the truth mask
  double truth_score = 0.9;
};

enum class PromptClass { instrument, tip, anatomy, unknown };
PromptClass classify_prompt(const std::string& prompt);

// Per matching object: truth (truth_score), dilated copy (0.7), half mask
// (0.6); then one near-full-frame background blob (0.5) and any extra
// distractors. Unknown prompt classes yield no candidates.
std::vector<ScoredCandidate> mock_segment_text(const std::string& prompt, int frame_index, const SceneTruth& truth,
                                               const SegmentNoise& noise = {});

// Anatomy if the point falls inside it, else the instrument shaft or tip under
// the point, else an empty mask.
Mask mock_segment_point(const PointPrompt& prompt, int frame_index, const SceneTruth& truth);

enum class PropagationMode { oracle, drift };

// Follows the scene object that best matches `initial` on from_frame. Drift
// mode erodes the followed mask by one pixel per ten frames of distance.
// Throws RangeError for an invalid frame range.
std::vector<Mask> mock_propagate(const Mask& initial, int from_frame, int to_frame, const SceneTruth& truth,
                                 PropagationMode mode);

// Rule-based stand-in for the conversational model. Maps utterance classes to
// structured responses in the agent wire format; unknown utterances get a
// text-only clarification.
std::string mock_llm_respond(const std::string& query, const std::string& system_prompt,
                             std::span<const Exchange> history);
// Synonym-table query expansion: {"alternatives":[...]}.
std::string mock_llm_expand(const std::string& query, int count);

class MockSpeechToText final : public SpeechToText {
 public:
  std::string transcribe(std::span<const std::uint8_t> audio) override;
};

class MockLlm final : public LlmBackend {
 public:
  std::string complete(const LlmRequest& request) override;
};

class MockTextSegmenter final : public TextSegmenter {
 public:
  MockTextSegmenter(std::shared_ptr<const SceneTruth> truth, SegmentNoise noise)
      : truth_(std::move(truth)), noise_(noise) {}
  std::vector<ScoredCandidate> segment(const std::string& prompt, int frame_index) override;

 private:
  std::shared_ptr<const SceneTruth> truth_;
  SegmentNoise noise_;
};

class MockPointSegmenter final : public PointSegmenter {
 public:
  explicit MockPointSegmenter(std::shared_ptr<const SceneTruth> truth) : truth_(std::move(truth)) {}
  Mask segment(const PointPrompt& prompt, int frame_index) override;

 private:
  std::shared_ptr<const SceneTruth> truth_;
};

class MockPropagator final : public Propagator {
 public:
  MockPropagator(std::shared_ptr<const SceneTruth> truth, PropagationMode mode)
      : truth_(std::move(truth)), mode_(mode) {}
  std::vector<Mask> propagate(const Mask& initial, int from_frame, int to_frame) override;

 private:
  std::shared_ptr<const SceneTruth> truth_;
  PropagationMode mode_;
};

class MockDepthEstimator final : public DepthEstimator {
 public:
  explicit MockDepthEstimator(std::shared_ptr<const SceneTruth> truth) : truth_(std::move(truth)) {}
  DepthMap estimate(int frame_index) override;

 private:
  std::shared_ptr<const SceneTruth> truth_;
};

struct MockOptions {
  SegmentNoise noise;
  PropagationMode propagation = PropagationMode::oracle;
};

BackendSet make_mock_backends(std::shared_ptr<const SceneTruth> truth, const MockOptions& options = {});

}  // namespace scope
