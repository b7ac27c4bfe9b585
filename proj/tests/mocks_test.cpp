#include <doctest.h>

#include "scope/errors.hpp"
#include "scope/metrics.hpp"
#include "scope/mock_backends.hpp"

using namespace scope;
using nlohmann::json;

namespace {

const SceneTruth& scene() {
  static const SceneTruth t = generate_synthetic_scene(7, SceneSpec{});
  return t;
}

json respond(const std::string& q) { return json::parse(mock_llm_respond(q, "", {})); }

}  // namespace

TEST_SUITE("mocks") {

TEST_CASE("text segmentation returns the truth family plus a background blob") {
  const auto c = mock_segment_text("surgical instruments", 0, scene());
  REQUIRE(c.size() == 4);
  double best = 0;
  for (const auto& s : c) best = std::max(best, iou(s.mask, scene().shafts[0][0]));
  CHECK(best == 1.0);
  CHECK(c[0].score == 0.9);
  CHECK(c[1].score == 0.7);
  CHECK(c[2].score == 0.6);
  CHECK(c[3].score == 0.5);
  CHECK(c[3].mask.area() > scene().frame_area() * 8 / 10);

  const auto tip = mock_segment_text("tip of suction", 5, scene());
  REQUIRE_FALSE(tip.empty());
  CHECK(tip[0].mask == scene().tips[0][5]);
  CHECK(mock_segment_text("anatomy", 5, scene())[0].mask == scene().anatomy[5]);
  CHECK(mock_segment_text("xyzzy", 0, scene()).empty());
  CHECK_THROWS_AS(mock_segment_text("instruments", 100, scene()), RangeError);

  SegmentNoise noisy;
  noisy.extra_distractors = 6;
  noisy.truth_score = 0.3;
  const auto n = mock_segment_text("instruments", 0, scene(), noisy);
  CHECK(n.size() == 10);
  for (std::size_t i = 4; i < n.size(); ++i) CHECK(n[i].score > noisy.truth_score);
}

TEST_CASE("prompt classes") {
  CHECK(classify_prompt("Tip of Forceps") == PromptClass::tip);
  CHECK(classify_prompt("gray instruments") == PromptClass::instrument);
  CHECK(classify_prompt("tissue surface") == PromptClass::anatomy);
  CHECK(classify_prompt("banana") == PromptClass::unknown);
}

TEST_CASE("point segmentation picks the object under the point") {
  const auto& t = scene();
  const auto anatomy_px = t.anatomy[0].foreground().front();
  CHECK(mock_segment_point({anatomy_px, true}, 0, t) == t.anatomy[0]);
  // Shaft pixels away from the anatomy.
  const auto shaft_px = t.shafts[0][0].foreground().front();
  if (!t.anatomy[0].at(shaft_px.x, shaft_px.y)) CHECK(mock_segment_point({shaft_px, true}, 0, t) == t.shafts[0][0]);
  CHECK(mock_segment_point({{0, 0}, true}, 0, t).is_empty());
  CHECK(mock_segment_point({anatomy_px, false}, 0, t).is_empty());
}

TEST_CASE("oracle propagation reproduces the truth") {
  const auto& t = scene();
  const auto out = mock_propagate(t.shafts[0][10], 10, 99, t, PropagationMode::oracle);
  REQUIRE(out.size() == 89);
  for (std::size_t k = 0; k < out.size(); ++k) CHECK(dice(out[k], t.shafts[0][11 + k]) == 1.0);
  CHECK(mock_propagate(t.anatomy[0], 0, 1, t, PropagationMode::oracle).size() == 1);
  CHECK_THROWS_AS(mock_propagate(t.anatomy[0], 5, 5, t, PropagationMode::oracle), RangeError);
  CHECK_THROWS_AS(mock_propagate(t.anatomy[0], 0, 100, t, PropagationMode::oracle), RangeError);
}

TEST_CASE("drift propagation degrades monotonically") {
  const auto& t = scene();
  const auto out = mock_propagate(t.anatomy[0], 0, 99, t, PropagationMode::drift);
  double previous = 1.0;
  for (std::size_t k = 0; k < out.size(); ++k) {
    const double d = dice(out[k], t.anatomy[k + 1]);
    CHECK(d <= previous);
    previous = d;
  }
  CHECK(previous < 0.99);
}

TEST_CASE("conversational mock pattern table") {
  auto seg = respond("segment the surgical instruments");
  CHECK(seg["action"]["tool"] == "segment");
  CHECK(seg["action"]["args"] == json{{"query", "surgical instruments"}});

  auto third = respond("the third one");
  CHECK(third["action"] == json{{"tool", "select"}, {"args", {{"index", 3}}}});
  auto labeled = respond("the third one, label it suction");
  CHECK(labeled["action"]["args"] == json{{"index", 3}, {"label", "suction"}});
  CHECK(respond("Second.")["action"]["args"]["index"] == 2);

  CHECK(respond("none of these")["action"]["tool"] == "next_page");
  CHECK(respond("stop")["action"]["tool"] == "stop");
  CHECK(respond("track it")["action"]["tool"] == "track");
  CHECK(respond("it has no tip")["action"]["args"] == json{{"mode", "medial"}});
  CHECK(respond("call it forceps")["action"]["args"] == json{{"label", "forceps"}});
  CHECK(respond("this is the surface")["action"]["tool"] == "calibrate");

  auto chat = respond("how are you");
  CHECK_FALSE(chat.contains("action"));
  CHECK(chat["text_response"].is_string());
  CHECK_FALSE(respond("hello there").contains("action"));
}

TEST_CASE("mocks are pure") {
  MockLlm llm;
  LlmRequest r;
  r.query = "segment the anatomy";
  CHECK(llm.complete(r) == llm.complete(r));
  r.task = "expand";
  r.query = "forceps";
  CHECK(json::parse(llm.complete(r)) == json{{"alternatives", {"grasper", "tweezers"}}});
  r.expansion_count = 1;
  CHECK(json::parse(llm.complete(r))["alternatives"].size() == 1);

  MockSpeechToText stt;
  const std::string audio = "  Segment THE anatomy ";
  CHECK(stt.transcribe(std::span(reinterpret_cast<const std::uint8_t*>(audio.data()), audio.size())) ==
        "segment the anatomy");

  auto truth = std::make_shared<const SceneTruth>(scene());
  const BackendSet b = make_mock_backends(truth);
  CHECK(b.descriptors.size() == 6);
  CHECK(b.depth->estimate(3) == scene().depth[3]);
  CHECK_THROWS_AS(b.depth->estimate(-1), RangeError);
}

}  // TEST_SUITE
