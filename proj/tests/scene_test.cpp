#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "scope/errors.hpp"
#include "scope/scene.hpp"

using namespace scope;

TEST_SUITE("scene") {

TEST_CASE("generation is deterministic in the seed") {
  SceneSpec spec;
  spec.contacts = {{10, 14}};
  const SceneTruth a = generate_synthetic_scene(7, spec);
  const SceneTruth b = generate_synthetic_scene(7, spec);
  CHECK(a.frame_count() == 100);
  CHECK(a.shafts == b.shafts);
  CHECK(a.tips == b.tips);
  CHECK(a.anatomy == b.anatomy);
  CHECK(a.depth == b.depth);
  const SceneTruth c = generate_synthetic_scene(8, spec);
  CHECK(c.depth != a.depth);
}

TEST_CASE("masks stay in frame and the motion is rigid") {
  SceneSpec spec;
  spec.rotation_amplitude_deg = 20;
  const SceneTruth t = generate_synthetic_scene(3, spec);
  for (int f = 0; f < t.frame_count(); ++f) {
    const auto& s = t.shafts[0][std::size_t(f)];
    CHECK(s.width() == spec.width);
    CHECK(s.height() == spec.height);
    CHECK_FALSE(s.is_empty());
    CHECK_FALSE(t.tips[0][std::size_t(f)].is_empty());
    CHECK(intersection_area(s, t.tips[0][std::size_t(f)]) == 0);
    // Depth normalized to [0, 1].
    CHECK(t.depth[std::size_t(f)].min_value() == 0.0f);
    CHECK(t.depth[std::size_t(f)].max_value() == 1.0f);
  }
  // Without rotation the shaft area is constant between frames.
  const SceneTruth still = generate_synthetic_scene(3, SceneSpec{});
  for (int f = 1; f < still.frame_count(); ++f)
    CHECK(still.shafts[0][std::size_t(f)].area() == still.shafts[0][0].area());
}

TEST_CASE("two instruments never merge") {
  SceneSpec spec;
  spec.instruments = 2;
  const SceneTruth t = generate_synthetic_scene(11, spec);
  for (int f = 0; f < t.frame_count(); ++f) {
    const auto i = std::size_t(f);
    const Mask a = mask_union(t.shafts[0][i], t.tips[0][i]);
    const Mask b = mask_union(t.shafts[1][i], t.tips[1][i]);
    CHECK(iou(a, b) == 0.0);
    CHECK(intersection_area(dilate(a), b) == 0);
  }
}

TEST_CASE("the tip sits in the surface band exactly during scheduled contacts") {
  SceneSpec spec;
  spec.contacts = {{40, 50}};
  const SceneTruth t = generate_synthetic_scene(5, spec);
  for (int f = 0; f < t.frame_count(); ++f) {
    const auto& tip = t.tips[0][std::size_t(f)];
    const auto& d = t.depth[std::size_t(f)];
    bool all_in_band = true;
    for (const auto& p : tip.foreground()) {
      const float v = d.at(p.x, p.y);
      all_in_band = all_in_band && v >= 0.55f && v <= 0.65f;
    }
    CHECK(t.in_contact(f) == (f >= 40 && f <= 50));
    CHECK(all_in_band == t.in_contact(f));
  }
}

TEST_CASE("invalid specs are rejected") {
  auto bad = [](auto&& edit) {
    SceneSpec s;
    edit(s);
    CHECK_THROWS_AS(generate_synthetic_scene(1, s), ConfigError);
  };
  bad([](SceneSpec& s) { s.frames = 5; });
  bad([](SceneSpec& s) { s.instruments = 0; });
  bad([](SceneSpec& s) { s.width = 16; });
  bad([](SceneSpec& s) { s.contacts = {{20, 10}}; });
  bad([](SceneSpec& s) { s.contacts = {{10, 20}, {15, 30}}; });
  bad([](SceneSpec& s) { s.contacts = {{90, 100}}; });
  bad([](SceneSpec& s) { s.tip_halfwidth = 1.0; });
  bad([](SceneSpec& s) { s.instruments = 12; });  // too crowded to keep apart
}

TEST_CASE("spec json round trip and frame export") {
  SceneSpec spec;
  spec.frames = 12;
  spec.contacts = {{2, 4}, {8, 9}};
  spec.rotation_amplitude_deg = 5;
  const auto j = scene_spec_to_json(spec);
  CHECK(scene_spec_to_json(scene_spec_from_json(j)) == j);

  const SceneTruth t = generate_synthetic_scene(2, spec);
  CHECK(render_frame(t, 0).size() == t.frame_area());
  const auto dir = std::filesystem::temp_directory_path() / "scope_scene_test";
  std::filesystem::remove_all(dir);
  write_scene_frames(t, dir);
  CHECK(std::filesystem::exists(dir / "frame_000000.pgm"));
  CHECK(std::filesystem::exists(dir / "frame_000011.pgm"));
  CHECK(std::filesystem::exists(dir / "scene.json"));
  std::ifstream in(dir / "frame_000000.pgm", std::ios::binary);
  std::string magic;
  in >> magic;
  CHECK(magic == "P5");
  std::filesystem::remove_all(dir);
}

}  // TEST_SUITE
