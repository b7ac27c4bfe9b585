#pragma once

// Synthetic surgical scene used as ground truth throughout testing: rigid bar
// instruments with a wider tip paddle, a static elliptical anatomy region, and
// a normalized depth map in which the primary instrument's tip drops into the
// surface band during scheduled contacts.

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "scope/depth_map.hpp"
#include "scope/geometry.hpp"
#include "scope/mask.hpp"

namespace scope {

struct SceneSpec {
  int width = 160;
  int height = 120;
  int frames = 100;
  int instruments = 1;
  int translation_amplitude_px = 8;   // integer triangle-wave motion
  double rotation_amplitude_deg = 0.0;
  int rotation_period_frames = 50;
  int shaft_length = 60;
  double shaft_halfwidth = 2.5;
  int tip_length = 14;
  double tip_halfwidth = 6.5;
  // Inclusive frame ranges during which instrument 0 touches the surface.
  std::vector<std::pair<int, int>> contacts;
  float hover_depth = 0.0f;
  float surface_depth = 0.6f;
  float background_depth = 1.0f;
  float surface_noise = 0.01f;
};

nlohmann::json scene_spec_to_json(const SceneSpec& spec);
SceneSpec scene_spec_from_json(const nlohmann::json& j);

struct InstrumentPose {
  double base_x = 0.0;
  double base_y = 0.0;
  double angle_rad = 0.0;
};

struct SceneTruth {
  SceneSpec spec;
  std::uint64_t seed = 0;
  std::vector<std::vector<InstrumentPose>> poses;     // [instrument][frame]
  std::vector<std::vector<Mask>> shafts;               // [instrument][frame]
  std::vector<std::vector<Mask>> tips;                 // [instrument][frame]
  std::vector<std::vector<Point2>> tip_points;         // seam centre, [instrument][frame]
  std::vector<Mask> anatomy;                           // [frame]
  std::vector<DepthMap> depth;                         // [frame], normalized to [0,1]

  int frame_count() const { return spec.frames; }
  std::size_t frame_area() const {
    return static_cast<std::size_t>(spec.width) * static_cast<std::size_t>(spec.height);
  }
  bool in_contact(int frame) const;
};

// Deterministic in (seed, spec). Throws ConfigError for an invalid spec,
// including instruments that would touch or overlap in any frame.
SceneTruth generate_synthetic_scene(std::uint64_t seed, const SceneSpec& spec);

// Grayscale rendering of one frame (background, anatomy texture, instruments).
std::vector<std::uint8_t> render_frame(const SceneTruth& scene, int frame);
void write_pgm(const std::filesystem::path& path, int width, int height, const std::vector<std::uint8_t>& gray);

// Writes frame_%06d.pgm images plus scene.json {seed, spec} into `dir`.
void write_scene_frames(const SceneTruth& scene, const std::filesystem::path& dir);

}  // namespace scope
