#include "scope/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

#include "scope/errors.hpp"

namespace scope {
namespace {

// Uniform [0,1) from the raw engine output so values do not depend on the
// standard library's distribution implementation.
double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

int triangle(int f, int amplitude, int phase) {
  if (amplitude == 0) return 0;
  const int period = 4 * amplitude;
  const int t = ((f + phase) % period + period) % period;
  return amplitude - std::abs(t - 2 * amplitude);
}

void validate(const SceneSpec& s) {
  if (s.width < 32 || s.height < 32) throw ConfigError("scene must be at least 32x32");
  if (s.frames < 10) throw ConfigError("scene needs at least 10 frames");
  if (s.instruments < 1) throw ConfigError("scene needs at least one instrument");
  if (s.shaft_length < 4 || s.tip_length < 2) throw ConfigError("instrument too short");
  if (s.shaft_halfwidth <= 0 || s.tip_halfwidth < s.shaft_halfwidth) throw ConfigError("bad instrument widths");
  if (s.rotation_period_frames < 1) throw ConfigError("rotation period must be positive");
  int last_end = -1;
  for (const auto& [a, b] : s.contacts) {
    if (a < 0 || b < a || b >= s.frames) throw ConfigError("contact range out of bounds");
    if (a <= last_end) throw ConfigError("contact ranges must be sorted and disjoint");
    last_end = b;
  }
}

struct Rasterized {
  Mask shaft;
  Mask tip;
};

Rasterized rasterize(const SceneSpec& s, const InstrumentPose& pose) {
  Bitmap shaft(s.width, s.height);
  Bitmap tip(s.width, s.height);
  const double ux = std::cos(pose.angle_rad);
  const double uy = std::sin(pose.angle_rad);
  for (int y = 0; y < s.height; ++y) {
    for (int x = 0; x < s.width; ++x) {
      const double px = x - pose.base_x;
      const double py = y - pose.base_y;
      const double u = px * ux + py * uy;
      const double v = std::abs(-px * uy + py * ux);
      if (u >= 0 && u <= s.shaft_length && v <= s.shaft_halfwidth) {
        shaft.set(x, y);
      } else if (u > s.shaft_length && u <= s.shaft_length + s.tip_length && v <= s.tip_halfwidth) {
        tip.set(x, y);
      }
    }
  }
  return {Mask::from_bitmap(shaft), Mask::from_bitmap(tip)};
}

}  // namespace

bool SceneTruth::in_contact(int frame) const {
  return std::any_of(spec.contacts.begin(), spec.contacts.end(),
                     [frame](const auto& c) { return frame >= c.first && frame <= c.second; });
}

nlohmann::json scene_spec_to_json(const SceneSpec& s) {
  nlohmann::json contacts = nlohmann::json::array();
  for (const auto& [a, b] : s.contacts) contacts.push_back({a, b});
  return {{"width", s.width},
          {"height", s.height},
          {"frames", s.frames},
          {"instruments", s.instruments},
          {"translation_amplitude_px", s.translation_amplitude_px},
          {"rotation_amplitude_deg", s.rotation_amplitude_deg},
          {"rotation_period_frames", s.rotation_period_frames},
          {"shaft_length", s.shaft_length},
          {"shaft_halfwidth", s.shaft_halfwidth},
          {"tip_length", s.tip_length},
          {"tip_halfwidth", s.tip_halfwidth},
          {"contacts", contacts},
          {"hover_depth", s.hover_depth},
          {"surface_depth", s.surface_depth},
          {"background_depth", s.background_depth},
          {"surface_noise", s.surface_noise}};
}

SceneSpec scene_spec_from_json(const nlohmann::json& j) {
  SceneSpec s;
  try {
    s.width = j.value("width", s.width);
    s.height = j.value("height", s.height);
    s.frames = j.value("frames", s.frames);
    s.instruments = j.value("instruments", s.instruments);
    s.translation_amplitude_px = j.value("translation_amplitude_px", s.translation_amplitude_px);
    s.rotation_amplitude_deg = j.value("rotation_amplitude_deg", s.rotation_amplitude_deg);
    s.rotation_period_frames = j.value("rotation_period_frames", s.rotation_period_frames);
    s.shaft_length = j.value("shaft_length", s.shaft_length);
    s.shaft_halfwidth = j.value("shaft_halfwidth", s.shaft_halfwidth);
    s.tip_length = j.value("tip_length", s.tip_length);
    s.tip_halfwidth = j.value("tip_halfwidth", s.tip_halfwidth);
    s.hover_depth = j.value("hover_depth", s.hover_depth);
    s.surface_depth = j.value("surface_depth", s.surface_depth);
    s.background_depth = j.value("background_depth", s.background_depth);
    s.surface_noise = j.value("surface_noise", s.surface_noise);
    if (j.contains("contacts")) {
      for (const auto& c : j.at("contacts")) s.contacts.emplace_back(c.at(0).get<int>(), c.at(1).get<int>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad scene spec: ") + e.what());
  }
  return s;
}

SceneTruth generate_synthetic_scene(std::uint64_t seed, const SceneSpec& spec) {
  validate(spec);
  std::mt19937_64 rng(seed);

  SceneTruth t;
  t.spec = spec;
  t.seed = seed;
  const int n = spec.instruments;
  const int amp = spec.translation_amplitude_px;
  const double rot_amp = spec.rotation_amplitude_deg * std::numbers::pi / 180.0;

  t.poses.assign(static_cast<std::size_t>(n), {});
  t.shafts.assign(static_cast<std::size_t>(n), {});
  t.tips.assign(static_cast<std::size_t>(n), {});
  t.tip_points.assign(static_cast<std::size_t>(n), {});

  for (int i = 0; i < n; ++i) {
    const int phase_x = static_cast<int>(unit(rng) * 4 * std::max(amp, 1));
    const int phase_y = static_cast<int>(unit(rng) * 4 * std::max(amp / 2, 1));
    const double phase_r = unit(rng) * 2.0 * std::numbers::pi;
    const int base_x = 6 + amp;
    const int base_y = spec.height * (i + 1) / (n + 1);
    for (int f = 0; f < spec.frames; ++f) {
      InstrumentPose pose;
      pose.base_x = base_x + triangle(f, amp, phase_x);
      pose.base_y = base_y + triangle(f, amp / 2, phase_y);
      pose.angle_rad =
          rot_amp == 0.0 ? 0.0 : rot_amp * std::sin(2.0 * std::numbers::pi * f / spec.rotation_period_frames + phase_r);
      auto r = rasterize(spec, pose);
      if (r.shaft.area() < 2 || r.tip.is_empty()) throw ConfigError("instrument leaves the frame");
      t.poses[i].push_back(pose);
      t.shafts[i].push_back(std::move(r.shaft));
      t.tips[i].push_back(std::move(r.tip));
      t.tip_points[i].push_back({pose.base_x + spec.shaft_length * std::cos(pose.angle_rad),
                                 pose.base_y + spec.shaft_length * std::sin(pose.angle_rad)});
    }
  }

  // Instruments must stay at least one pixel apart in every frame.
  for (int f = 0; f < spec.frames; ++f) {
    for (int i = 0; i < n; ++i) {
      const Mask grown = dilate(mask_union(t.shafts[i][f], t.tips[i][f]), 1);
      for (int j = i + 1; j < n; ++j) {
        const Mask other = mask_union(t.shafts[j][f], t.tips[j][f]);
        if (intersection_area(grown, other) > 0) {
          throw ConfigError("instruments " + std::to_string(i) + " and " + std::to_string(j) + " touch in frame " +
                            std::to_string(f));
        }
      }
    }
  }

  // Static anatomy ellipse under the primary tip's range of motion.
  const double cx = 6 + amp + spec.shaft_length + 0.5 * spec.tip_length;
  const double cy = spec.height / 2.0;
  const double rx = std::min(spec.shaft_length / 2.0 + amp, spec.width - cx - 2.0);
  const double ry = spec.height / 2.0 - 6.0;
  Bitmap anatomy_bits(spec.width, spec.height);
  for (int y = 0; y < spec.height; ++y)
    for (int x = 0; x < spec.width; ++x) {
      const double ex = (x - cx) / rx;
      const double ey = (y - cy) / ry;
      if (ex * ex + ey * ey <= 1.0) anatomy_bits.set(x, y);
    }
  const Mask anatomy = Mask::from_bitmap(anatomy_bits);
  t.anatomy.assign(static_cast<std::size_t>(spec.frames), anatomy);

  std::vector<float> texture(static_cast<std::size_t>(spec.width) * static_cast<std::size_t>(spec.height));
  for (float& v : texture) v = static_cast<float>((2.0 * unit(rng) - 1.0) * spec.surface_noise);

  for (int f = 0; f < spec.frames; ++f) {
    std::vector<float> d(texture.size(), spec.background_depth);
    for (int y = 0; y < spec.height; ++y)
      for (int x = 0; x < spec.width; ++x) {
        const std::size_t k = static_cast<std::size_t>(y) * static_cast<std::size_t>(spec.width) + static_cast<std::size_t>(x);
        if (anatomy.at(x, y)) d[k] = spec.surface_depth + texture[k];
        for (int i = 0; i < n; ++i) {
          if (t.shafts[i][f].at(x, y)) d[k] = spec.hover_depth;
          if (t.tips[i][f].at(x, y)) {
            d[k] = (i == 0 && t.in_contact(f)) ? spec.surface_depth + texture[k] : spec.hover_depth;
          }
        }
      }
    const auto [lo, hi] = std::minmax_element(d.begin(), d.end());
    const float mn = *lo;
    const float range = *hi - *lo;
    if (range > 0) {
      for (float& v : d) v = (v - mn) / range;
    }
    t.depth.emplace_back(spec.width, spec.height, std::move(d));
  }
  return t;
}

std::vector<std::uint8_t> render_frame(const SceneTruth& scene, int frame) {
  const auto& d = scene.depth.at(static_cast<std::size_t>(frame));
  std::vector<std::uint8_t> gray(d.values().size());
  for (std::size_t k = 0; k < gray.size(); ++k) {
    gray[k] = static_cast<std::uint8_t>(std::clamp(40.0f + 200.0f * d.values()[k], 0.0f, 255.0f));
  }
  return gray;
}

void write_pgm(const std::filesystem::path& path, int width, int height, const std::vector<std::uint8_t>& gray) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
}

void write_scene_frames(const SceneTruth& scene, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (int f = 0; f < scene.frame_count(); ++f) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%06d.pgm", f);
    write_pgm(dir / name, scene.spec.width, scene.spec.height, render_frame(scene, f));
  }
  std::ofstream meta(dir / "scene.json");
  meta << nlohmann::json{{"seed", scene.seed}, {"spec", scene_spec_to_json(scene.spec)}}.dump(2) << '\n';
}

}  // namespace scope
