#include "scope/virtual_cursor.hpp"

#include <algorithm>
#include <cmath>

#include "scope/errors.hpp"
#include "scope/kernels/kernels.hpp"

namespace scope {

CursorPoint cursor_position(const TipLandmark& tip, const PrincipalAxis& axis, double offset_px, int width,
                            int height) {
  const double side = dot(tip.point - axis.centroid, axis.direction) >= 0 ? 1.0 : -1.0;
  const Point2 p = tip.point + (side * offset_px) * axis.direction;
  const int x = static_cast<int>(std::lround(p.x));
  const int y = static_cast<int>(std::lround(p.y));
  CursorPoint out;
  out.point = {std::clamp(x, 0, width - 1), std::clamp(y, 0, height - 1)};
  out.clamped = out.point.x != x || out.point.y != y;
  return out;
}

ClickDetectorState make_click_detector(const CursorConfig& config, double band_center, double band_halfwidth) {
  if (!(config.occupancy_threshold > 0.0 && config.occupancy_threshold <= 1.0)) {
    throw ConfigError("occupancy_threshold must lie in (0,1]");
  }
  if (config.required_consecutive < 1) throw ConfigError("required_consecutive must be at least 1");
  ClickDetectorState s;
  s.band_center = band_center;
  s.band_halfwidth = band_halfwidth;
  s.occupancy_threshold = config.occupancy_threshold;
  s.required_consecutive = config.required_consecutive;
  return s;
}

double disk_occupancy(const DepthMap& depth, PixelPoint center, int radius, float lo, float hi) {
  std::size_t in_band = 0;
  std::size_t total = 0;
  const int r2 = radius * radius;
  for (int dy = -radius; dy <= radius; ++dy) {
    const int y = center.y + dy;
    if (y < 0 || y >= depth.height()) continue;
    const int half = static_cast<int>(std::floor(std::sqrt(static_cast<double>(r2 - dy * dy))));
    const int x0 = std::max(0, center.x - half);
    const int x1 = std::min(depth.width() - 1, center.x + half);
    if (x1 < x0) continue;
    const auto span = depth.row(y).subspan(static_cast<std::size_t>(x0), static_cast<std::size_t>(x1 - x0 + 1));
    in_band += kernels::count_in_band(span, lo, hi);
    total += span.size();
  }
  return total == 0 ? 0.0 : static_cast<double>(in_band) / static_cast<double>(total);
}

ClickUpdate update_click_state(const ClickDetectorState& state, const DepthMap& depth, PixelPoint cursor,
                               int radius) {
  if (radius < 1) throw ConfigError("click radius must be at least 1");
  ClickUpdate out;
  out.state = state;
  if (cursor.x < 0 || cursor.y < 0 || cursor.x >= depth.width() || cursor.y >= depth.height()) {
    out.warning = true;
    return out;
  }
  const auto lo = static_cast<float>(state.band_center - state.band_halfwidth);
  const auto hi = static_cast<float>(state.band_center + state.band_halfwidth);
  out.occupancy = disk_occupancy(depth, cursor, radius, lo, hi);

  if (out.occupancy >= state.occupancy_threshold) {
    out.state.consecutive_hits = std::min(state.consecutive_hits + 1, state.required_consecutive);
    if (out.state.armed && out.state.consecutive_hits == state.required_consecutive) {
      out.fired = true;
      out.state.armed = false;
    }
  } else {
    out.state.consecutive_hits = 0;
    out.state.armed = true;
  }
  return out;
}

DepthBand calibrate_band(const DepthMap& depth, PixelPoint center, int radius, const Mask& exclude,
                         double halfwidth_frac) {
  if (exclude.width() != depth.width() || exclude.height() != depth.height()) {
    throw DimensionError("calibration mask and depth map differ in shape");
  }
  std::vector<float> samples;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx) {
      const int x = center.x + dx;
      const int y = center.y + dy;
      if (dx * dx + dy * dy > radius * radius || !exclude.contains(x, y) || exclude.at(x, y)) continue;
      samples.push_back(depth.at(x, y));
    }
  if (samples.empty()) throw EmptyInputError("no surface pixels under the cursor to calibrate from");
  const auto mid = samples.begin() + static_cast<std::ptrdiff_t>(samples.size() / 2);
  std::nth_element(samples.begin(), mid, samples.end());
  DepthBand band;
  band.center = *mid;
  band.halfwidth = halfwidth_frac * static_cast<double>(depth.max_value() - depth.min_value());
  return band;
}

PointPrompt make_anatomy_prompt(const CursorPoint& cursor) {
  return PointPrompt{cursor.point, true, cursor.clamped};
}

}  // namespace scope
