#pragma once

// Virtual cursor tied to the instrument tip. The cursor sits a fixed offset
// ahead of the tip along the principal axis; when enough depth samples in a
// disk around it fall inside the surface band for several consecutive frames,
// a click fires and the cursor becomes a positive point prompt.

#include "scope/backends.hpp"
#include "scope/depth_map.hpp"
#include "scope/geometry.hpp"

namespace scope {

struct CursorConfig {
  double offset_px = 8.0;
  int radius_px = 7;
  double band_halfwidth_frac = 0.05;
  double occupancy_threshold = 0.6;
  int required_consecutive = 3;
  double band_center = 0.6;  // used until calibrated
};

struct CursorPoint {
  PixelPoint point;
  bool clamped = false;
};

// tip + offset * direction, signed toward the distal end (the side of the
// centroid the tip is on), rounded and clamped into the frame.
CursorPoint cursor_position(const TipLandmark& tip, const PrincipalAxis& axis, double offset_px, int width,
                            int height);

struct ClickDetectorState {
  double band_center = 0.0;
  double band_halfwidth = 0.0;
  double occupancy_threshold = 0.6;
  int required_consecutive = 3;
  int consecutive_hits = 0;
  bool armed = true;

  bool operator==(const ClickDetectorState&) const = default;
};

ClickDetectorState make_click_detector(const CursorConfig& config, double band_center, double band_halfwidth);

struct ClickUpdate {
  ClickDetectorState state;
  bool fired = false;
  double occupancy = 0.0;
  bool warning = false;  // cursor outside the frame; state unchanged
};

// Fraction of in-frame pixels within `radius` of `center` whose depth lies in
// [lo, hi].
double disk_occupancy(const DepthMap& depth, PixelPoint center, int radius, float lo, float hi);

ClickUpdate update_click_state(const ClickDetectorState& state, const DepthMap& depth, PixelPoint cursor,
                               int radius);

struct DepthBand {
  double center = 0.0;
  double halfwidth = 0.0;
};

// Median depth over `region` pixels within `radius` of `center` that are not
// in `exclude`; halfwidth = fraction of the map's value range. Throws
// EmptyInputError when no pixel qualifies.
DepthBand calibrate_band(const DepthMap& depth, PixelPoint center, int radius, const Mask& exclude,
                         double halfwidth_frac);

PointPrompt make_anatomy_prompt(const CursorPoint& cursor);

}  // namespace scope
