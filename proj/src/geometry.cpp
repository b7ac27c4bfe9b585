#include "scope/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "scope/errors.hpp"

namespace scope {
namespace {

// Boundary pixels whose projection lies within this distance of the extreme
// are averaged, so a flat end face yields its midpoint rather than a corner.
constexpr double kEndFaceTolerance = 1.0;

Point2 centre(PixelPoint p) { return {static_cast<double>(p.x), static_cast<double>(p.y)}; }

double percentile_linear(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] + frac * (v[hi] - v[lo]);
}

// Side of the frame with the most boundary contact; -1 when none touch.
// 0 left, 1 right, 2 top, 3 bottom.
int entry_border(const BoundarySet& b, int width, int height) {
  int counts[4] = {0, 0, 0, 0};
  for (const auto& p : b) {
    counts[0] += p.x == 0;
    counts[1] += p.x == width - 1;
    counts[2] += p.y == 0;
    counts[3] += p.y == height - 1;
  }
  int best = -1;
  int best_count = 0;
  for (int i = 0; i < 4; ++i) {
    if (counts[i] > best_count) {
      best = i;
      best_count = counts[i];
    }
  }
  return best;
}

double distance_to_border(Point2 p, int border, int width, int height) {
  switch (border) {
    case 0: return p.x;
    case 1: return (width - 1) - p.x;
    case 2: return p.y;
    default: return (height - 1) - p.y;
  }
}

}  // namespace

double distance(Point2 a, Point2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

std::string_view to_string(LandmarkSource s) {
  switch (s) {
    case LandmarkSource::boundary_intersection: return "boundary_intersection";
    case LandmarkSource::medial_axis: return "medial_axis";
    case LandmarkSource::axis_extreme: return "axis_extreme";
  }
  return "unknown";
}

LandmarkSource landmark_source_from_string(std::string_view s) {
  if (s == "boundary_intersection") return LandmarkSource::boundary_intersection;
  if (s == "medial_axis") return LandmarkSource::medial_axis;
  if (s == "axis_extreme") return LandmarkSource::axis_extreme;
  throw ParseError("unknown landmark source: " + std::string(s));
}

PrincipalAxis principal_axis(const Mask& mask) {
  if (mask.area() < 2) throw DegenerateMaskError("principal axis needs at least two pixels");

  double sx = 0, sy = 0;
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x)
      if (mask.at(x, y)) {
        sx += x;
        sy += y;
      }
  const double n = static_cast<double>(mask.area());
  const Point2 c{sx / n, sy / n};

  double cxx = 0, cxy = 0, cyy = 0;
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x)
      if (mask.at(x, y)) {
        const double dx = x - c.x;
        const double dy = y - c.y;
        cxx += dx * dx;
        cxy += dx * dy;
        cyy += dy * dy;
      }
  cxx /= n;
  cxy /= n;
  cyy /= n;

  const double half_trace = 0.5 * (cxx + cyy);
  const double r = std::hypot(0.5 * (cxx - cyy), cxy);
  const double l1 = half_trace + r;
  const double l2 = std::max(0.0, half_trace - r);
  if (!(l1 > 1e-12)) throw DegenerateMaskError("mask has zero covariance");

  // Two algebraically equivalent eigenvector forms; take the better conditioned one.
  Point2 v1{cxy, l1 - cxx};
  Point2 v2{l1 - cyy, cxy};
  Point2 dir = dot(v1, v1) >= dot(v2, v2) ? v1 : v2;
  double norm = std::sqrt(dot(dir, dir));
  if (norm < 1e-12) {
    dir = cxx >= cyy ? Point2{1, 0} : Point2{0, 1};
    norm = 1.0;
  }
  dir = (1.0 / norm) * dir;
  if (std::abs(dir.x) < 1e-12) dir = {0.0, dir.y > 0 ? 1.0 : -1.0};
  if (dir.x < 0 || (dir.x == 0 && dir.y < 0)) dir = (-1.0) * dir;

  PrincipalAxis axis;
  axis.centroid = c;
  axis.direction = dir;
  axis.elongation = l2 > 1e-12 ? l1 / l2 : std::numeric_limits<double>::infinity();
  axis.low_confidence = axis.elongation < kLowConfidenceElongation;
  return axis;
}

TipLandmark tip_landmark(const Mask& shaft, const Mask& tip, int frame_index) {
  if (!shaft.same_shape(tip)) throw DimensionError("shaft and tip masks differ in shape");
  if (shaft.is_empty() || tip.is_empty()) throw DegenerateMaskError("tip landmark needs non-empty masks");

  const BoundarySet shaft_b = boundary(shaft);
  Bitmap tip_b(tip.width(), tip.height());
  for (const auto& p : boundary(tip)) tip_b.set(p.x, p.y);

  double sx = 0, sy = 0;
  std::size_t matched = 0;
  for (const auto& p : shaft_b) {
    bool near = false;
    for (int dy = -1; dy <= 1 && !near; ++dy)
      for (int dx = -1; dx <= 1 && !near; ++dx)
        near = tip_b.contains(p.x + dx, p.y + dy) && tip_b.at(p.x + dx, p.y + dy);
    if (near) {
      sx += p.x;
      sy += p.y;
      ++matched;
    }
  }
  if (matched == 0) throw NoContactError("tip and shaft boundaries do not meet");

  TipLandmark lm;
  lm.point = {sx / static_cast<double>(matched), sy / static_cast<double>(matched)};
  lm.source = LandmarkSource::boundary_intersection;
  lm.frame_index = frame_index;
  lm.low_confidence = shaft == tip;
  return lm;
}

TipLandmark medial_axis_point(const Mask& shaft, int frame_index) {
  const PrincipalAxis axis = principal_axis(shaft);
  const auto pixels = shaft.foreground();

  std::vector<double> proj;
  proj.reserve(pixels.size());
  for (const auto& p : pixels) proj.push_back(dot(centre(p) - axis.centroid, axis.direction));
  const auto [lo_it, hi_it] = std::minmax_element(proj.begin(), proj.end());

  double sign = 1.0;
  const int border = entry_border(boundary(shaft), shaft.width(), shaft.height());
  if (border >= 0) {
    const Point2 plus = axis.centroid + (*hi_it) * axis.direction;
    const Point2 minus = axis.centroid + (*lo_it) * axis.direction;
    if (distance_to_border(minus, border, shaft.width(), shaft.height()) >
        distance_to_border(plus, border, shaft.width(), shaft.height()))
      sign = -1.0;
  }

  for (double& t : proj) t *= sign;
  const double q = percentile_linear(proj, 0.9);
  const Point2 on_axis = axis.centroid + (sign * q) * axis.direction;

  PixelPoint best = pixels.front();
  double best_d = std::numeric_limits<double>::infinity();
  for (const auto& p : pixels) {
    const Point2 d = centre(p) - on_axis;
    const double dd = dot(d, d);
    if (dd < best_d) {
      best_d = dd;
      best = p;
    }
  }

  TipLandmark lm;
  lm.point = centre(best);
  lm.source = LandmarkSource::medial_axis;
  lm.frame_index = frame_index;
  lm.low_confidence = axis.low_confidence;
  return lm;
}

TipLandmark track_tip(const Mask& shaft, const TipLandmark& previous, int frame_index) {
  PrincipalAxis axis;
  try {
    axis = principal_axis(shaft);
  } catch (const DegenerateMaskError&) {
    TipLandmark held = previous;
    held.frame_index = frame_index;
    held.stale = previous.stale + 1;
    if (held.stale > kMaxStaleFrames) {
      throw TrackingLostError("tip not observed for " + std::to_string(held.stale) + " frames");
    }
    return held;
  }

  const double side = dot(previous.point - axis.centroid, axis.direction) >= 0 ? 1.0 : -1.0;
  const BoundarySet b = boundary(shaft);
  double extreme = -std::numeric_limits<double>::infinity();
  for (const auto& p : b) extreme = std::max(extreme, side * dot(centre(p) - axis.centroid, axis.direction));

  double sx = 0, sy = 0;
  std::size_t n = 0;
  for (const auto& p : b) {
    if (side * dot(centre(p) - axis.centroid, axis.direction) >= extreme - kEndFaceTolerance) {
      sx += p.x;
      sy += p.y;
      ++n;
    }
  }

  TipLandmark lm;
  lm.point = {sx / static_cast<double>(n), sy / static_cast<double>(n)};
  lm.source = LandmarkSource::axis_extreme;
  lm.frame_index = frame_index;
  lm.stale = 0;
  lm.low_confidence = axis.low_confidence;
  return lm;
}

}  // namespace scope
