#pragma once

// Tip landmarks from masks alone: principal axes, the shaft/tip seam, a
// medial-axis fallback for tools without a distinct tip, and per-frame
// tracking of the distal extreme along the principal axis.

#include <string_view>

#include "scope/mask.hpp"

namespace scope {

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Point2 operator*(double s, Point2 a) { return {s * a.x, s * a.y}; }
  bool operator==(const Point2&) const = default;
};

inline double dot(Point2 a, Point2 b) { return a.x * b.x + a.y * b.y; }
double distance(Point2 a, Point2 b);

struct PrincipalAxis {
  Point2 centroid;
  Point2 direction;  // unit; dx > 0, or dx == 0 and dy > 0
  double elongation = 1.0;  // largest / smallest covariance eigenvalue (may be +inf)
  bool low_confidence = false;  // elongation < 1.2
};

inline constexpr double kLowConfidenceElongation = 1.2;

// Throws DegenerateMaskError for fewer than two pixels or zero covariance.
PrincipalAxis principal_axis(const Mask& mask);

enum class LandmarkSource { boundary_intersection, medial_axis, axis_extreme };
std::string_view to_string(LandmarkSource s);
LandmarkSource landmark_source_from_string(std::string_view s);

struct TipLandmark {
  Point2 point;
  LandmarkSource source = LandmarkSource::boundary_intersection;
  int frame_index = 0;
  int stale = 0;  // consecutive frames the landmark has been held
  bool low_confidence = false;
};

// Frames a landmark may be held before tracking is declared lost.
inline constexpr int kMaxStaleFrames = 5;

// Centroid of the shaft boundary points lying within Chebyshev distance 1 of
// the tip boundary. Throws NoContactError when no such pair exists.
TipLandmark tip_landmark(const Mask& shaft, const Mask& tip, int frame_index = 0);

// Point at the 90th percentile of the projections onto the principal axis,
// toward the end farther from the border the shaft enters from, snapped to
// the nearest foreground pixel.
TipLandmark medial_axis_point(const Mask& shaft, int frame_index = 0);

// Distal extreme of the shaft boundary along the current principal axis, on
// the same side as the previous landmark. A degenerate mask holds the previous
// landmark with stale+1; beyond kMaxStaleFrames throws TrackingLostError.
TipLandmark track_tip(const Mask& shaft, const TipLandmark& previous, int frame_index);

}  // namespace scope
