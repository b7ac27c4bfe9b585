#include <doctest.h>

#include <cmath>
#include <numbers>

#include "scope/errors.hpp"
#include "scope/geometry.hpp"
#include "support/oracles.hpp"

using namespace scope;
using scope::testing::rectangle;
using scope::testing::rotated_bar;

namespace {

double angle_between_axes(Point2 d, double angle_rad) {
  // Axes are sign-free: compare |cos|.
  const double c = std::abs(d.x * std::cos(angle_rad) + d.y * std::sin(angle_rad));
  return std::acos(std::min(1.0, c)) * 180.0 / std::numbers::pi;
}

Mask diagonal(int n) {
  Bitmap b(n, n);
  for (int i = 0; i < n; ++i) b.set(i, i);
  return Mask::from_bitmap(b);
}

}  // namespace

TEST_SUITE("geometry") {

TEST_CASE("principal axis examples") {
  const PrincipalAxis h = principal_axis(rectangle(40, 20, 5, 8, 24, 11));
  CHECK(h.direction.x == doctest::Approx(1.0));
  CHECK(h.direction.y == doctest::Approx(0.0));
  CHECK(h.centroid.x == doctest::Approx(14.5));
  CHECK(h.centroid.y == doctest::Approx(9.5));
  CHECK_FALSE(h.low_confidence);

  const PrincipalAxis d = principal_axis(diagonal(10));
  CHECK(d.direction.x == doctest::Approx(std::sqrt(0.5)));
  CHECK(d.direction.y == doctest::Approx(std::sqrt(0.5)));

  const PrincipalAxis v = principal_axis(rectangle(20, 40, 8, 5, 11, 24));
  CHECK(v.direction.x == doctest::Approx(0.0));
  CHECK(v.direction.y == doctest::Approx(1.0));

  CHECK_THROWS_AS(principal_axis(rectangle(5, 5, 2, 2, 2, 2)), DegenerateMaskError);
  CHECK_THROWS_AS(principal_axis(Mask::empty(5, 5)), DegenerateMaskError);
  CHECK(principal_axis(rectangle(20, 20, 2, 2, 9, 9)).low_confidence);
}

TEST_CASE("principal axis follows rotation and ignores translation") {
  for (double deg : {0.0, 15.0, 30.0, 45.0, 60.0, 90.0, 120.0, 135.0, 170.0}) {
    const double a = deg * std::numbers::pi / 180.0;
    const PrincipalAxis p = principal_axis(rotated_bar(120, 120, 60, 60, a, 30, 3));
    CHECK(angle_between_axes(p.direction, a) <= 2.0);
    CHECK(std::hypot(p.direction.x, p.direction.y) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK((p.direction.x > 0 || (p.direction.x == 0 && p.direction.y > 0)));
    CHECK(p.elongation >= 1.0);
    const PrincipalAxis q = principal_axis(translate(rotated_bar(120, 120, 60, 60, a, 30, 3), 7, -5));
    CHECK(q.direction.x == doctest::Approx(p.direction.x).epsilon(1e-9));
    CHECK(q.direction.y == doctest::Approx(p.direction.y).epsilon(1e-9));
  }
}

TEST_CASE("tip landmark on the shaft and paddle fixture") {
  const Mask shaft = rectangle(32, 16, 0, 4, 19, 7);
  const Mask tip = rectangle(32, 16, 18, 3, 23, 8);
  const TipLandmark lm = tip_landmark(shaft, tip, 3);
  CHECK(lm.source == LandmarkSource::boundary_intersection);
  CHECK(lm.frame_index == 3);
  CHECK(distance(lm.point, {18.5, 5.5}) <= 1.0);
  CHECK_FALSE(lm.low_confidence);
  // Deterministic.
  CHECK(tip_landmark(shaft, tip, 3).point == lm.point);
}

TEST_CASE("tip landmark errors and degenerate cases") {
  const Mask shaft = rectangle(32, 16, 0, 4, 10, 7);
  CHECK_THROWS_AS(tip_landmark(shaft, rectangle(32, 16, 13, 4, 16, 7)), NoContactError);
  // Touching diagonally counts.
  CHECK_NOTHROW(tip_landmark(shaft, rectangle(32, 16, 11, 8, 14, 10)));
  CHECK_THROWS_AS(tip_landmark(shaft, Mask::empty(32, 16)), DegenerateMaskError);
  CHECK_THROWS_AS(tip_landmark(shaft, Mask::empty(8, 8)), DimensionError);

  const TipLandmark same = tip_landmark(shaft, shaft);
  CHECK(same.low_confidence);
  double sx = 0, sy = 0;
  const auto b = boundary(shaft);
  for (const auto& p : b) {
    sx += p.x;
    sy += p.y;
  }
  CHECK(same.point.x == doctest::Approx(sx / double(b.size())));
  CHECK(same.point.y == doctest::Approx(sy / double(b.size())));
}

TEST_CASE("medial axis point") {
  // Bar entering from the left border; distal end is +x.
  const TipLandmark bar = medial_axis_point(rectangle(110, 20, 0, 8, 99, 11));
  CHECK(bar.source == LandmarkSource::medial_axis);
  CHECK(bar.point.x == doctest::Approx(89.0).epsilon(0.02));
  CHECK(bar.point.y >= 8);
  CHECK(bar.point.y <= 11);

  // Entering from the right border flips the distal side.
  const TipLandmark flipped = medial_axis_point(rectangle(110, 20, 10, 8, 109, 11));
  CHECK(flipped.point.x == doctest::Approx(20.0).epsilon(0.05));

  const TipLandmark square = medial_axis_point(rectangle(30, 30, 10, 10, 19, 19));
  CHECK(square.low_confidence);

  // L shape: long arm along x, short stub going down at the left.
  Bitmap l(80, 40);
  for (int x = 0; x < 60; ++x)
    for (int y = 10; y < 13; ++y) l.set(x, y);
  for (int y = 13; y < 20; ++y)
    for (int x = 0; x < 3; ++x) l.set(x, y);
  const Mask lm = Mask::from_bitmap(l);
  const TipLandmark on_l = medial_axis_point(lm);
  CHECK(lm.at(static_cast<int>(on_l.point.x), static_cast<int>(on_l.point.y)));
  CHECK(on_l.point.x > 40);
  CHECK(on_l.point.y < 13);

  CHECK_THROWS_AS(medial_axis_point(rectangle(5, 5, 1, 1, 1, 1)), DegenerateMaskError);
}

TEST_CASE("track tip follows a translating bar") {
  TipLandmark lm;
  lm.point = {39.5, 20};
  lm = track_tip(rectangle(120, 40, 0, 18, 39, 22), lm, 0);
  for (int f = 1; f <= 10; ++f) {
    const Mask m = rectangle(120, 40, 2 * f, 18, 2 * f + 39, 22);
    const TipLandmark next = track_tip(m, lm, f);
    CHECK(next.source == LandmarkSource::axis_extreme);
    CHECK(next.frame_index == f);
    CHECK(next.point.x - lm.point.x == doctest::Approx(2.0));
    CHECK(std::abs(next.point.x - (2 * f + 39)) <= 1.0);
    CHECK(next.point.y == doctest::Approx(20));
    lm = next;
  }
}

TEST_CASE("track tip keeps the same physical end under rotation") {
  TipLandmark lm;
  lm.point = {30, 60};  // left end of a bar centred at (60, 60)
  for (int step = 1; step <= 9; ++step) {
    const double a = step * 10.0 * std::numbers::pi / 180.0;
    lm = track_tip(rotated_bar(120, 120, 60, 60, a, 30, 3), lm, step);
    const Point2 left{60 - 30 * std::cos(a), 60 - 30 * std::sin(a)};
    CHECK(distance(lm.point, left) <= 1.5);
  }
}

TEST_CASE("track tip holds through empty frames, then gives up") {
  TipLandmark lm;
  lm.point = {10, 10};
  for (int f = 1; f <= kMaxStaleFrames; ++f) {
    lm = track_tip(Mask::empty(20, 20), lm, f);
    CHECK(lm.stale == f);
    CHECK(lm.point == Point2{10, 10});
    CHECK(lm.frame_index == f);
  }
  CHECK_THROWS_AS(track_tip(Mask::empty(20, 20), lm, 6), TrackingLostError);
  // A good frame resets the counter.
  lm = track_tip(rectangle(20, 20, 2, 9, 15, 11), lm, 6);
  CHECK(lm.stale == 0);
}

TEST_CASE("landmark source names") {
  for (auto s : {LandmarkSource::boundary_intersection, LandmarkSource::medial_axis, LandmarkSource::axis_extreme})
    CHECK(landmark_source_from_string(to_string(s)) == s);
}

}  // TEST_SUITE
