#include <doctest.h>

#include <random>
#include <regex>

#include "scope/errors.hpp"
#include "scope/metrics.hpp"
#include "support/oracles.hpp"

using namespace scope;
using scope::testing::oracle_asd;
using scope::testing::oracle_dice;
using scope::testing::random_mask;
using scope::testing::random_nonempty_mask;
using scope::testing::rectangle;

namespace {

std::string squeeze(const std::string& s) { return std::regex_replace(s, std::regex(" +"), " "); }

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("dice examples") {
  const Mask a = rectangle(4, 4, 0, 0, 1, 1);
  CHECK(dice(a, a) == 1.0);
  CHECK(dice(a, rectangle(4, 4, 2, 2, 3, 3)) == 0.0);
  CHECK(dice(a, rectangle(4, 4, 1, 0, 2, 1)) == 0.5);
  CHECK(dice(Mask::empty(4, 4), Mask::empty(4, 4)) == 1.0);
  CHECK(dice(a, Mask::empty(4, 4)) == 0.0);
  CHECK_THROWS_AS(dice(a, Mask::empty(4, 5)), DimensionError);
}

TEST_CASE("asd examples") {
  const Mask a = rectangle(16, 16, 2, 2, 3, 3);
  CHECK(asd(a, a) == 0.0);
  CHECK(asd(rectangle(10, 3, 1, 1, 1, 1), rectangle(10, 3, 4, 1, 4, 1)) == 3.0);

  // Squares offset by (5,0): every point of one is 4 or 5 away from the
  // nearest point of the other, two of each per direction.
  const Mask b = rectangle(16, 16, 7, 2, 8, 3);
  CHECK(asd(a, b) == doctest::Approx(4.5).epsilon(1e-12));
  CHECK(asd(a, b) == doctest::Approx(*oracle_asd(a, b)).epsilon(1e-12));

  CHECK_THROWS_AS(asd(a, Mask::empty(16, 16)), UndefinedMetricError);
  CHECK_THROWS_AS(asd(Mask::empty(16, 16), a), UndefinedMetricError);
  CHECK_THROWS_AS(asd(a, Mask::empty(8, 8)), DimensionError);
}

TEST_CASE("dice and asd agree with the brute-force oracles") {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> dim(1, 40);
  for (int i = 0; i < 150; ++i) {
    const int w = dim(rng), h = dim(rng);
    const Mask a = random_mask(rng, w, h), b = random_mask(rng, w, h);
    CHECK(std::abs(dice(a, b) - oracle_dice(a, b)) <= 1e-9);
    const auto expected = oracle_asd(a, b);
    if (expected) {
      CHECK(std::abs(asd(a, b) - *expected) <= 1e-6);
    } else {
      CHECK_THROWS_AS(asd(a, b), UndefinedMetricError);
    }
  }
}

TEST_CASE("dice-iou identity, asd symmetry and translation invariance") {
  std::mt19937_64 rng(32);
  for (int i = 0; i < 200; ++i) {
    const Mask a = random_nonempty_mask(rng, 30, 30), b = random_nonempty_mask(rng, 30, 30);
    const double j = iou(a, b);
    CHECK(std::abs(dice(a, b) - 2 * j / (1 + j)) <= 1e-9);
    CHECK(std::abs(asd(a, b) - asd(b, a)) <= 1e-12);
  }
  // Masks placed away from the border so a shift keeps every pixel in frame.
  for (int i = 0; i < 50; ++i) {
    const Mask a = translate(random_nonempty_mask(rng, 20, 20), 0, 0);
    const Mask b = random_nonempty_mask(rng, 20, 20);
    Bitmap ba(40, 40), bb(40, 40);
    for (const auto& p : a.foreground()) ba.set(p.x + 5, p.y + 5);
    for (const auto& p : b.foreground()) bb.set(p.x + 5, p.y + 5);
    const Mask pa = Mask::from_bitmap(ba), pb = Mask::from_bitmap(bb);
    CHECK(asd(translate(pa, 3, -4), translate(pb, 3, -4)) == doctest::Approx(asd(pa, pb)).epsilon(1e-12));
  }
}

TEST_CASE("sequence means") {
  const Mask a = rectangle(4, 4, 0, 0, 1, 1);
  const Mask half = rectangle(4, 4, 1, 0, 2, 1);
  const Mask far = rectangle(4, 4, 2, 2, 3, 3);

  std::vector<FramePair> same(3, FramePair{a, a});
  CHECK(sequence_means(same).mdsc == 1.0);

  std::vector<FramePair> mixed{{a, a}, {half, a}, {far, a}};
  CHECK(sequence_means(mixed).mdsc == doctest::Approx(0.5));

  std::vector<FramePair> with_empty{{a, a}, {Mask::empty(4, 4), a}, {half, a}};
  const SequenceMeans s = sequence_means(with_empty);
  CHECK(s.asd_excluded == 1);
  CHECK(s.frames == 3);
  REQUIRE(s.masd);
  CHECK(*s.masd == doctest::Approx((asd(a, a) + asd(half, a)) / 2));
  CHECK(s.mdsc == doctest::Approx((1.0 + 0.0 + 0.5) / 3));

  std::vector<FramePair> all_empty{{Mask::empty(4, 4), a}};
  CHECK_FALSE(sequence_means(all_empty).masd);

  CHECK_THROWS_AS(sequence_means(std::span<const FramePair>{}), EmptyInputError);
}

TEST_CASE("sequence means of copies equal the single-pair metrics") {
  std::mt19937_64 rng(33);
  for (int i = 0; i < 20; ++i) {
    const Mask a = random_nonempty_mask(rng, 24, 24), b = random_nonempty_mask(rng, 24, 24);
    const std::vector<FramePair> copies(7, FramePair{a, b});
    const SequenceMeans s = sequence_means(copies);
    CHECK(s.mdsc == doctest::Approx(dice(a, b)).epsilon(1e-12));
    CHECK(*s.masd == doctest::Approx(asd(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("iteration summary") {
  const std::vector<IterationStats> stats{{1, 1.0}, {2, 2.0}};
  const IterationSummary s = summarize_iterations(stats);
  CHECK(s.mean_iterations == 1.5);
  CHECK(s.mean_seconds == 1.5);
  CHECK_THROWS_AS(summarize_iterations(std::span<const IterationStats>{}), EmptyInputError);
}

TEST_CASE("report reproduces published table literals") {
  const std::vector<ReportRow> rows{
      {"Eye", "GSAM", 0.82, 2.83, std::nullopt, std::nullopt, 1.3, 1.16},
      {"Skull Base", "CUTIE", std::nullopt, std::nullopt, 0.973, 2.54, std::nullopt, std::nullopt},
  };
  const std::string text = render_report_text(rows);
  CHECK(squeeze(text).find("Eye GSAM 0.82 2.83 1.3 1.16\n") != std::string::npos);
  CHECK(squeeze(text).find("Skull Base CUTIE 0.973 2.54\n") != std::string::npos);
  CHECK(text == render_report_text(rows));
  // Each row lands only in the table it has values for.
  CHECK(text.find("Eye") < text.find("Mask propagation"));
  CHECK(text.find("Skull Base") > text.find("Mask propagation"));

  const auto j = render_report_json(rows);
  CHECK(j["rows"][0]["dsc"] == 0.82);
  CHECK(j["rows"][0]["mdsc"].is_null());
  CHECK(j["rows"][1]["masd"] == 2.54);
}

TEST_CASE("empty report has headers only") {
  const std::string text = render_report_text({});
  CHECK(text ==
        "Initial segmentation\nAnatomy  Method  DSC  ASD  #Iter.  Time(sec)\n\n"
        "Mask propagation\nAnatomy  Method  mDSC  mASD\n");
  CHECK(render_report_json({}).dump() == R"({"rows":[]})");
}

TEST_CASE("column formatters") {
  CHECK(format_dsc(0.8249) == "0.82");
  CHECK(format_asd(2.834) == "2.83");
  CHECK(format_iters(1.25) == "1.2");
  CHECK(format_secs(1.164) == "1.16");
  CHECK(format_mdsc(0.9731) == "0.973");
  CHECK(format_masd(2.54) == "2.54");
  CHECK(format_masd(2.5402) == "2.54");
  CHECK(format_masd(1.236) == "1.236");
  CHECK(format_masd(3.0) == "3.00");
}

}  // TEST_SUITE
