#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scope/mask.hpp"

namespace scope {

struct FramePair {
  Mask predicted;
  Mask truth;
};

// 2|A∩B| / (|A|+|B|); 1.0 when both masks are empty.
double dice(const Mask& predicted, const Mask& truth);
inline double dice(const FramePair& p) { return dice(p.predicted, p.truth); }

// Mean over `from` of the Euclidean distance (pixel centres) to the nearest
// point of `to`. Both sets must be non-empty.
double directed_surface_distance(const BoundarySet& from, const BoundarySet& to);

// Symmetric average surface distance: the arithmetic mean of both directed
// means between the two boundaries. Throws UndefinedMetricError if either mask
// is empty.
double asd(const Mask& predicted, const Mask& truth);
inline double asd(const FramePair& p) { return asd(p.predicted, p.truth); }

struct SequenceMeans {
  double mdsc = 0.0;
  std::optional<double> masd;   // missing when every frame had undefined ASD
  std::size_t frames = 0;
  std::size_t asd_excluded = 0;  // frames whose ASD was undefined
};

// Frame-wise means. Throws EmptyInputError on an empty sequence.
SequenceMeans sequence_means(std::span<const FramePair> pairs);

struct IterationStats {
  int iterations = 1;                 // display pages shown until acceptance
  double seconds_per_iteration = 0.0;
};

// Mean iterations and mean seconds per iteration over several selections.
struct IterationSummary {
  double mean_iterations = 0.0;
  double mean_seconds = 0.0;
};
IterationSummary summarize_iterations(std::span<const IterationStats> stats);

struct ReportRow {
  std::string label;
  std::string method;
  std::optional<double> dsc;
  std::optional<double> asd;
  std::optional<double> mdsc;
  std::optional<double> masd;
  std::optional<double> iters;
  std::optional<double> secs;
};

// Two tables: initial segmentation (DSC, ASD, #Iter., Time) and mask
// propagation (mDSC, mASD). A row appears in each table for which it has at
// least one value. Output is byte-stable for identical input.
std::string render_report_text(std::span<const ReportRow> rows);
// {"rows":[{label,method,dsc,asd,mdsc,masd,iters,secs}]}, missing values null.
nlohmann::json render_report_json(std::span<const ReportRow> rows);

// Column formatters, exposed for tests.
std::string format_dsc(double v);
std::string format_asd(double v);
std::string format_mdsc(double v);
std::string format_masd(double v);
std::string format_iters(double v);
std::string format_secs(double v);

}  // namespace scope
