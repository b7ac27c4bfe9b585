#include "scope/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "scope/errors.hpp"
#include "scope/kernels/kernels.hpp"

namespace scope {

double dice(const Mask& predicted, const Mask& truth) {
  const std::size_t inter = intersection_area(predicted, truth);
  const std::size_t total = predicted.area() + truth.area();
  if (total == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(total);
}

double directed_surface_distance(const BoundarySet& from, const BoundarySet& to) {
  if (from.empty() || to.empty()) throw UndefinedMetricError("surface distance of an empty boundary");
  std::vector<std::int32_t> xs(to.size());
  std::vector<std::int32_t> ys(to.size());
  for (std::size_t i = 0; i < to.size(); ++i) {
    xs[i] = to[i].x;
    ys[i] = to[i].y;
  }
  double sum = 0.0;
  for (const PixelPoint& p : from) {
    sum += std::sqrt(static_cast<double>(kernels::min_sq_distance(p.x, p.y, xs, ys)));
  }
  return sum / static_cast<double>(from.size());
}

double asd(const Mask& predicted, const Mask& truth) {
  if (!predicted.same_shape(truth)) throw DimensionError("asd: mask shapes differ");
  if (predicted.is_empty() || truth.is_empty()) {
    throw UndefinedMetricError("asd is undefined for an empty mask");
  }
  const BoundarySet a = boundary(predicted);
  const BoundarySet b = boundary(truth);
  return 0.5 * (directed_surface_distance(a, b) + directed_surface_distance(b, a));
}

SequenceMeans sequence_means(std::span<const FramePair> pairs) {
  if (pairs.empty()) throw EmptyInputError("sequence_means needs at least one frame");
  SequenceMeans out;
  out.frames = pairs.size();
  double dice_sum = 0.0;
  double asd_sum = 0.0;
  std::size_t asd_count = 0;
  for (const FramePair& p : pairs) {
    dice_sum += dice(p);
    try {
      asd_sum += asd(p);
      ++asd_count;
    } catch (const UndefinedMetricError&) {
      ++out.asd_excluded;
    }
  }
  out.mdsc = dice_sum / static_cast<double>(pairs.size());
  if (asd_count > 0) out.masd = asd_sum / static_cast<double>(asd_count);
  return out;
}

IterationSummary summarize_iterations(std::span<const IterationStats> stats) {
  if (stats.empty()) throw EmptyInputError("no iteration stats");
  IterationSummary s;
  for (const auto& st : stats) {
    s.mean_iterations += st.iterations;
    s.mean_seconds += st.seconds_per_iteration;
  }
  s.mean_iterations /= static_cast<double>(stats.size());
  s.mean_seconds /= static_cast<double>(stats.size());
  return s;
}

namespace {

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

// Three decimals, with trailing zeros trimmed down to two.
std::string up_to_three(double v) {
  std::string s = fixed(v, 3);
  if (s.back() == '0') s.pop_back();
  return s;
}

using Formatter = std::string (*)(double);

struct Column {
  const char* header;
  std::optional<double> ReportRow::*field;
  Formatter format;
};

std::string cell(const ReportRow& r, const Column& c) {
  const auto& v = r.*(c.field);
  return v ? c.format(*v) : "-";
}

bool has_any(const ReportRow& r, std::span<const Column> cols) {
  return std::any_of(cols.begin(), cols.end(), [&](const Column& c) { return (r.*(c.field)).has_value(); });
}

void render_table(std::ostringstream& out, const char* title, std::span<const ReportRow> rows,
                  std::span<const Column> cols) {
  std::vector<std::vector<std::string>> table;
  std::vector<std::string> header{"Anatomy", "Method"};
  for (const auto& c : cols) header.emplace_back(c.header);
  table.push_back(header);
  for (const auto& r : rows) {
    if (!has_any(r, cols)) continue;
    std::vector<std::string> line{r.label, r.method};
    for (const auto& c : cols) line.push_back(cell(r, c));
    table.push_back(std::move(line));
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : table)
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());

  out << title << '\n';
  for (const auto& line : table) {
    std::string text;
    for (std::size_t i = 0; i < line.size(); ++i) {
      text += line[i];
      if (i + 1 < line.size()) text += std::string(width[i] - line[i].size() + 2, ' ');
    }
    out << text << '\n';
  }
}

const Column kInitialColumns[] = {
    {"DSC", &ReportRow::dsc, format_dsc},
    {"ASD", &ReportRow::asd, format_asd},
    {"#Iter.", &ReportRow::iters, format_iters},
    {"Time(sec)", &ReportRow::secs, format_secs},
};

const Column kPropagationColumns[] = {
    {"mDSC", &ReportRow::mdsc, format_mdsc},
    {"mASD", &ReportRow::masd, format_masd},
};

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

}  // namespace

std::string format_dsc(double v) { return fixed(v, 2); }
std::string format_asd(double v) { return fixed(v, 2); }
std::string format_mdsc(double v) { return fixed(v, 3); }
std::string format_masd(double v) { return up_to_three(v); }
std::string format_iters(double v) { return fixed(v, 1); }
std::string format_secs(double v) { return fixed(v, 2); }

std::string render_report_text(std::span<const ReportRow> rows) {
  std::ostringstream out;
  render_table(out, "Initial segmentation", rows, kInitialColumns);
  out << '\n';
  render_table(out, "Mask propagation", rows, kPropagationColumns);
  return out.str();
}

nlohmann::json render_report_json(std::span<const ReportRow> rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) {
    arr.push_back({{"label", r.label},
                   {"method", r.method},
                   {"dsc", opt(r.dsc)},
                   {"asd", opt(r.asd)},
                   {"mdsc", opt(r.mdsc)},
                   {"masd", opt(r.masd)},
                   {"iters", opt(r.iters)},
                   {"secs", opt(r.secs)}});
  }
  return nlohmann::json{{"rows", arr}};
}

}  // namespace scope
