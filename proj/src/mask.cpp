#include "scope/mask.hpp"

#include <cstdio>
#include <fstream>
#include <numeric>

#include "scope/errors.hpp"
#include "scope/kernels/kernels.hpp"

namespace scope {
namespace {

std::vector<std::uint32_t> encode_pixels(std::span<const std::uint8_t> px) {
  std::vector<std::uint32_t> runs;
  std::uint8_t current = 0;
  std::uint32_t count = 0;
  for (std::uint8_t v : px) {
    const std::uint8_t bit = v != 0;
    if (bit == current) {
      ++count;
    } else {
      runs.push_back(count);
      current = bit;
      count = 1;
    }
  }
  runs.push_back(count);
  return runs;
}

std::vector<std::uint8_t> decode_runs(int width, int height, std::span<const std::uint32_t> runs) {
  if (width <= 0 || height <= 0) throw DimensionError("mask dimensions must be positive");
  const std::uint64_t total = static_cast<std::uint64_t>(width) * static_cast<std::uint64_t>(height);
  const std::uint64_t sum = std::accumulate(runs.begin(), runs.end(), std::uint64_t{0});
  if (sum != total) {
    throw CorruptionError("run lengths sum to " + std::to_string(sum) + ", expected " +
                          std::to_string(total));
  }
  std::vector<std::uint8_t> px;
  px.reserve(static_cast<std::size_t>(total));
  std::uint8_t value = 0;
  for (std::uint32_t r : runs) {
    px.insert(px.end(), r, value);
    value ^= 1;
  }
  return px;
}

void check_same_shape(const Mask& a, const Mask& b) {
  if (!a.same_shape(b)) {
    throw DimensionError("mask shapes differ: " + std::to_string(a.width()) + "x" +
                         std::to_string(a.height()) + " vs " + std::to_string(b.width()) + "x" +
                         std::to_string(b.height()));
  }
}

}  // namespace

Bitmap::Bitmap(int width, int height) : width_(width), height_(height) {
  if (width <= 0 || height <= 0) throw DimensionError("bitmap dimensions must be positive");
  data_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), 0);
}

Mask::Mask(int width, int height, std::vector<std::uint32_t> runs, std::vector<std::uint8_t> pixels)
    : width_(width),
      height_(height),
      runs_(std::move(runs)),
      pixels_(std::move(pixels)),
      area_(kernels::count_nonzero(pixels_)) {}

Mask Mask::from_runs(int width, int height, std::vector<std::uint32_t> runs) {
  if (runs.empty()) throw CorruptionError("empty run list");
  for (std::size_t i = 1; i < runs.size(); ++i) {
    if (runs[i] == 0) throw CorruptionError("zero-length interior run at index " + std::to_string(i));
  }
  auto px = decode_runs(width, height, runs);
  return Mask(width, height, std::move(runs), std::move(px));
}

Mask Mask::from_bitmap(const Bitmap& bitmap) {
  std::vector<std::uint8_t> px(bitmap.pixels().begin(), bitmap.pixels().end());
  auto runs = encode_pixels(px);
  return Mask(bitmap.width(), bitmap.height(), std::move(runs), std::move(px));
}

Mask Mask::empty(int width, int height) { return from_bitmap(Bitmap(width, height)); }

Bitmap Mask::to_bitmap() const {
  Bitmap b(width_, height_);
  for (int y = 0; y < height_; ++y)
    for (int x = 0; x < width_; ++x)
      if (at(x, y)) b.set(x, y);
  return b;
}

std::vector<PixelPoint> Mask::foreground() const {
  std::vector<PixelPoint> pts;
  pts.reserve(area_);
  for (int y = 0; y < height_; ++y)
    for (int x = 0; x < width_; ++x)
      if (at(x, y)) pts.push_back({x, y});
  return pts;
}

Mask rle_encode(const Grid& grid) {
  if (grid.empty() || grid.front().empty()) throw DimensionError("grid is empty");
  const std::size_t w = grid.front().size();
  for (const auto& row : grid) {
    if (row.size() != w) throw DimensionError("grid rows have different lengths");
  }
  Bitmap b(static_cast<int>(w), static_cast<int>(grid.size()));
  for (std::size_t y = 0; y < grid.size(); ++y)
    for (std::size_t x = 0; x < w; ++x)
      if (grid[y][x]) b.set(static_cast<int>(x), static_cast<int>(y));
  return Mask::from_bitmap(b);
}

Grid rle_decode(int width, int height, std::span<const std::uint32_t> runs) {
  const auto px = decode_runs(width, height, runs);
  Grid g(static_cast<std::size_t>(height), std::vector<bool>(static_cast<std::size_t>(width)));
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      g[static_cast<std::size_t>(y)][static_cast<std::size_t>(x)] =
          px[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)] != 0;
  return g;
}

Grid rle_decode(const Mask& mask) { return rle_decode(mask.width(), mask.height(), mask.runs()); }

std::size_t intersection_area(const Mask& a, const Mask& b) {
  check_same_shape(a, b);
  return kernels::count_and(a.pixels(), b.pixels());
}

double iou(const Mask& a, const Mask& b) {
  const std::size_t inter = intersection_area(a, b);
  const std::size_t uni = a.area() + b.area() - inter;
  if (uni == 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

BoundarySet boundary(const Mask& mask) {
  BoundarySet out;
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      if (!mask.at(x, y)) continue;
      if (!mask.at_or_background(x - 1, y) || !mask.at_or_background(x + 1, y) ||
          !mask.at_or_background(x, y - 1) || !mask.at_or_background(x, y + 1)) {
        out.push_back({x, y});
      }
    }
  }
  return out;
}

Mask erode(const Mask& mask, int steps) {
  Mask cur = mask;
  for (int s = 0; s < steps && !cur.is_empty(); ++s) {
    Bitmap b(cur.width(), cur.height());
    for (int y = 0; y < cur.height(); ++y)
      for (int x = 0; x < cur.width(); ++x)
        if (cur.at(x, y) && cur.at_or_background(x - 1, y) && cur.at_or_background(x + 1, y) &&
            cur.at_or_background(x, y - 1) && cur.at_or_background(x, y + 1))
          b.set(x, y);
    cur = Mask::from_bitmap(b);
  }
  return cur;
}

Mask dilate(const Mask& mask, int steps) {
  Mask cur = mask;
  for (int s = 0; s < steps; ++s) {
    Bitmap b(cur.width(), cur.height());
    for (int y = 0; y < cur.height(); ++y)
      for (int x = 0; x < cur.width(); ++x)
        if (cur.at(x, y) || cur.at_or_background(x - 1, y) || cur.at_or_background(x + 1, y) ||
            cur.at_or_background(x, y - 1) || cur.at_or_background(x, y + 1))
          b.set(x, y);
    cur = Mask::from_bitmap(b);
  }
  return cur;
}

Mask translate(const Mask& mask, int dx, int dy) {
  Bitmap b(mask.width(), mask.height());
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x)
      if (mask.at(x, y) && b.contains(x + dx, y + dy)) b.set(x + dx, y + dy);
  return Mask::from_bitmap(b);
}

Mask mask_union(const Mask& a, const Mask& b) {
  check_same_shape(a, b);
  Bitmap out(a.width(), a.height());
  for (int y = 0; y < a.height(); ++y)
    for (int x = 0; x < a.width(); ++x)
      if (a.at(x, y) || b.at(x, y)) out.set(x, y);
  return Mask::from_bitmap(out);
}

Mask mask_difference(const Mask& a, const Mask& b) {
  check_same_shape(a, b);
  Bitmap out(a.width(), a.height());
  for (int y = 0; y < a.height(); ++y)
    for (int x = 0; x < a.width(); ++x)
      if (a.at(x, y) && !b.at(x, y)) out.set(x, y);
  return Mask::from_bitmap(out);
}

nlohmann::json mask_to_json(const Mask& mask) {
  return nlohmann::json{{"w", mask.width()}, {"h", mask.height()}, {"runs", mask.runs()}};
}

Mask mask_from_json(const nlohmann::json& j) {
  try {
    return Mask::from_runs(j.at("w").get<int>(), j.at("h").get<int>(),
                           j.at("runs").get<std::vector<std::uint32_t>>());
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(std::string("malformed mask object: ") + e.what());
  }
}

std::string frame_file_name(int frame_index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%06d.json", frame_index);
  return buf;
}

void save_mask_file(const std::filesystem::path& path, const Mask& mask) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << mask_to_json(mask).dump() << '\n';
}

Mask load_mask_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(path.string() + ": " + e.what());
  }
  return mask_from_json(j);
}

}  // namespace scope
