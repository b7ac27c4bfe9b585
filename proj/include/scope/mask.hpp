#pragma once

// Binary masks: the currency passed between every stage of the pipeline.
//
// A Mask is immutable. It stores the canonical uncompressed run-length form
// (row-major, alternating background/foreground, starting with a background
// count that may be zero) alongside the decoded byte raster used by the
// kernels.

#include <compare>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace scope {

struct PixelPoint {
  int x = 0;
  int y = 0;

  bool operator==(const PixelPoint&) const = default;
  // Row-major order.
  std::strong_ordering operator<=>(const PixelPoint& o) const {
    if (auto c = y <=> o.y; c != 0) return c;
    return x <=> o.x;
  }
};

// Mutable raster used to build masks. One byte per pixel, 0 or 1.
class Bitmap {
 public:
  Bitmap(int width, int height);

  int width() const { return width_; }
  int height() const { return height_; }
  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }
  bool at(int x, int y) const { return data_[index(x, y)] != 0; }
  void set(int x, int y, bool v = true) { data_[index(x, y)] = v ? 1 : 0; }
  std::span<const std::uint8_t> pixels() const { return data_; }

 private:
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
  }

  int width_;
  int height_;
  std::vector<std::uint8_t> data_;
};

class Mask {
 public:
  // 0x0, no pixels.
  Mask() : width_(0), height_(0), area_(0) {}
  // Validates the run list: sum == width*height and no zero-length run except
  // the leading background count. Throws CorruptionError otherwise.
  static Mask from_runs(int width, int height, std::vector<std::uint32_t> runs);
  static Mask from_bitmap(const Bitmap& bitmap);
  static Mask empty(int width, int height);

  int width() const { return width_; }
  int height() const { return height_; }
  const std::vector<std::uint32_t>& runs() const { return runs_; }
  std::span<const std::uint8_t> pixels() const { return pixels_; }
  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }
  bool at(int x, int y) const {
    return pixels_[static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
                   static_cast<std::size_t>(x)] != 0;
  }
  // Off-image coordinates read as background.
  bool at_or_background(int x, int y) const { return contains(x, y) && at(x, y); }
  std::size_t area() const { return area_; }
  bool is_empty() const { return area_ == 0; }
  bool same_shape(const Mask& o) const { return width_ == o.width_ && height_ == o.height_; }

  Bitmap to_bitmap() const;
  std::vector<PixelPoint> foreground() const;

  bool operator==(const Mask& o) const {
    return width_ == o.width_ && height_ == o.height_ && runs_ == o.runs_;
  }

 private:
  Mask(int width, int height, std::vector<std::uint32_t> runs, std::vector<std::uint8_t> pixels);

  int width_;
  int height_;
  std::vector<std::uint32_t> runs_;
  std::vector<std::uint8_t> pixels_;
  std::size_t area_;
};

using Grid = std::vector<std::vector<bool>>;  // grid[row][column]

// Throws DimensionError on an empty or ragged grid.
Mask rle_encode(const Grid& grid);
Grid rle_decode(const Mask& mask);
// Raw form: throws CorruptionError when the runs do not cover width*height.
Grid rle_decode(int width, int height, std::span<const std::uint32_t> runs);

// |a∩b| / |a∪b|; 0 when both are empty. Throws DimensionError on shape mismatch.
double iou(const Mask& a, const Mask& b);
std::size_t intersection_area(const Mask& a, const Mask& b);

// Foreground pixels with a 4-neighbour outside the mask (off-image counts as
// outside), in row-major order.
using BoundarySet = std::vector<PixelPoint>;
BoundarySet boundary(const Mask& mask);

// 4-connected morphology; the image border counts as background.
Mask erode(const Mask& mask, int steps = 1);
Mask dilate(const Mask& mask, int steps = 1);
// Integer shift; pixels leaving the frame are dropped.
Mask translate(const Mask& mask, int dx, int dy);
Mask mask_union(const Mask& a, const Mask& b);
Mask mask_difference(const Mask& a, const Mask& b);

// {"w":int,"h":int,"runs":[int,...]}
nlohmann::json mask_to_json(const Mask& mask);
Mask mask_from_json(const nlohmann::json& j);

std::string frame_file_name(int frame_index);  // frame_%06d.json
void save_mask_file(const std::filesystem::path& path, const Mask& mask);
Mask load_mask_file(const std::filesystem::path& path);

}  // namespace scope
