#pragma once

#include <span>
#include <vector>

namespace scope {

// Per-pixel relative depth (unitless, larger = farther), row-major.
class DepthMap {
 public:
  // Throws DimensionError on a size mismatch and ConfigError on non-finite values.
  DepthMap(int width, int height, std::vector<float> values);

  int width() const { return width_; }
  int height() const { return height_; }
  float at(int x, int y) const {
    return values_[static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x)];
  }
  std::span<const float> values() const { return values_; }
  std::span<const float> row(int y) const {
    return std::span<const float>(values_).subspan(static_cast<std::size_t>(y) * static_cast<std::size_t>(width_),
                                                   static_cast<std::size_t>(width_));
  }
  float min_value() const;
  float max_value() const;

  bool operator==(const DepthMap&) const = default;

 private:
  int width_;
  int height_;
  std::vector<float> values_;
};

}  // namespace scope
