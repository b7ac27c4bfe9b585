#include "scope/depth_map.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "scope/errors.hpp"

namespace scope {

DepthMap::DepthMap(int width, int height, std::vector<float> values)
    : width_(width), height_(height), values_(std::move(values)) {
  if (width <= 0 || height <= 0) throw DimensionError("depth map dimensions must be positive");
  if (values_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
    throw DimensionError("depth map has " + std::to_string(values_.size()) + " values, expected " +
                         std::to_string(width * height));
  }
  for (float v : values_) {
    if (!std::isfinite(v)) throw ConfigError("depth map contains a non-finite value");
  }
}

float DepthMap::min_value() const { return *std::min_element(values_.begin(), values_.end()); }
float DepthMap::max_value() const { return *std::max_element(values_.begin(), values_.end()); }

}  // namespace scope
