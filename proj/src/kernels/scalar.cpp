#include <limits>

#include "scope/kernels/kernels.hpp"

namespace scope::kernels {
namespace {

std::size_t count_nonzero_scalar(const std::uint8_t* a, std::size_t n) {
  std::size_t c = 0;
  for (std::size_t i = 0; i < n; ++i) c += a[i] != 0;
  return c;
}

std::size_t count_and_scalar(const std::uint8_t* a, const std::uint8_t* b, std::size_t n) {
  std::size_t c = 0;
  for (std::size_t i = 0; i < n; ++i) c += (a[i] != 0) & (b[i] != 0);
  return c;
}

std::int32_t min_sq_distance_scalar(std::int32_t px, std::int32_t py, const std::int32_t* xs,
                                    const std::int32_t* ys, std::size_t n) {
  std::int32_t best = std::numeric_limits<std::int32_t>::max();
  for (std::size_t i = 0; i < n; ++i) {
    const std::int32_t dx = xs[i] - px;
    const std::int32_t dy = ys[i] - py;
    const std::int32_t d = dx * dx + dy * dy;
    if (d < best) best = d;
  }
  return best;
}

std::size_t count_in_band_scalar(const float* v, std::size_t n, float lo, float hi) {
  std::size_t c = 0;
  for (std::size_t i = 0; i < n; ++i) c += (v[i] >= lo) & (v[i] <= hi);
  return c;
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{
      "scalar",           Isa::scalar,           count_nonzero_scalar,
      count_and_scalar,   min_sq_distance_scalar, count_in_band_scalar,
  };
  return table;
}

}  // namespace scope::kernels
