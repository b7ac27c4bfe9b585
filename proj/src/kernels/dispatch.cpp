#include <cstdlib>
#include <string_view>

#include "scope/errors.hpp"
#include "scope/kernels/kernels.hpp"

namespace scope::kernels {

#if defined(SCOPE_HAVE_AVX2)
const KernelTable& avx2_table_impl();
#endif

const KernelTable* avx2_table() {
#if defined(SCOPE_HAVE_AVX2)
  static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("popcnt");
  return supported ? &avx2_table_impl() : nullptr;
#else
  return nullptr;
#endif
}

namespace {

const KernelTable& select_table() {
  if (const char* forced = std::getenv("SCOPE_KERNELS")) {
    if (std::string_view(forced) == "scalar") return scalar_table();
  }
  if (const KernelTable* t = avx2_table()) return *t;
  return scalar_table();
}

void require_same_size(std::size_t a, std::size_t b) {
  if (a != b) throw DimensionError("kernel inputs differ in length");
}

}  // namespace

const KernelTable& active() {
  static const KernelTable& table = select_table();
  return table;
}

std::size_t count_nonzero(std::span<const std::uint8_t> a) {
  return active().count_nonzero(a.data(), a.size());
}

std::size_t count_and(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  require_same_size(a.size(), b.size());
  return active().count_and(a.data(), b.data(), a.size());
}

std::int32_t min_sq_distance(std::int32_t px, std::int32_t py, std::span<const std::int32_t> xs,
                             std::span<const std::int32_t> ys) {
  require_same_size(xs.size(), ys.size());
  return active().min_sq_distance(px, py, xs.data(), ys.data(), xs.size());
}

std::size_t count_in_band(std::span<const float> v, float lo, float hi) {
  return active().count_in_band(v.data(), v.size(), lo, hi);
}

}  // namespace scope::kernels
