// Compiled with -mavx2 -mpopcnt; only reached after a CPUID check.
#include <immintrin.h>

#include <bit>
#include <limits>

#include "scope/kernels/kernels.hpp"

namespace scope::kernels {
namespace {

// Bitmask of lanes that are nonzero in a 32-byte block.
inline std::uint32_t nonzero_lanes(__m256i v) {
  const __m256i zero = _mm256_setzero_si256();
  return ~static_cast<std::uint32_t>(_mm256_movemask_epi8(_mm256_cmpeq_epi8(v, zero)));
}

std::size_t count_nonzero_avx2(const std::uint8_t* a, std::size_t n) {
  std::size_t c = 0;
  std::size_t i = 0;
  for (; i + 32 <= n; i += 32) {
    const __m256i va = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(a + i));
    c += static_cast<std::size_t>(std::popcount(nonzero_lanes(va)));
  }
  for (; i < n; ++i) c += a[i] != 0;
  return c;
}

std::size_t count_and_avx2(const std::uint8_t* a, const std::uint8_t* b, std::size_t n) {
  std::size_t c = 0;
  std::size_t i = 0;
  for (; i + 32 <= n; i += 32) {
    const __m256i va = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(a + i));
    const __m256i vb = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(b + i));
    c += static_cast<std::size_t>(std::popcount(nonzero_lanes(va) & nonzero_lanes(vb)));
  }
  for (; i < n; ++i) c += (a[i] != 0) & (b[i] != 0);
  return c;
}

std::int32_t min_sq_distance_avx2(std::int32_t px, std::int32_t py, const std::int32_t* xs,
                                  const std::int32_t* ys, std::size_t n) {
  std::int32_t best = std::numeric_limits<std::int32_t>::max();
  std::size_t i = 0;
  if (n >= 8) {
    const __m256i vpx = _mm256_set1_epi32(px);
    const __m256i vpy = _mm256_set1_epi32(py);
    __m256i vbest = _mm256_set1_epi32(best);
    for (; i + 8 <= n; i += 8) {
      const __m256i dx =
          _mm256_sub_epi32(_mm256_loadu_si256(reinterpret_cast<const __m256i*>(xs + i)), vpx);
      const __m256i dy =
          _mm256_sub_epi32(_mm256_loadu_si256(reinterpret_cast<const __m256i*>(ys + i)), vpy);
      const __m256i d = _mm256_add_epi32(_mm256_mullo_epi32(dx, dx), _mm256_mullo_epi32(dy, dy));
      vbest = _mm256_min_epi32(vbest, d);
    }
    alignas(32) std::int32_t lanes[8];
    _mm256_store_si256(reinterpret_cast<__m256i*>(lanes), vbest);
    for (std::int32_t v : lanes) best = v < best ? v : best;
  }
  for (; i < n; ++i) {
    const std::int32_t dx = xs[i] - px;
    const std::int32_t dy = ys[i] - py;
    const std::int32_t d = dx * dx + dy * dy;
    if (d < best) best = d;
  }
  return best;
}

std::size_t count_in_band_avx2(const float* v, std::size_t n, float lo, float hi) {
  std::size_t c = 0;
  std::size_t i = 0;
  const __m256 vlo = _mm256_set1_ps(lo);
  const __m256 vhi = _mm256_set1_ps(hi);
  for (; i + 8 <= n; i += 8) {
    const __m256 x = _mm256_loadu_ps(v + i);
    const __m256 in = _mm256_and_ps(_mm256_cmp_ps(x, vlo, _CMP_GE_OQ), _mm256_cmp_ps(x, vhi, _CMP_LE_OQ));
    c += static_cast<std::size_t>(std::popcount(static_cast<unsigned>(_mm256_movemask_ps(in))));
  }
  for (; i < n; ++i) c += (v[i] >= lo) & (v[i] <= hi);
  return c;
}

}  // namespace

const KernelTable& avx2_table_impl() {
  static const KernelTable table{
      "avx2",         Isa::avx2,           count_nonzero_avx2,
      count_and_avx2, min_sq_distance_avx2, count_in_band_avx2,
  };
  return table;
}

}  // namespace scope::kernels
