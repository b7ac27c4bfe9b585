#pragma once

// Data-parallel inner loops shared by the mask, metric and cursor code.
//
// Each kernel has a scalar reference implementation and, on x86-64, an AVX2
// variant. The active table is chosen once at startup from CPUID; setting the
// environment variable SCOPE_KERNELS=scalar forces the reference path. All
// variants must return bit-identical results (integer arithmetic only), which
// tests/kernels_test.cpp checks on random inputs.

#include <cstddef>
#include <cstdint>
#include <span>

namespace scope::kernels {

enum class Isa { scalar, avx2 };

struct KernelTable {
  const char* name;
  Isa isa;
  // Number of nonzero bytes.
  std::size_t (*count_nonzero)(const std::uint8_t* a, std::size_t n);
  // Number of positions where both bytes are nonzero.
  std::size_t (*count_and)(const std::uint8_t* a, const std::uint8_t* b, std::size_t n);
  // min over i of (xs[i]-px)^2 + (ys[i]-py)^2; INT32_MAX when n == 0.
  std::int32_t (*min_sq_distance)(std::int32_t px, std::int32_t py, const std::int32_t* xs,
                                  const std::int32_t* ys, std::size_t n);
  // Number of values v with lo <= v <= hi.
  std::size_t (*count_in_band)(const float* v, std::size_t n, float lo, float hi);
};

const KernelTable& scalar_table();
// nullptr when the AVX2 variant was not compiled in or the CPU lacks AVX2.
const KernelTable* avx2_table();
// The table selected at runtime.
const KernelTable& active();

std::size_t count_nonzero(std::span<const std::uint8_t> a);
std::size_t count_and(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);
std::int32_t min_sq_distance(std::int32_t px, std::int32_t py, std::span<const std::int32_t> xs,
                             std::span<const std::int32_t> ys);
std::size_t count_in_band(std::span<const float> v, float lo, float hi);

}  // namespace scope::kernels
