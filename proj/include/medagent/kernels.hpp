#pragma once

// Data-parallel inner loops shared by the volume, lesion and targeting code.
//
// Every kernel has a scalar reference implementation; vector variants (AVX2 on
// x86-64, NEON on aarch64) are selected once at startup from CPU features and
// are equivalence-tested against the scalar path. Integer kernels are exact on
// every ISA; floating kernels agree to a few ulps (summation order differs).
// lerp is bit-identical across ISAs because no variant fuses the multiply-add.

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

namespace medagent::kernels {

enum class Isa { Scalar, Avx2, Neon };

std::string_view isa_name(Isa isa) noexcept;

struct MaskedSum {
  double sum = 0.0;
  std::size_t count = 0;
};

struct KernelTable {
  Isa isa;

  /// Cosine of each of `cells` consecutive length-`n` rows of `rows` against a
  /// unit-norm `unit_t`. Rows with zero norm produce 0 and are counted in the
  /// return value. Results are clamped to [-1, 1].
  std::size_t (*cosine_rows)(const float* rows, std::size_t cells, std::size_t n,
                             const double* unit_t, double* out);

  /// Sum of v[i] (in double) and count over i with m[i] != 0.
  MaskedSum (*masked_sum)(const float* v, const std::uint8_t* m, std::size_t n);

  std::size_t (*count_nonzero)(const std::uint8_t* m, std::size_t n);

  /// Count of i with a[i] != 0 and b[i] != 0.
  std::size_t (*count_both)(const std::uint8_t* a, const std::uint8_t* b, std::size_t n);

  /// out[i] = a[i] * (1 - w) + b[i] * w, unfused, in float.
  void (*lerp)(const float* a, const float* b, float w, float* out, std::size_t n);

  /// Min and max over the finite entries of v. Returns false when none are finite.
  bool (*finite_minmax)(const double* v, std::size_t n, double* lo, double* hi);
};

/// Kernel table in use. Chosen on first call: the widest ISA the CPU supports,
/// unless MEDAGENT_ISA=scalar|avx2|neon overrides it.
const KernelTable& active();

/// ISAs compiled in and supported by this CPU. Always contains Isa::Scalar.
std::vector<Isa> available();

/// Table for a specific ISA. Throws Error(InvalidArgument) if unavailable.
const KernelTable& table(Isa isa);

/// Overrides the active table (tests and benchmarking).
void force(Isa isa);

namespace detail {
const KernelTable& scalar_table();
#if defined(MEDAGENT_HAVE_AVX2)
const KernelTable& avx2_table();
#endif
#if defined(MEDAGENT_HAVE_NEON)
const KernelTable& neon_table();
#endif
}  // namespace detail

}  // namespace medagent::kernels
