// Compiled with -mavx2 -mfma. Only reached after a cpuid check in dispatch.cpp.
#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "medagent/kernels.hpp"

namespace medagent::kernels {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

std::size_t cosine_rows(const float* rows, std::size_t cells, std::size_t n,
                        const double* unit_t, double* out) {
  std::size_t zero = 0;
  const std::size_t n8 = n & ~std::size_t{7};
  for (std::size_t c = 0; c < cells; ++c) {
    const float* f = rows + c * n;
    __m256d dot0 = _mm256_setzero_pd(), dot1 = _mm256_setzero_pd();
    __m256d nrm0 = _mm256_setzero_pd(), nrm1 = _mm256_setzero_pd();
    std::size_t k = 0;
    for (; k < n8; k += 8) {
      const __m256d a = _mm256_cvtps_pd(_mm_loadu_ps(f + k));
      const __m256d b = _mm256_cvtps_pd(_mm_loadu_ps(f + k + 4));
      dot0 = _mm256_fmadd_pd(a, _mm256_loadu_pd(unit_t + k), dot0);
      dot1 = _mm256_fmadd_pd(b, _mm256_loadu_pd(unit_t + k + 4), dot1);
      nrm0 = _mm256_fmadd_pd(a, a, nrm0);
      nrm1 = _mm256_fmadd_pd(b, b, nrm1);
    }
    double dot = hsum(_mm256_add_pd(dot0, dot1));
    double nrm = hsum(_mm256_add_pd(nrm0, nrm1));
    for (; k < n; ++k) {
      const double v = f[k];
      dot += v * unit_t[k];
      nrm += v * v;
    }
    if (nrm == 0.0) {
      out[c] = 0.0;
      ++zero;
      continue;
    }
    out[c] = std::clamp(dot / std::sqrt(nrm), -1.0, 1.0);
  }
  return zero;
}

MaskedSum masked_sum(const float* v, const std::uint8_t* m, std::size_t n) {
  const __m256i zero = _mm256_setzero_si256();
  __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
  std::size_t count = 0;
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m128i mb = _mm_loadl_epi64(reinterpret_cast<const __m128i*>(m + i));
    const __m256i m32 = _mm256_cvtepu8_epi32(mb);
    const __m256i sel = _mm256_xor_si256(_mm256_cmpeq_epi32(m32, zero), _mm256_set1_epi32(-1));
    const __m256 x = _mm256_and_ps(_mm256_loadu_ps(v + i), _mm256_castsi256_ps(sel));
    acc0 = _mm256_add_pd(acc0, _mm256_cvtps_pd(_mm256_castps256_ps128(x)));
    acc1 = _mm256_add_pd(acc1, _mm256_cvtps_pd(_mm256_extractf128_ps(x, 1)));
    count += static_cast<std::size_t>(__builtin_popcount(_mm256_movemask_ps(_mm256_castsi256_ps(sel))));
  }
  MaskedSum r;
  r.sum = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) {
    if (m[i]) {
      r.sum += v[i];
      ++count;
    }
  }
  r.count = count;
  return r;
}

std::size_t count_nonzero(const std::uint8_t* m, std::size_t n) {
  const __m256i zero = _mm256_setzero_si256();
  std::size_t c = 0;
  std::size_t i = 0;
  for (; i + 32 <= n; i += 32) {
    const __m256i x = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(m + i));
    const unsigned z = static_cast<unsigned>(_mm256_movemask_epi8(_mm256_cmpeq_epi8(x, zero)));
    c += 32 - static_cast<std::size_t>(__builtin_popcount(z));
  }
  for (; i < n; ++i) c += m[i] != 0;
  return c;
}

std::size_t count_both(const std::uint8_t* a, const std::uint8_t* b, std::size_t n) {
  const __m256i zero = _mm256_setzero_si256();
  std::size_t c = 0;
  std::size_t i = 0;
  for (; i + 32 <= n; i += 32) {
    const __m256i x = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(a + i));
    const __m256i y = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(b + i));
    const __m256i either_zero = _mm256_or_si256(_mm256_cmpeq_epi8(x, zero), _mm256_cmpeq_epi8(y, zero));
    const unsigned z = static_cast<unsigned>(_mm256_movemask_epi8(either_zero));
    c += 32 - static_cast<std::size_t>(__builtin_popcount(z));
  }
  for (; i < n; ++i) c += (a[i] != 0) & (b[i] != 0);
  return c;
}

void lerp(const float* a, const float* b, float w, float* out, std::size_t n) {
  const float wa = 1.0f - w;
  const __m256 va = _mm256_set1_ps(wa);
  const __m256 vb = _mm256_set1_ps(w);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 x = _mm256_mul_ps(_mm256_loadu_ps(a + i), va);
    const __m256 y = _mm256_mul_ps(_mm256_loadu_ps(b + i), vb);
    _mm256_storeu_ps(out + i, _mm256_add_ps(x, y));
  }
  for (; i < n; ++i) {
    const float x = a[i] * wa;
    const float y = b[i] * w;
    out[i] = x + y;
  }
}

bool finite_minmax(const double* v, std::size_t n, double* lo, double* hi) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  __m256d mn = _mm256_set1_pd(inf), mx = _mm256_set1_pd(-inf);
  const __m256d zero = _mm256_setzero_pd();
  int any = 0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d x = _mm256_loadu_pd(v + i);
    // x - x is 0 exactly when x is finite
    const __m256d fin = _mm256_cmp_pd(_mm256_sub_pd(x, x), zero, _CMP_EQ_OQ);
    any |= _mm256_movemask_pd(fin);
    mn = _mm256_min_pd(mn, _mm256_blendv_pd(_mm256_set1_pd(inf), x, fin));
    mx = _mm256_max_pd(mx, _mm256_blendv_pd(_mm256_set1_pd(-inf), x, fin));
  }
  alignas(32) double a[4], b[4];
  _mm256_store_pd(a, mn);
  _mm256_store_pd(b, mx);
  double rmin = std::min(std::min(a[0], a[1]), std::min(a[2], a[3]));
  double rmax = std::max(std::max(b[0], b[1]), std::max(b[2], b[3]));
  bool found = any != 0;
  for (; i < n; ++i) {
    if (!std::isfinite(v[i])) continue;
    rmin = found ? std::min(rmin, v[i]) : v[i];
    rmax = found ? std::max(rmax, v[i]) : v[i];
    found = true;
  }
  *lo = found ? rmin : 0.0;
  *hi = found ? rmax : 0.0;
  return found;
}

}  // namespace

namespace detail {
const KernelTable& avx2_table() {
  static const KernelTable t{Isa::Avx2, cosine_rows, masked_sum, count_nonzero,
                             count_both, lerp,       finite_minmax};
  return t;
}
}  // namespace detail

}  // namespace medagent::kernels
