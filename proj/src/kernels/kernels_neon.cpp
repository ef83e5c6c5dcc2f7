// aarch64 only; NEON is baseline there so no runtime probe is needed.
#include <arm_neon.h>

#include <algorithm>
#include <cmath>

#include "medagent/kernels.hpp"

namespace medagent::kernels {
namespace {

std::size_t cosine_rows(const float* rows, std::size_t cells, std::size_t n,
                        const double* unit_t, double* out) {
  std::size_t zero = 0;
  for (std::size_t c = 0; c < cells; ++c) {
    const float* f = rows + c * n;
    float64x2_t dot0 = vdupq_n_f64(0.0), dot1 = vdupq_n_f64(0.0);
    float64x2_t nrm0 = vdupq_n_f64(0.0), nrm1 = vdupq_n_f64(0.0);
    std::size_t k = 0;
    for (; k + 4 <= n; k += 4) {
      const float32x4_t x = vld1q_f32(f + k);
      const float64x2_t a = vcvt_f64_f32(vget_low_f32(x));
      const float64x2_t b = vcvt_high_f64_f32(x);
      dot0 = vfmaq_f64(dot0, a, vld1q_f64(unit_t + k));
      dot1 = vfmaq_f64(dot1, b, vld1q_f64(unit_t + k + 2));
      nrm0 = vfmaq_f64(nrm0, a, a);
      nrm1 = vfmaq_f64(nrm1, b, b);
    }
    double dot = vaddvq_f64(vaddq_f64(dot0, dot1));
    double nrm = vaddvq_f64(vaddq_f64(nrm0, nrm1));
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
  float64x2_t acc0 = vdupq_n_f64(0.0), acc1 = vdupq_n_f64(0.0);
  std::size_t count = 0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const uint32x4_t mm = {m[i], m[i + 1], m[i + 2], m[i + 3]};
    const uint32x4_t sel = vmvnq_u32(vceqq_u32(mm, vdupq_n_u32(0)));
    const float32x4_t x = vreinterpretq_f32_u32(vandq_u32(vreinterpretq_u32_f32(vld1q_f32(v + i)), sel));
    acc0 = vaddq_f64(acc0, vcvt_f64_f32(vget_low_f32(x)));
    acc1 = vaddq_f64(acc1, vcvt_high_f64_f32(x));
    count += vaddvq_u32(vshrq_n_u32(sel, 31));
  }
  MaskedSum r;
  r.sum = vaddvq_f64(vaddq_f64(acc0, acc1));
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
  std::size_t c = 0;
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    const uint8x16_t nz = vtstq_u8(vld1q_u8(m + i), vld1q_u8(m + i));
    c += vaddvq_u8(vshrq_n_u8(nz, 7));
  }
  for (; i < n; ++i) c += m[i] != 0;
  return c;
}

std::size_t count_both(const std::uint8_t* a, const std::uint8_t* b, std::size_t n) {
  std::size_t c = 0;
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    const uint8x16_t x = vld1q_u8(a + i);
    const uint8x16_t y = vld1q_u8(b + i);
    const uint8x16_t both = vandq_u8(vtstq_u8(x, x), vtstq_u8(y, y));
    c += vaddvq_u8(vshrq_n_u8(both, 7));
  }
  for (; i < n; ++i) c += (a[i] != 0) & (b[i] != 0);
  return c;
}

void lerp(const float* a, const float* b, float w, float* out, std::size_t n) {
  const float wa = 1.0f - w;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const float32x4_t x = vmulq_n_f32(vld1q_f32(a + i), wa);
    const float32x4_t y = vmulq_n_f32(vld1q_f32(b + i), w);
    vst1q_f32(out + i, vaddq_f32(x, y));
  }
  for (; i < n; ++i) {
    const float x = a[i] * wa;
    const float y = b[i] * w;
    out[i] = x + y;
  }
}

bool finite_minmax(const double* v, std::size_t n, double* lo, double* hi) {
  bool any = false;
  double mn = 0.0, mx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(v[i])) continue;
    mn = any ? std::min(mn, v[i]) : v[i];
    mx = any ? std::max(mx, v[i]) : v[i];
    any = true;
  }
  *lo = mn;
  *hi = mx;
  return any;
}

}  // namespace

namespace detail {
const KernelTable& neon_table() {
  static const KernelTable t{Isa::Neon, cosine_rows, masked_sum, count_nonzero,
                             count_both, lerp,       finite_minmax};
  return t;
}
}  // namespace detail

}  // namespace medagent::kernels
