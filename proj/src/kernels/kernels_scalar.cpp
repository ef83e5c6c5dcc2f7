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
    double dot = 0.0;
    double nrm = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
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
  MaskedSum r;
  for (std::size_t i = 0; i < n; ++i) {
    if (m[i]) {
      r.sum += v[i];
      ++r.count;
    }
  }
  return r;
}

std::size_t count_nonzero(const std::uint8_t* m, std::size_t n) {
  std::size_t c = 0;
  for (std::size_t i = 0; i < n; ++i) c += m[i] != 0;
  return c;
}

std::size_t count_both(const std::uint8_t* a, const std::uint8_t* b, std::size_t n) {
  std::size_t c = 0;
  for (std::size_t i = 0; i < n; ++i) c += (a[i] != 0) & (b[i] != 0);
  return c;
}

void lerp(const float* a, const float* b, float w, float* out, std::size_t n) {
  const float wa = 1.0f - w;
  for (std::size_t i = 0; i < n; ++i) {
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
    if (!any) {
      mn = mx = v[i];
      any = true;
    } else {
      mn = std::min(mn, v[i]);
      mx = std::max(mx, v[i]);
    }
  }
  *lo = mn;
  *hi = mx;
  return any;
}

}  // namespace

namespace detail {
const KernelTable& scalar_table() {
  static const KernelTable t{Isa::Scalar, cosine_rows, masked_sum, count_nonzero,
                             count_both,  lerp,        finite_minmax};
  return t;
}
}  // namespace detail

}  // namespace medagent::kernels
