#include <doctest.h>

#include <cmath>
#include <limits>

#include "medagent/error.hpp"
#include "medagent/kernels.hpp"
#include "support.hpp"

using namespace medagent;
using testsupport::Gen;

TEST_SUITE("kernels") {

TEST_CASE("scalar is always available and the active table is one of the available ones") {
  const auto isas = kernels::available();
  REQUIRE(!isas.empty());
  CHECK(isas.front() == kernels::Isa::Scalar);
  CHECK(std::find(isas.begin(), isas.end(), kernels::active().isa) != isas.end());
}

TEST_CASE("every ISA matches the scalar reference") {
  const auto& ref = kernels::table(kernels::Isa::Scalar);
  Gen g(11);
  for (auto isa : kernels::available()) {
    CAPTURE(kernels::isa_name(isa));
    const auto& k = kernels::table(isa);
    // Odd lengths exercise the vector tails.
    for (std::size_t n : {0u, 1u, 7u, 8u, 31u, 33u, 1000u, 4099u}) {
      CAPTURE(n);
      std::vector<float> a(n), b(n);
      std::vector<std::uint8_t> m1(n), m2(n);
      for (std::size_t i = 0; i < n; ++i) {
        a[i] = static_cast<float>(g.uniform(-1000, 1000));
        b[i] = static_cast<float>(g.uniform(-1000, 1000));
        m1[i] = g.chance(0.4) ? static_cast<std::uint8_t>(g.integer(1, 255)) : 0;
        m2[i] = g.chance(0.5) ? 1 : 0;
      }
      CHECK(k.count_nonzero(m1.data(), n) == ref.count_nonzero(m1.data(), n));
      CHECK(k.count_both(m1.data(), m2.data(), n) == ref.count_both(m1.data(), m2.data(), n));
      const auto s1 = k.masked_sum(a.data(), m1.data(), n), s0 = ref.masked_sum(a.data(), m1.data(), n);
      CHECK(s1.count == s0.count);
      CHECK(s1.sum == doctest::Approx(s0.sum).epsilon(1e-12));

      std::vector<float> o1(n), o0(n);
      k.lerp(a.data(), b.data(), 0.37f, o1.data(), n);
      ref.lerp(a.data(), b.data(), 0.37f, o0.data(), n);
      CHECK(o1 == o0);

      std::vector<double> d(n);
      for (std::size_t i = 0; i < n; ++i) d[i] = g.chance(0.1) ? -std::numeric_limits<double>::infinity() : a[i];
      double lo1 = 0, hi1 = 0, lo0 = 0, hi0 = 0;
      const bool f1 = k.finite_minmax(d.data(), n, &lo1, &hi1), f0 = ref.finite_minmax(d.data(), n, &lo0, &hi0);
      CHECK(f1 == f0);
      if (f0) {
        CHECK(lo1 == lo0);
        CHECK(hi1 == hi0);
      }
    }
    for (std::size_t dim : {1u, 3u, 4u, 16u, 17u, 64u}) {
      const std::size_t cells = 97;
      std::vector<float> rows(cells * dim);
      for (auto& r : rows) r = static_cast<float>(g.uniform(-1, 1));
      for (std::size_t k2 = 0; k2 < dim; ++k2) rows[5 * dim + k2] = 0.0f;  // one zero row
      std::vector<double> t(dim);
      double norm = 0;
      for (auto& x : t) {
        x = g.uniform(-1, 1);
        norm += x * x;
      }
      for (auto& x : t) x /= std::sqrt(norm);
      std::vector<double> c1(cells), c0(cells);
      CHECK(k.cosine_rows(rows.data(), cells, dim, t.data(), c1.data()) ==
            ref.cosine_rows(rows.data(), cells, dim, t.data(), c0.data()));
      for (std::size_t c = 0; c < cells; ++c) CHECK(c1[c] == doctest::Approx(c0[c]).epsilon(1e-9));
      CHECK(c0[5] == 0.0);
    }
  }
}

TEST_CASE("forcing an unavailable ISA is rejected") {
  const auto isas = kernels::available();
  for (auto isa : {kernels::Isa::Avx2, kernels::Isa::Neon}) {
    if (std::find(isas.begin(), isas.end(), isa) == isas.end()) CHECK_THROWS_AS(kernels::table(isa), Error);
  }
}

}
