#include <atomic>
#include <cstdlib>
#include <string>

#include "medagent/error.hpp"
#include "medagent/kernels.hpp"

namespace medagent::kernels {
namespace {

bool cpu_supports(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return true;
    case Isa::Avx2:
#if defined(MEDAGENT_HAVE_AVX2)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Isa::Neon:
#if defined(MEDAGENT_HAVE_NEON)
      return true;
#else
      return false;
#endif
  }
  return false;
}

const KernelTable* lookup(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return &detail::scalar_table();
    case Isa::Avx2:
#if defined(MEDAGENT_HAVE_AVX2)
      return &detail::avx2_table();
#else
      return nullptr;
#endif
    case Isa::Neon:
#if defined(MEDAGENT_HAVE_NEON)
      return &detail::neon_table();
#else
      return nullptr;
#endif
  }
  return nullptr;
}

const KernelTable* select_default() {
  if (const char* env = std::getenv("MEDAGENT_ISA")) {
    const std::string want(env);
    for (Isa isa : available()) {
      if (isa_name(isa) == want) return lookup(isa);
    }
  }
  const auto isas = available();
  return lookup(isas.back());
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> t{select_default()};
  return t;
}

}  // namespace

std::string_view isa_name(Isa isa) noexcept {
  switch (isa) {
    case Isa::Scalar: return "scalar";
    case Isa::Avx2: return "avx2";
    case Isa::Neon: return "neon";
  }
  return "unknown";
}

std::vector<Isa> available() {
  std::vector<Isa> out{Isa::Scalar};
  for (Isa isa : {Isa::Avx2, Isa::Neon}) {
    if (lookup(isa) != nullptr && cpu_supports(isa)) out.push_back(isa);
  }
  return out;
}

const KernelTable& table(Isa isa) {
  const KernelTable* t = lookup(isa);
  if (t == nullptr || !cpu_supports(isa)) {
    throw Error(Errc::InvalidArgument, "kernel ISA not available: " + std::string(isa_name(isa)));
  }
  return *t;
}

const KernelTable& active() { return *current().load(std::memory_order_acquire); }

void force(Isa isa) { current().store(&table(isa), std::memory_order_release); }

}  // namespace medagent::kernels
