#include "cvae/kernels.hpp"

#include <atomic>
#include <stdexcept>

namespace cvae::kernels {
namespace {

std::atomic<const Ops*> g_active{nullptr};
std::atomic<Isa> g_isa{Isa::Scalar};

}  // namespace

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
  return avx2_compiled() && __builtin_cpu_supports("avx2") &&
         __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const Ops& active() {
  const Ops* p = g_active.load(std::memory_order_acquire);
  if (p == nullptr) {
    if (cpu_has_avx2()) {
      g_isa.store(Isa::Avx2, std::memory_order_relaxed);
      p = &avx2_ops();
    } else {
      g_isa.store(Isa::Scalar, std::memory_order_relaxed);
      p = &scalar_ops();
    }
    g_active.store(p, std::memory_order_release);
  }
  return *p;
}

void select(Isa isa) {
  if (isa == Isa::Avx2 && !cpu_has_avx2())
    throw std::runtime_error("avx2 backend requested but not available");
  g_isa.store(isa, std::memory_order_relaxed);
  g_active.store(isa == Isa::Avx2 ? &avx2_ops() : &scalar_ops(),
                 std::memory_order_release);
}

Isa active_isa() {
  active();
  return g_isa.load(std::memory_order_relaxed);
}

}  // namespace cvae::kernels
