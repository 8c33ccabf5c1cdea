// SPDX-License-Identifier: Apache-2.0
#include <atomic>
#include <cstdlib>
#include <string>

#if defined(__GLIBC__) || defined(__linux__)
#include <malloc.h>
#endif

#include "dance/kernels.hpp"

namespace dance::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(DANCE_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa initial_isa() {
  Isa isa = detected_isa();
  if (const char* env = std::getenv("DANCE_ISA")) {
    if (std::string(env) == "scalar") isa = Isa::Scalar;
  }
  return isa;
}

// Activation tensors are a few MB each and are freed every iteration.
// With glibc defaults they go through mmap/munmap and every reuse pays
// for fresh page faults, which costs more than the arithmetic here.
void tune_allocator() {
#if defined(M_MMAP_THRESHOLD)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

std::atomic<Isa>& active_slot() {
  static std::atomic<Isa> slot{(tune_allocator(), initial_isa())};
  return slot;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return "scalar";
    case Isa::Avx2:
      return "avx2";
  }
  return "unknown";
}

bool isa_available(Isa isa) {
  if (isa == Isa::Scalar) return true;
  static const bool avx2 = cpu_has_avx2();
  return avx2;
}

Isa detected_isa() { return isa_available(Isa::Avx2) ? Isa::Avx2 : Isa::Scalar; }

Isa active_isa() { return active_slot().load(std::memory_order_relaxed); }

Isa set_active_isa(Isa isa) {
  if (!isa_available(isa)) isa = Isa::Scalar;
  active_slot().store(isa, std::memory_order_relaxed);
  return isa;
}

const KernelTable& table(Isa isa) {
#if defined(DANCE_HAVE_AVX2)
  if (isa == Isa::Avx2 && isa_available(Isa::Avx2)) return detail::avx2_table();
#endif
  (void)isa;
  return detail::scalar_table();
}

const KernelTable& active() { return table(active_isa()); }

}  // namespace dance::kernels
