#include <atomic>
#include <cstdlib>
#include <string>

#include "entitynlm/kernels.hpp"

namespace enlm::kernels {
namespace {

const KernelTable* lookup(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return &scalar_table();
    case Isa::kAvx2:
      return avx2_table();
    case Isa::kNeon:
      return neon_table();
  }
  return nullptr;
}

const KernelTable* resolve() {
  if (const char* env = std::getenv("ENTITYNLM_KERNELS")) {
    const std::string name(env);
    if (name == "scalar") return &scalar_table();
    if (name == "avx2" && avx2_table()) return avx2_table();
    if (name == "neon" && neon_table()) return neon_table();
  }
  if (const KernelTable* t = avx2_table()) return t;
  if (const KernelTable* t = neon_table()) return t;
  return &scalar_table();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{resolve()};
  return table;
}

}  // namespace

const KernelTable& active() { return *current().load(std::memory_order_relaxed); }

bool select(Isa isa) {
  const KernelTable* t = lookup(isa);
  if (!t) return false;
  current().store(t, std::memory_order_relaxed);
  return true;
}

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return "scalar";
    case Isa::kAvx2:
      return "avx2";
    case Isa::kNeon:
      return "neon";
  }
  return "unknown";
}

}  // namespace enlm::kernels
