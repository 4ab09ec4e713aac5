#include "splatctl/error.hpp"
#include "splatctl/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

namespace splatctl::kernels {
namespace {

SimdLevel detect() {
    if (const char* env = std::getenv("SPLATCTL_SIMD")) {
        const std::string v = env;
        if (v == "scalar") return SimdLevel::Scalar;
        if (v == "avx2") {
            if (!supported(SimdLevel::Avx2)) throw DomainError("SPLATCTL_SIMD=avx2 but the CPU lacks AVX2/FMA");
            return SimdLevel::Avx2;
        }
        throw DomainError("SPLATCTL_SIMD must be 'scalar' or 'avx2', got '" + v + "'");
    }
    return supported(SimdLevel::Avx2) ? SimdLevel::Avx2 : SimdLevel::Scalar;
}

std::atomic<const KernelTable*>& current() {
    static std::atomic<const KernelTable*> table{&table_for(detect())};
    return table;
}

} // namespace

std::string_view level_name(SimdLevel level) {
    switch (level) {
    case SimdLevel::Scalar: return "scalar";
    case SimdLevel::Avx2: return "avx2";
    }
    return "unknown";
}

bool supported(SimdLevel level) {
    switch (level) {
    case SimdLevel::Scalar: return true;
    case SimdLevel::Avx2:
#if defined(__x86_64__) || defined(_M_X64)
        return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
        return false;
#endif
    }
    return false;
}

const KernelTable& table_for(SimdLevel level) {
    if (!supported(level)) {
        throw DomainError("SIMD level '" + std::string(level_name(level)) + "' is not supported here");
    }
#if defined(__x86_64__) || defined(_M_X64)
    if (level == SimdLevel::Avx2) return detail::kAvx2Table;
#endif
    return detail::kScalarTable;
}

const KernelTable& active() { return *current().load(std::memory_order_acquire); }

void set_active(SimdLevel level) { current().store(&table_for(level), std::memory_order_release); }

} // namespace splatctl::kernels
