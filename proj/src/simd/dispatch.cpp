#include <cstdlib>
#include <string_view>

#include "kernels_internal.hpp"

namespace nds::simd {

const KernelTable* avx2_kernels() noexcept {
#if defined(NDS_HAVE_AVX2)
    static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    return supported ? &detail::kAvx2 : nullptr;
#else
    return nullptr;
#endif
}

const KernelTable* neon_kernels() noexcept {
#if defined(NDS_HAVE_NEON)
    return &detail::kNeon;  // mandatory on aarch64
#else
    return nullptr;
#endif
}

namespace {

const KernelTable& select_kernels() noexcept {
    const char* env = std::getenv("NDS_SIMD");
    const std::string_view wanted = env ? env : "auto";
    if (wanted == "scalar") return scalar_kernels();
    if (wanted == "avx2" && avx2_kernels()) return *avx2_kernels();
    if (wanted == "neon" && neon_kernels()) return *neon_kernels();
    if (const auto* t = avx2_kernels()) return *t;
    if (const auto* t = neon_kernels()) return *t;
    return scalar_kernels();
}

}  // namespace

const KernelTable& active_kernels() noexcept {
    static const KernelTable& table = select_kernels();
    return table;
}

}  // namespace nds::simd
