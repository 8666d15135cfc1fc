#pragma once

// Dense double-precision kernels used by every numeric inner loop in the
// project (k-means distances, MLP forward/backward, logistic regression).
//
// Each kernel has a scalar reference implementation plus vectorised variants
// (AVX2+FMA on x86-64, NEON on aarch64). The variant is picked once per
// process from the CPU feature flags; NDS_SIMD=scalar|avx2|neon overrides the
// choice. Variants agree with the reference up to floating-point
// reassociation, and each one is deterministic on its own.

#include <cstddef>
#include <span>
#include <string_view>

namespace nds::simd {

struct KernelTable {
    std::string_view name;
    double (*dot)(const double* a, const double* b, std::size_t n);
    double (*squared_distance)(const double* a, const double* b, std::size_t n);
    // y += alpha * x
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
};

const KernelTable& scalar_kernels() noexcept;
// nullptr when the variant was not compiled in or the CPU lacks the feature.
const KernelTable* avx2_kernels() noexcept;
const KernelTable* neon_kernels() noexcept;

// The table chosen for this process.
const KernelTable& active_kernels() noexcept;

inline double dot(std::span<const double> a, std::span<const double> b) noexcept {
    return active_kernels().dot(a.data(), b.data(), a.size());
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) noexcept {
    return active_kernels().squared_distance(a.data(), b.data(), a.size());
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) noexcept {
    active_kernels().axpy(alpha, x.data(), y.data(), x.size());
}

}  // namespace nds::simd
