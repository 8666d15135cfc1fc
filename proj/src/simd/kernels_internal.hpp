#pragma once

#include "nds/simd/kernels.hpp"

namespace nds::simd::detail {

#if defined(NDS_HAVE_AVX2)
extern const KernelTable kAvx2;
#endif
#if defined(NDS_HAVE_NEON)
extern const KernelTable kNeon;
#endif

}  // namespace nds::simd::detail
