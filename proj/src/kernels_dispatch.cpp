#include <cstdlib>
#include <cstring>

#include "csdm/kernels.hpp"

namespace csdm::kernels {

#if defined(__x86_64__) || defined(_M_X64)
const Ops* avx2_ops_impl();  // defined in kernels_avx2.cpp

const Ops* avx2_ops() {
    static const Ops* ops = [] {
        __builtin_cpu_init();
        if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma"))
            return avx2_ops_impl();
        return static_cast<const Ops*>(nullptr);
    }();
    return ops;
}
#else
const Ops* avx2_ops() { return nullptr; }
#endif

const Ops& active() {
    static const Ops* chosen = [] {
        const char* forced = std::getenv("CSDM_KERNELS");
        if (forced && std::strcmp(forced, "scalar") == 0) return &scalar_ops();
        const Ops* a = avx2_ops();
        return a ? a : &scalar_ops();
    }();
    return *chosen;
}

}  // namespace csdm::kernels
