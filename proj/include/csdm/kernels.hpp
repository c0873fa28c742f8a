#pragma once

#include <cstddef>

namespace csdm::kernels {

// Flat-array inner loops behind the tensor ops. Scalar versions are the
// reference; the AVX2 set is selected at runtime when the CPU supports
// AVX2+FMA and must match the scalar results (equivalence-tested).
//
// Matmul naming: nn means C[n,m] += A[n,k] * B[k,m]; nt uses B stored as
// [m,k] (B transposed); tn uses A stored as [k,n] (A transposed). All
// row-major, all accumulate into C.
struct Ops {
    const char* name;

    double (*dot)(const double* x, const double* y, std::size_t n);
    // y += a * x
    void (*axpy)(double a, const double* x, double* y, std::size_t n);
    // x *= a
    void (*scale)(double a, double* x, std::size_t n);
    void (*matmul_nn)(const double* a, const double* b, double* c,
                      std::size_t n, std::size_t k, std::size_t m);
    void (*matmul_nt)(const double* a, const double* b, double* c,
                      std::size_t n, std::size_t k, std::size_t m);
    void (*matmul_tn)(const double* a, const double* b, double* c,
                      std::size_t n, std::size_t k, std::size_t m);
    // In-place Adam update on w; g/m/v are same length. bc1/bc2 are the
    // bias-correction denominators (1 - beta^step).
    void (*adam)(double* w, const double* g, double* m, double* v,
                 std::size_t n, double lr, double beta1, double beta2,
                 double eps, double bc1, double bc2);
};

const Ops& scalar_ops();
const Ops* avx2_ops();  // nullptr when unsupported by this CPU

// Active set: AVX2 when available, else scalar. CSDM_KERNELS=scalar|avx2
// overrides (avx2 on an unsupported CPU falls back to scalar).
const Ops& active();

}  // namespace csdm::kernels
