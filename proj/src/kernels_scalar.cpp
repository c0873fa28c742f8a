#include <cmath>

#include "csdm/kernels.hpp"

namespace csdm::kernels {
namespace {

double s_dot(const double* x, const double* y, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

void s_axpy(double a, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void s_scale(double a, double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] *= a;
}

void s_matmul_nn(const double* a, const double* b, double* c, std::size_t n,
                 std::size_t k, std::size_t m) {
    for (std::size_t i = 0; i < n; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = ai[p];
            const double* bp = b + p * m;
            for (std::size_t j = 0; j < m; ++j) ci[j] += aip * bp[j];
        }
    }
}

void s_matmul_nt(const double* a, const double* b, double* c, std::size_t n,
                 std::size_t k, std::size_t m) {
    for (std::size_t i = 0; i < n; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * m;
        for (std::size_t j = 0; j < m; ++j) ci[j] += s_dot(ai, b + j * k, k);
    }
}

void s_matmul_tn(const double* a, const double* b, double* c, std::size_t n,
                 std::size_t k, std::size_t m) {
    // a stored [k,n]; c[i,j] += sum_p a[p,i] * b[p,j]
    for (std::size_t p = 0; p < k; ++p) {
        const double* ap = a + p * n;
        const double* bp = b + p * m;
        for (std::size_t i = 0; i < n; ++i) {
            const double api = ap[i];
            double* ci = c + i * m;
            for (std::size_t j = 0; j < m; ++j) ci[j] += api * bp[j];
        }
    }
}

void s_adam(double* w, const double* g, double* m, double* v, std::size_t n,
            double lr, double beta1, double beta2, double eps, double bc1,
            double bc2) {
    for (std::size_t i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        w[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
}

}  // namespace

const Ops& scalar_ops() {
    static const Ops ops = {"scalar",   s_dot,       s_axpy,     s_scale,
                            s_matmul_nn, s_matmul_nt, s_matmul_tn, s_adam};
    return ops;
}

}  // namespace csdm::kernels
