#include "genepanel/kernels.hpp"

#include <atomic>
#include <cmath>

#if defined(__aarch64__)
#include <arm_neon.h>
#endif

namespace genepanel::kernels {

namespace detail {

double sum_scalar(const double* x, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}

double dot_scalar(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

double squared_distance_scalar(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void scale_scalar(double alpha, double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] *= alpha;
}

void adam_update_scalar(double* p, double* m, double* v, const double* g, std::size_t n,
                        double lr, double beta1, double beta2, double eps,
                        double bias1, double bias2) {
    for (std::size_t i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        p[i] -= lr * (m[i] / bias1) / (std::sqrt(v[i] / bias2) + eps);
    }
}

#if defined(__aarch64__)

double sum_neon(const double* x, std::size_t n) {
    float64x2_t acc = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) acc = vaddq_f64(acc, vld1q_f64(x + i));
    double out = vaddvq_f64(acc);
    for (; i < n; ++i) out += x[i];
    return out;
}

double dot_neon(const double* a, const double* b, std::size_t n) {
    float64x2_t acc = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) acc = vfmaq_f64(acc, vld1q_f64(a + i), vld1q_f64(b + i));
    double out = vaddvq_f64(acc);
    for (; i < n; ++i) out += a[i] * b[i];
    return out;
}

double squared_distance_neon(const double* a, const double* b, std::size_t n) {
    float64x2_t acc = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        const float64x2_t d = vsubq_f64(vld1q_f64(a + i), vld1q_f64(b + i));
        acc = vfmaq_f64(acc, d, d);
    }
    double out = vaddvq_f64(acc);
    for (; i < n; ++i) {
        const double d = a[i] - b[i];
        out += d * d;
    }
    return out;
}

void axpy_neon(double alpha, const double* x, double* y, std::size_t n) {
    const float64x2_t va = vdupq_n_f64(alpha);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2)
        vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), va, vld1q_f64(x + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void scale_neon(double alpha, double* x, std::size_t n) {
    const float64x2_t va = vdupq_n_f64(alpha);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(x + i, vmulq_f64(vld1q_f64(x + i), va));
    for (; i < n; ++i) x[i] *= alpha;
}

void adam_update_neon(double* p, double* m, double* v, const double* g, std::size_t n,
                      double lr, double beta1, double beta2, double eps,
                      double bias1, double bias2) {
    const float64x2_t vb1 = vdupq_n_f64(beta1), vb1c = vdupq_n_f64(1.0 - beta1);
    const float64x2_t vb2 = vdupq_n_f64(beta2), vb2c = vdupq_n_f64(1.0 - beta2);
    const float64x2_t vlr = vdupq_n_f64(lr), veps = vdupq_n_f64(eps);
    const float64x2_t vib1 = vdupq_n_f64(1.0 / bias1), vib2 = vdupq_n_f64(1.0 / bias2);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        const float64x2_t gi = vld1q_f64(g + i);
        float64x2_t mi = vfmaq_f64(vmulq_f64(vb1c, gi), vb1, vld1q_f64(m + i));
        float64x2_t vi = vfmaq_f64(vmulq_f64(vmulq_f64(vb2c, gi), gi), vb2, vld1q_f64(v + i));
        vst1q_f64(m + i, mi);
        vst1q_f64(v + i, vi);
        const float64x2_t mhat = vmulq_f64(mi, vib1);
        const float64x2_t denom = vaddq_f64(vsqrtq_f64(vmulq_f64(vi, vib2)), veps);
        vst1q_f64(p + i, vsubq_f64(vld1q_f64(p + i), vdivq_f64(vmulq_f64(vlr, mhat), denom)));
    }
    if (i < n)
        adam_update_scalar(p + i, m + i, v + i, g + i, n - i, lr, beta1, beta2, eps, bias1, bias2);
}

#endif  // __aarch64__

}  // namespace detail

namespace {

struct Table {
    std::string_view name;
    double (*sum)(const double*, std::size_t);
    double (*dot)(const double*, const double*, std::size_t);
    double (*sqdist)(const double*, const double*, std::size_t);
    void (*axpy)(double, const double*, double*, std::size_t);
    void (*scale)(double, double*, std::size_t);
    void (*adam)(double*, double*, double*, const double*, std::size_t,
                 double, double, double, double, double, double);
};

constexpr Table kScalar{
    "scalar",
    detail::sum_scalar,
    detail::dot_scalar,
    detail::squared_distance_scalar,
    detail::axpy_scalar,
    detail::scale_scalar,
    detail::adam_update_scalar,
};

#if defined(__x86_64__) || defined(_M_X64)
constexpr Table kAvx2{
    "avx2",
    detail::sum_avx2,
    detail::dot_avx2,
    detail::squared_distance_avx2,
    detail::axpy_avx2,
    detail::scale_avx2,
    detail::adam_update_avx2,
};
#endif

#if defined(__aarch64__)
constexpr Table kNeon{
    "neon",
    detail::sum_neon,
    detail::dot_neon,
    detail::squared_distance_neon,
    detail::axpy_neon,
    detail::scale_neon,
    detail::adam_update_neon,
};
#endif

const Table* pick(Backend b) {
    switch (b) {
        case Backend::scalar:
            return &kScalar;
        case Backend::avx2:
#if defined(__x86_64__) || defined(_M_X64)
            if (detail::cpu_has_avx2()) return &kAvx2;
#endif
            return &kScalar;
        case Backend::neon:
#if defined(__aarch64__)
            return &kNeon;
#else
            return &kScalar;
#endif
        case Backend::auto_detect:
        default:
#if defined(__x86_64__) || defined(_M_X64)
            if (detail::cpu_has_avx2()) return &kAvx2;
#endif
#if defined(__aarch64__)
            return &kNeon;
#else
            return &kScalar;
#endif
    }
}

std::atomic<const Table*> g_active{nullptr};

const Table& active() {
    const Table* t = g_active.load(std::memory_order_acquire);
    if (!t) {
        t = pick(Backend::auto_detect);
        g_active.store(t, std::memory_order_release);
    }
    return *t;
}

}  // namespace

void set_backend(Backend b) { g_active.store(pick(b), std::memory_order_release); }

std::string_view backend_name() { return active().name; }

double sum(const double* x, std::size_t n) { return active().sum(x, n); }

double dot(const double* a, const double* b, std::size_t n) { return active().dot(a, b, n); }

double squared_distance(const double* a, const double* b, std::size_t n) {
    return active().sqdist(a, b, n);
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    active().axpy(alpha, x, y, n);
}

void scale(double alpha, double* x, std::size_t n) { active().scale(alpha, x, n); }

void adam_update(double* p, double* m, double* v, const double* g, std::size_t n,
                 double lr, double beta1, double beta2, double eps,
                 double bias1, double bias2) {
    active().adam(p, m, v, g, n, lr, beta1, beta2, eps, bias1, bias2);
}

}  // namespace genepanel::kernels
