#pragma once

#include <cstddef>
#include <string_view>

// Vector kernels used by the numeric layers (distance scans, dense net
// forward/backward, Adam updates).  Every kernel has a scalar reference
// implementation and may have ISA-specific variants; the active variant is
// chosen once at runtime from CPU capabilities and can be overridden for
// equivalence testing.
//
// SIMD variants are allowed to reassociate additions and contract into FMA,
// so results may differ from the scalar reference in the low bits.  Within a
// process the active backend is fixed, which keeps every higher-level
// computation bit-reproducible run to run on the same machine.

namespace genepanel::kernels {

enum class Backend {
    auto_detect,  // probe the CPU, prefer the widest available variant
    scalar,
    avx2,
    neon,
};

/// Selects the active backend.  auto_detect re-probes the CPU.  Requesting a
/// backend the CPU cannot execute falls back to scalar.
void set_backend(Backend b);

/// Name of the active backend: "scalar", "avx2" or "neon".
std::string_view backend_name();

/// Sum of x[0..n).
double sum(const double* x, std::size_t n);

/// Dot product of a[0..n) and b[0..n).
double dot(const double* a, const double* b, std::size_t n);

/// Squared euclidean distance between a[0..n) and b[0..n).
double squared_distance(const double* a, const double* b, std::size_t n);

/// y[i] += alpha * x[i] for i in [0, n).
void axpy(double alpha, const double* x, double* y, std::size_t n);

/// x[i] *= alpha for i in [0, n).
void scale(double alpha, double* x, std::size_t n);

/// One Adam update over a parameter block.
///   m[i] = beta1*m[i] + (1-beta1)*g[i]
///   v[i] = beta2*v[i] + (1-beta2)*g[i]^2
///   p[i] -= lr * (m[i]/bias1) / (sqrt(v[i]/bias2) + eps)
/// bias1/bias2 are the step-dependent corrections 1-beta^t, computed by the
/// caller so the kernel stays elementwise.
void adam_update(double* p, double* m, double* v, const double* g, std::size_t n,
                 double lr, double beta1, double beta2, double eps,
                 double bias1, double bias2);

// Per-ISA entry points, exposed so tests can compare variants directly.
namespace detail {

bool cpu_has_avx2();

double sum_scalar(const double* x, std::size_t n);
double dot_scalar(const double* a, const double* b, std::size_t n);
double squared_distance_scalar(const double* a, const double* b, std::size_t n);
void axpy_scalar(double alpha, const double* x, double* y, std::size_t n);
void scale_scalar(double alpha, double* x, std::size_t n);
void adam_update_scalar(double* p, double* m, double* v, const double* g, std::size_t n,
                        double lr, double beta1, double beta2, double eps,
                        double bias1, double bias2);

#if defined(__x86_64__) || defined(_M_X64)
double sum_avx2(const double* x, std::size_t n);
double dot_avx2(const double* a, const double* b, std::size_t n);
double squared_distance_avx2(const double* a, const double* b, std::size_t n);
void axpy_avx2(double alpha, const double* x, double* y, std::size_t n);
void scale_avx2(double alpha, double* x, std::size_t n);
void adam_update_avx2(double* p, double* m, double* v, const double* g, std::size_t n,
                      double lr, double beta1, double beta2, double eps,
                      double bias1, double bias2);
#endif

#if defined(__ARM_NEON) || defined(__aarch64__)
double sum_neon(const double* x, std::size_t n);
double dot_neon(const double* a, const double* b, std::size_t n);
double squared_distance_neon(const double* a, const double* b, std::size_t n);
void axpy_neon(double alpha, const double* x, double* y, std::size_t n);
void scale_neon(double alpha, double* x, std::size_t n);
void adam_update_neon(double* p, double* m, double* v, const double* g, std::size_t n,
                      double lr, double beta1, double beta2, double eps,
                      double bias1, double bias2);
#endif

}  // namespace detail

}  // namespace genepanel::kernels
