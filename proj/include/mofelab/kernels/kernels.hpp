#pragma once

#include <cstddef>

namespace mofelab::kernels {

// Data-parallel inner loops behind all dense arithmetic. Each primitive has a
// scalar reference implementation and may have SIMD variants; the active
// variant is chosen once at startup (CPU detection, overridable via the
// MOFELAB_KERNELS environment variable or set_backend).
//
// Elementwise primitives (axpy, scale, relu_*, adam_update) are specified to
// produce bit-identical results on every backend: each element is computed by
// the same sequence of individually rounded IEEE-754 operations. Reductions
// (dot, sq_dist) may reassociate and agree only to rounding.

enum class Backend {
  scalar,
  avx2,
};

const char* backend_name(Backend b);

// Detected-or-overridden backend used by the forwarding functions below.
Backend active_backend();

// Force a specific backend. Throws ConfigError if unsupported on this CPU.
void set_backend(Backend b);

bool backend_supported(Backend b);

struct KernelTable {
  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*sq_dist)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // x *= alpha
  void (*scale)(double alpha, double* x, std::size_t n);
  // out = max(z, 0)
  void (*relu_forward)(const double* z, double* out, std::size_t n);
  // dz = (z > 0) ? da : 0   (subgradient at the kink is 0)
  void (*relu_backward)(const double* z, const double* da, double* dz,
                        std::size_t n);
  // Bias-corrected Adam update of p, m, v in place; step is the 1-based step
  // count after this update.
  void (*adam_update)(double* p, const double* g, double* m, double* v,
                      std::size_t n, double lr, double beta1, double beta2,
                      double eps, long step);
};

const KernelTable& table(Backend b);

inline const KernelTable& active_table() { return table(active_backend()); }

inline double dot(const double* a, const double* b, std::size_t n) {
  return active_table().dot(a, b, n);
}

inline double sq_dist(const double* a, const double* b, std::size_t n) {
  return active_table().sq_dist(a, b, n);
}

inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
  active_table().axpy(alpha, x, y, n);
}

inline void scale(double alpha, double* x, std::size_t n) {
  active_table().scale(alpha, x, n);
}

inline void relu_forward(const double* z, double* out, std::size_t n) {
  active_table().relu_forward(z, out, n);
}

inline void relu_backward(const double* z, const double* da, double* dz,
                          std::size_t n) {
  active_table().relu_backward(z, da, dz, n);
}

inline void adam_update(double* p, const double* g, double* m, double* v,
                        std::size_t n, double lr, double beta1, double beta2,
                        double eps, long step) {
  active_table().adam_update(p, g, m, v, n, lr, beta1, beta2, eps, step);
}

// Row-major matrix helpers composed from the primitives above.

// y = A x, A is rows x cols.
void matvec(const double* a, const double* x, double* y, std::size_t rows,
            std::size_t cols);

// dx += A^T dy.
void matvec_t_acc(const double* a, const double* dy, double* dx,
                  std::size_t rows, std::size_t cols);

// dW += dy x^T (outer product accumulate).
void ger_acc(const double* dy, const double* x, double* dw, std::size_t rows,
             std::size_t cols);

}  // namespace mofelab::kernels
