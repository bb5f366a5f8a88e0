#include <cmath>
#include <cstddef>

#include "mofelab/kernels/kernels.hpp"

namespace mofelab::kernels {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += a[i] * b[i];
  }
  return acc;
}

double sq_dist_scalar(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = y[i] + alpha * x[i];
  }
}

void scale_scalar(double alpha, double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = x[i] * alpha;
  }
}

void relu_forward_scalar(const double* z, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = z[i] > 0.0 ? z[i] : 0.0;
  }
}

void relu_backward_scalar(const double* z, const double* da, double* dz,
                          std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    dz[i] = z[i] > 0.0 ? da[i] : 0.0;
  }
}

void adam_update_scalar(double* p, const double* g, double* m, double* v,
                        std::size_t n, double lr, double beta1, double beta2,
                        double eps, long step) {
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  const double one_minus_b1 = 1.0 - beta1;
  const double one_minus_b2 = 1.0 - beta2;
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + one_minus_b1 * g[i];
    const double g2 = g[i] * g[i];
    v[i] = beta2 * v[i] + one_minus_b2 * g2;
    const double m_hat = m[i] / c1;
    const double v_hat = v[i] / c2;
    const double denom = std::sqrt(v_hat) + eps;
    p[i] = p[i] - (lr * m_hat) / denom;
  }
}

}  // namespace

const KernelTable* scalar_table() {
  static const KernelTable t = {
      dot_scalar,          sq_dist_scalar,       axpy_scalar,
      scale_scalar,        relu_forward_scalar,  relu_backward_scalar,
      adam_update_scalar,
  };
  return &t;
}

}  // namespace mofelab::kernels
