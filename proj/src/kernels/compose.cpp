// Matrix helpers composed from the primitive kernels. matvec_t_acc and
// ger_acc reduce to axpy, so they inherit axpy's bit-identical-across-backends
// guarantee; matvec reduces to dot and agrees only to rounding.

#include "mofelab/kernels/kernels.hpp"

namespace mofelab::kernels {

void matvec(const double* a, const double* x, double* y, std::size_t rows,
            std::size_t cols) {
  const KernelTable& k = active_table();
  for (std::size_t r = 0; r < rows; ++r) {
    y[r] = k.dot(a + r * cols, x, cols);
  }
}

void matvec_t_acc(const double* a, const double* dy, double* dx,
                  std::size_t rows, std::size_t cols) {
  const KernelTable& k = active_table();
  for (std::size_t r = 0; r < rows; ++r) {
    k.axpy(dy[r], a + r * cols, dx, cols);
  }
}

void ger_acc(const double* dy, const double* x, double* dw, std::size_t rows,
             std::size_t cols) {
  const KernelTable& k = active_table();
  for (std::size_t r = 0; r < rows; ++r) {
    k.axpy(dy[r], x, dw + r * cols, cols);
  }
}

}  // namespace mofelab::kernels
