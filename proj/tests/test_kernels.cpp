#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "doctest.h"
#include "mofelab/error.hpp"
#include "mofelab/kernels/kernels.hpp"
#include "mofelab/rng.hpp"

namespace mk = mofelab::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t tag) {
  mofelab::Rng rng = mofelab::make_rng(1234, tag);
  std::uniform_real_distribution<double> dist(-2.0, 2.0);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i]))
      return false;
  }
  return true;
}

// Odd length so SIMD variants have to exercise their remainder loops.
constexpr std::size_t kN = 13;

}  // namespace

TEST_CASE("scalar dot and sq_dist match hand values") {
  const mk::KernelTable& k = mk::table(mk::Backend::scalar);
  const double a[3] = {1.0, 2.0, 3.0};
  const double b[3] = {4.0, -5.0, 6.0};
  CHECK(k.dot(a, b, 3) == doctest::Approx(12.0));
  CHECK(k.dot(a, b, 0) == 0.0);
  // (1-4)^2 + (2+5)^2 + (3-6)^2 = 9 + 49 + 9
  CHECK(k.sq_dist(a, b, 3) == doctest::Approx(67.0));
}

TEST_CASE("scalar axpy, scale and relu") {
  const mk::KernelTable& k = mk::table(mk::Backend::scalar);
  double y[3] = {1.0, 1.0, 1.0};
  const double x[3] = {1.0, -2.0, 0.5};
  k.axpy(2.0, x, y, 3);
  CHECK(y[0] == 3.0);
  CHECK(y[1] == -3.0);
  CHECK(y[2] == 2.0);
  k.scale(-1.0, y, 3);
  CHECK(y[0] == -3.0);

  const double z[4] = {-1.0, 0.0, 2.5, -0.0};
  double out[4];
  k.relu_forward(z, out, 4);
  CHECK(out[0] == 0.0);
  CHECK(out[1] == 0.0);
  CHECK(out[2] == 2.5);
  CHECK(std::bit_cast<std::uint64_t>(out[3]) == 0);  // -0 maps to +0

  const double da[4] = {10.0, 10.0, 10.0, 10.0};
  double dz[4];
  k.relu_backward(z, da, dz, 4);
  CHECK(dz[0] == 0.0);
  CHECK(dz[1] == 0.0);  // subgradient at the kink is 0
  CHECK(dz[2] == 10.0);
  CHECK(dz[3] == 0.0);
}

TEST_CASE("adam first step moves by -lr/(1+eps) on unit gradient") {
  const mk::KernelTable& k = mk::table(mk::Backend::scalar);
  double p = 0.0, g = 1.0, m = 0.0, v = 0.0;
  k.adam_update(&p, &g, &m, &v, 1, 0.1, 0.9, 0.999, 1e-8, 1);
  // Bias correction makes m_hat = v_hat = 1 regardless of the betas.
  CHECK(p == doctest::Approx(-0.1 / (1.0 + 1e-8)).epsilon(1e-12));
  CHECK(m == doctest::Approx(0.1));
  CHECK(v == doctest::Approx(0.001));
}

TEST_CASE("backend plumbing") {
  CHECK(mk::backend_supported(mk::Backend::scalar));
  CHECK(mk::backend_name(mk::Backend::scalar) == std::string("scalar"));
  CHECK(mk::backend_name(mk::Backend::avx2) == std::string("avx2"));

  const mk::Backend before = mk::active_backend();
  mk::set_backend(mk::Backend::scalar);
  CHECK(mk::active_backend() == mk::Backend::scalar);
  mk::set_backend(before);
  CHECK(mk::active_backend() == before);
}

TEST_CASE("elementwise kernels are bit-identical across backends") {
  if (!mk::backend_supported(mk::Backend::avx2)) {
    MESSAGE("avx2 not supported on this CPU; skipping");
    return;
  }
  const mk::KernelTable& s = mk::table(mk::Backend::scalar);
  const mk::KernelTable& a = mk::table(mk::Backend::avx2);

  std::vector<double> x = random_vec(kN, 1);
  x[3] = 0.0;
  x[7] = -0.0;
  x[11] = std::numeric_limits<double>::quiet_NaN();

  SUBCASE("axpy") {
    std::vector<double> y0 = random_vec(kN, 2), y1 = y0;
    s.axpy(0.37, x.data(), y0.data(), kN);
    a.axpy(0.37, x.data(), y1.data(), kN);
    // NaN slots are NaN in both; compare the rest bitwise.
    for (std::size_t i = 0; i < kN; ++i) {
      if (i == 11) {
        CHECK(std::isnan(y0[i]));
        CHECK(std::isnan(y1[i]));
      } else {
        CHECK(std::bit_cast<std::uint64_t>(y0[i]) ==
              std::bit_cast<std::uint64_t>(y1[i]));
      }
    }
  }
  SUBCASE("scale") {
    std::vector<double> y0 = random_vec(kN, 3), y1 = y0;
    s.scale(-1.7, y0.data(), kN);
    a.scale(-1.7, y1.data(), kN);
    CHECK(bitwise_equal(y0, y1));
  }
  SUBCASE("relu forward and backward") {
    std::vector<double> o0(kN), o1(kN);
    s.relu_forward(x.data(), o0.data(), kN);
    a.relu_forward(x.data(), o1.data(), kN);
    CHECK(bitwise_equal(o0, o1));  // NaN input maps to 0 on both

    std::vector<double> da_in = random_vec(kN, 4);
    std::vector<double> d0(kN), d1(kN);
    s.relu_backward(x.data(), da_in.data(), d0.data(), kN);
    a.relu_backward(x.data(), da_in.data(), d1.data(), kN);
    CHECK(bitwise_equal(d0, d1));
  }
  SUBCASE("adam_update over several steps") {
    std::vector<double> p0 = random_vec(kN, 5), p1 = p0;
    std::vector<double> m0(kN, 0.0), m1(kN, 0.0), v0(kN, 0.0), v1(kN, 0.0);
    for (long step = 1; step <= 5; ++step) {
      std::vector<double> g = random_vec(kN, 100 + static_cast<std::uint64_t>(step));
      s.adam_update(p0.data(), g.data(), m0.data(), v0.data(), kN, 0.01, 0.9,
                    0.999, 1e-8, step);
      a.adam_update(p1.data(), g.data(), m1.data(), v1.data(), kN, 0.01, 0.9,
                    0.999, 1e-8, step);
    }
    CHECK(bitwise_equal(p0, p1));
    CHECK(bitwise_equal(m0, m1));
    CHECK(bitwise_equal(v0, v1));
  }
}

TEST_CASE("reductions agree across backends to rounding") {
  if (!mk::backend_supported(mk::Backend::avx2)) {
    MESSAGE("avx2 not supported on this CPU; skipping");
    return;
  }
  const mk::KernelTable& s = mk::table(mk::Backend::scalar);
  const mk::KernelTable& a = mk::table(mk::Backend::avx2);
  for (std::size_t n : {std::size_t{1}, std::size_t{4}, std::size_t{13},
                        std::size_t{256}, std::size_t{1000}}) {
    std::vector<double> x = random_vec(n, 10 + n), y = random_vec(n, 20 + n);
    CHECK(s.dot(x.data(), y.data(), n) ==
          doctest::Approx(a.dot(x.data(), y.data(), n)).epsilon(1e-13));
    CHECK(s.sq_dist(x.data(), y.data(), n) ==
          doctest::Approx(a.sq_dist(x.data(), y.data(), n)).epsilon(1e-13));
  }
}

TEST_CASE("matvec family matches a naive loop and is backend-stable") {
  const std::size_t rows = 5, cols = 7;
  std::vector<double> A = random_vec(rows * cols, 30);
  std::vector<double> x = random_vec(cols, 31);
  std::vector<double> dy = random_vec(rows, 32);

  const mk::Backend before = mk::active_backend();
  mk::set_backend(mk::Backend::scalar);

  std::vector<double> y(rows);
  mk::matvec(A.data(), x.data(), y.data(), rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += A[r * cols + c] * x[c];
    CHECK(y[r] == doctest::Approx(acc).epsilon(1e-13));
  }

  std::vector<double> dx(cols, 0.0);
  mk::matvec_t_acc(A.data(), dy.data(), dx.data(), rows, cols);
  for (std::size_t c = 0; c < cols; ++c) {
    double acc = 0.0;
    for (std::size_t r = 0; r < rows; ++r) acc += A[r * cols + c] * dy[r];
    CHECK(dx[c] == doctest::Approx(acc).epsilon(1e-12));
  }

  std::vector<double> dW(rows * cols, 0.0);
  mk::ger_acc(dy.data(), x.data(), dW.data(), rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      CHECK(dW[r * cols + c] == doctest::Approx(dy[r] * x[c]).epsilon(1e-13));

  if (mk::backend_supported(mk::Backend::avx2)) {
    // axpy-composed helpers keep the elementwise bitwise guarantee.
    mk::set_backend(mk::Backend::avx2);
    std::vector<double> dx2(cols, 0.0), dW2(rows * cols, 0.0);
    mk::matvec_t_acc(A.data(), dy.data(), dx2.data(), rows, cols);
    mk::ger_acc(dy.data(), x.data(), dW2.data(), rows, cols);
    CHECK(bitwise_equal(dx, dx2));
    CHECK(bitwise_equal(dW, dW2));
  }
  mk::set_backend(before);
}
