#include <doctest.h>

#include <cmath>
#include <vector>

#include "cvae/kernels.hpp"
#include "cvae/matrix.hpp"
#include "cvae/rng.hpp"
#include "oracles.hpp"

using cvae::nd::Matrix;
using cvae::nd::RngStream;
namespace kernels = cvae::kernels;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, RngStream& rng,
                     double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (auto& v : m.data) v = lo + (hi - lo) * rng.uniform();
  return m;
}

// |a - b| <= tol * sum|terms| guards against cancellation-blown relative
// error while staying tight for well-conditioned sums.
void check_close_scaled(double a, double b, double magnitude, double tol) {
  CHECK(std::fabs(a - b) <= tol * std::max(1.0, magnitude));
}

}  // namespace

TEST_CASE("matmul: identity and hand examples") {
  Matrix eye(3, 3);
  for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  RngStream rng(42);
  Matrix a = random_matrix(3, 3, rng);
  Matrix p = cvae::nd::matmul(eye, a);
  for (std::size_t i = 0; i < a.size(); ++i)
    CHECK(p.data[i] == doctest::Approx(a.data[i]).epsilon(1e-15));

  Matrix x(2, 2);
  x.data = {1, 2, 3, 4};
  Matrix ones(2, 1);
  ones.data = {1, 1};
  Matrix y = cvae::nd::matmul(x, ones);
  CHECK(y.at(0, 0) == doctest::Approx(3.0));
  CHECK(y.at(1, 0) == doctest::Approx(7.0));
}

TEST_CASE("matmul: random 5x4 * 4x3 matches naive oracle") {
  RngStream rng(7);
  Matrix a = random_matrix(5, 4, rng);
  Matrix b = random_matrix(4, 3, rng);
  Matrix got = cvae::nd::matmul(a, b);
  Matrix want = oracles::naive_matmul(a, b);
  for (std::size_t i = 0; i < got.size(); ++i) {
    const double rel = std::fabs(got.data[i] - want.data[i]) /
                       std::max(1e-30, std::fabs(want.data[i]));
    CHECK(rel <= 1e-12);
  }
}

TEST_CASE("matmul: dimension mismatch throws") {
  Matrix a(2, 3), b(2, 3);
  CHECK_THROWS(cvae::nd::matmul(a, b));
  CHECK_THROWS(cvae::nd::matmul_tn(Matrix(2, 3), Matrix(3, 2)));
  CHECK_THROWS(cvae::nd::matmul_nt(Matrix(2, 3), Matrix(2, 4)));
}

TEST_CASE("transposed variants agree with explicit transposes") {
  RngStream rng(11);
  Matrix a = random_matrix(6, 4, rng);
  Matrix b = random_matrix(6, 5, rng);
  Matrix at(4, 6);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 4; ++j) at.at(j, i) = a.at(i, j);
  Matrix got = cvae::nd::matmul_tn(a, b);  // a^T b
  Matrix want = oracles::naive_matmul(at, b);
  for (std::size_t i = 0; i < got.size(); ++i)
    CHECK(got.data[i] == doctest::Approx(want.data[i]).epsilon(1e-12));

  Matrix c = random_matrix(3, 4, rng);
  Matrix d = random_matrix(5, 4, rng);
  Matrix dt(4, 5);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 4; ++j) dt.at(j, i) = d.at(i, j);
  Matrix got2 = cvae::nd::matmul_nt(c, d);  // c d^T
  Matrix want2 = oracles::naive_matmul(c, dt);
  for (std::size_t i = 0; i < got2.size(); ++i)
    CHECK(got2.data[i] == doctest::Approx(want2.data[i]).epsilon(1e-12));
}

TEST_CASE("avx2 backend matches the scalar reference") {
  if (!kernels::cpu_has_avx2()) {
    MESSAGE("avx2 unavailable on this host, skipping equivalence checks");
    return;
  }
  const auto& sc = kernels::scalar_ops();
  const auto& vx = kernels::avx2_ops();
  RngStream rng(123);

  SUBCASE("matmul variants") {
    for (auto [m, k, n] : {std::tuple<int, int, int>{7, 13, 9},
                           {1, 600, 200},
                           {33, 41, 5},
                           {4, 4, 4}}) {
      Matrix a = random_matrix(m, k, rng);
      Matrix b = random_matrix(k, n, rng);
      std::vector<double> c1(m * n), c2(m * n);
      sc.matmul(a.data.data(), b.data.data(), c1.data(), m, k, n);
      vx.matmul(a.data.data(), b.data.data(), c2.data(), m, k, n);
      for (std::size_t i = 0; i < c1.size(); ++i)
        check_close_scaled(c1[i], c2[i], static_cast<double>(k), 1e-13);

      Matrix bt = random_matrix(n, k, rng);
      std::vector<double> d1(m * n), d2(m * n);
      sc.matmul_nt(a.data.data(), bt.data.data(), d1.data(), m, k, n);
      vx.matmul_nt(a.data.data(), bt.data.data(), d2.data(), m, k, n);
      for (std::size_t i = 0; i < d1.size(); ++i)
        check_close_scaled(d1[i], d2[i], static_cast<double>(k), 1e-13);

      Matrix atn = random_matrix(k, m, rng);
      std::vector<double> e1(m * n), e2(m * n);
      sc.matmul_tn(atn.data.data(), b.data.data(), e1.data(), m, k, n);
      vx.matmul_tn(atn.data.data(), b.data.data(), e2.data(), m, k, n);
      for (std::size_t i = 0; i < e1.size(); ++i)
        check_close_scaled(e1[i], e2[i], static_cast<double>(k), 1e-13);
    }
  }

  SUBCASE("elementwise and reductions, including non-multiple-of-4 tails") {
    for (std::size_t n : {1u, 3u, 4u, 5u, 17u, 128u, 1001u}) {
      Matrix x = random_matrix(1, n, rng);
      Matrix y = random_matrix(1, n, rng);

      check_close_scaled(sc.dot(x.data.data(), y.data.data(), n),
                         vx.dot(x.data.data(), y.data.data(), n),
                         static_cast<double>(n), 1e-13);
      check_close_scaled(sc.sum(x.data.data(), n), vx.sum(x.data.data(), n),
                         static_cast<double>(n), 1e-13);
      CHECK(sc.max(x.data.data(), n) == vx.max(x.data.data(), n));

      std::vector<double> y1 = y.data, y2 = y.data;
      sc.axpy(0.37, x.data.data(), y1.data(), n);
      vx.axpy(0.37, x.data.data(), y2.data(), n);
      for (std::size_t i = 0; i < n; ++i)
        check_close_scaled(y1[i], y2[i], 1.0, 1e-15);

      std::vector<double> h1(n), h2(n);
      sc.hadamard(x.data.data(), y.data.data(), h1.data(), n);
      vx.hadamard(x.data.data(), y.data.data(), h2.data(), n);
      CHECK(h1 == h2);  // single multiply per lane: bitwise equal

      std::vector<double> s1 = x.data, s2 = x.data;
      sc.scale(-1.7, s1.data(), n);
      vx.scale(-1.7, s2.data(), n);
      CHECK(s1 == s2);

      std::vector<double> a1 = x.data, a2 = x.data;
      sc.add(y.data.data(), a1.data(), n);
      vx.add(y.data.data(), a2.data(), n);
      CHECK(a1 == a2);
    }
  }
}

TEST_CASE("backend selection is explicit and reversible") {
  const auto before = kernels::active_isa();
  kernels::select(kernels::Isa::Scalar);
  CHECK(kernels::active_isa() == kernels::Isa::Scalar);
  CHECK(std::string(kernels::active().name) == "scalar");
  if (kernels::cpu_has_avx2()) {
    kernels::select(kernels::Isa::Avx2);
    CHECK(std::string(kernels::active().name) == "avx2");
  } else {
    CHECK_THROWS(kernels::select(kernels::Isa::Avx2));
  }
  kernels::select(before);
}
