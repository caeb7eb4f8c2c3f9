// AVX2/FMA kernels. Compiled with -mavx2 -mfma on x86_64 only; callers must
// gate on cpu_has_avx2(). Accumulation order differs from the scalar backend
// only through 4-wide lanes and fused multiply-add rounding, so results agree
// with the reference to a few ulps (see the kernel equivalence tests).

#include "cvae/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <algorithm>
#include <cstring>

namespace cvae::kernels {
namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d shuf = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, shuf));
}

// crow[0..n) += av * brow[0..n)
inline void fma_row(double av, const double* brow, double* crow,
                    std::size_t n) {
  const __m256d va = _mm256_set1_pd(av);
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    __m256d vb = _mm256_loadu_pd(brow + j);
    __m256d vc = _mm256_loadu_pd(crow + j);
    _mm256_storeu_pd(crow + j, _mm256_fmadd_pd(va, vb, vc));
  }
  for (; j < n; ++j) crow[j] += av * brow[j];
}

void v_matmul(const double* a, const double* b, double* c, std::size_t m,
              std::size_t k, std::size_t n) {
  std::memset(c, 0, m * n * sizeof(double));
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      if (arow[p] == 0.0) continue;
      fma_row(arow[p], b + p * n, crow, n);
    }
  }
}

void v_matmul_tn(const double* a, const double* b, double* c, std::size_t m,
                 std::size_t k, std::size_t n) {
  std::memset(c, 0, m * n * sizeof(double));
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      if (arow[i] == 0.0) continue;
      fma_row(arow[i], brow, c + i * n, n);
    }
  }
}

double v_dot(const double* x, const double* y, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vx = _mm256_loadu_pd(x + i);
    __m256d vy = _mm256_loadu_pd(y + i);
    acc = _mm256_fmadd_pd(vx, vy, acc);
  }
  double tail = 0.0;
  for (; i < n; ++i) tail += x[i] * y[i];
  return hsum(acc) + tail;
}

void v_matmul_nt(const double* a, const double* b, double* c, std::size_t m,
                 std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] = v_dot(arow, b + j * k, k);
  }
}

void v_axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vx = _mm256_loadu_pd(x + i);
    __m256d vy = _mm256_loadu_pd(y + i);
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, vx, vy));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void v_scale(double alpha, double* x, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(x + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) x[i] *= alpha;
}

void v_add(const double* x, double* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vx = _mm256_loadu_pd(x + i);
    __m256d vy = _mm256_loadu_pd(y + i);
    _mm256_storeu_pd(y + i, _mm256_add_pd(vx, vy));
  }
  for (; i < n; ++i) y[i] += x[i];
}

void v_hadamard(const double* x, const double* y, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vx = _mm256_loadu_pd(x + i);
    __m256d vy = _mm256_loadu_pd(y + i);
    _mm256_storeu_pd(out + i, _mm256_mul_pd(vx, vy));
  }
  for (; i < n; ++i) out[i] = x[i] * y[i];
}

double v_sum(const double* x, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  double tail = 0.0;
  for (; i < n; ++i) tail += x[i];
  return hsum(acc) + tail;
}

double v_max(const double* x, std::size_t n) {
  if (n < 8) {
    double best = x[0];
    for (std::size_t i = 1; i < n; ++i) best = std::max(best, x[i]);
    return best;
  }
  __m256d acc = _mm256_loadu_pd(x);
  std::size_t i = 4;
  for (; i + 4 <= n; i += 4) acc = _mm256_max_pd(acc, _mm256_loadu_pd(x + i));
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, acc);
  double best = std::max(std::max(lanes[0], lanes[1]),
                         std::max(lanes[2], lanes[3]));
  for (; i < n; ++i) best = std::max(best, x[i]);
  return best;
}

}  // namespace

const Ops& avx2_ops() {
  static const Ops ops = {v_matmul, v_matmul_tn, v_matmul_nt, v_dot,
                          v_axpy,   v_scale,     v_add,       v_hadamard,
                          v_sum,    v_max,       "avx2"};
  return ops;
}

bool avx2_compiled() { return true; }

}  // namespace cvae::kernels

#else

namespace cvae::kernels {
const Ops& avx2_ops() { return scalar_ops(); }
bool avx2_compiled() { return false; }
}  // namespace cvae::kernels

#endif
