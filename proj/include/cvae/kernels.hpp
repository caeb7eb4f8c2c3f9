#pragma once

// Dense double-precision kernels backing the math layer. Two backends:
// a scalar reference implementation and an AVX2/FMA variant, selected at
// runtime (CPU detection, overridable). The scalar backend is the numeric
// reference; the AVX2 backend is equivalence-tested against it.

#include <cstddef>

namespace cvae::kernels {

enum class Isa { Scalar, Avx2 };

// All matrices are row-major, double precision.
struct Ops {
  // c (m x n) = a (m x k) * b (k x n)
  void (*matmul)(const double* a, const double* b, double* c, std::size_t m,
                 std::size_t k, std::size_t n);
  // c (m x n) = a^T * b, with a stored (k x m), b stored (k x n)
  void (*matmul_tn)(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t n);
  // c (m x n) = a * b^T, with a stored (m x k), b stored (n x k)
  void (*matmul_nt)(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t n);
  double (*dot)(const double* x, const double* y, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // x *= alpha
  void (*scale)(double alpha, double* x, std::size_t n);
  // y += x
  void (*add)(const double* x, double* y, std::size_t n);
  // out = x .* y
  void (*hadamard)(const double* x, const double* y, double* out,
                   std::size_t n);
  double (*sum)(const double* x, std::size_t n);
  double (*max)(const double* x, std::size_t n);
  const char* name;
};

const Ops& scalar_ops();
const Ops& avx2_ops();  // falls back to the scalar table when not compiled in

bool cpu_has_avx2();
bool avx2_compiled();

// Active backend: explicit selection wins, otherwise CPU detection.
const Ops& active();
void select(Isa isa);  // throws if the requested backend is unavailable
Isa active_isa();

}  // namespace cvae::kernels
