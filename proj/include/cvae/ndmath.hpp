#pragma once

// Numeric layer for the hand-derived backpropagation: activations, stable
// log-softmax, dropout, parameter initialization, Adam, and the
// finite-difference gradient checker used to validate every backward pass.

#include <cstddef>
#include <functional>
#include <vector>

#include "cvae/matrix.hpp"
#include "cvae/rng.hpp"

namespace cvae::nd {

// y = tanh(x), elementwise.
void tanh_forward(const double* x, double* y, std::size_t n);
Matrix tanh_forward(const Matrix& x);

// grad = upstream .* (1 - y^2), where y = tanh(x).
void tanh_backward(const double* y, const double* upstream, double* grad,
                   std::size_t n);
Matrix tanh_backward(const Matrix& y, const Matrix& upstream);

// Max-subtracted log-softmax over an n-vector.
void log_softmax(const double* logits, double* out, std::size_t n);
std::vector<double> log_softmax(const std::vector<double>& logits);

// Unit L2 norm; the zero vector maps to itself.
void l2_normalize(double* x, std::size_t n);
std::vector<double> l2_normalize(std::vector<double> x);

// Inverted dropout. In training mode each entry of mask is 0 (dropped) or
// 1/(1-p) (kept), and y = x .* mask; in inference mode y = x and the mask is
// all ones. Each entry consumes one uniform draw in training mode.
void dropout_forward(const double* x, std::size_t n, double p, RngStream& rng,
                     bool training, double* y, double* mask);

// Weights uniform on [-sqrt(6/(rows+cols)), +sqrt(6/(rows+cols))].
Matrix xavier_uniform(std::size_t rows, std::size_t cols, RngStream& rng);

// Biases normal with mean 0 and standard deviation 0.001.
Matrix bias_init(std::size_t len, RngStream& rng);

struct AdamState {
  std::uint64_t step = 0;
  Matrix first_moment;
  Matrix second_moment;
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_hat = 1e-8;

  AdamState() = default;
  AdamState(std::size_t rows, std::size_t cols, double learning_rate)
      : first_moment(rows, cols),
        second_moment(rows, cols),
        lr(learning_rate) {}
};

// One bias-corrected Adam step in place. Throws on non-finite gradients so a
// diverging run aborts instead of writing NaNs into the parameters.
void adam_update(Matrix& param, const Matrix& grad, AdamState& state);

// Central-difference gradient check. `f` evaluates the scalar loss at the
// current parameter values; `params` and `analytic` are parallel lists.
// Returns the max over all coordinates of |a - n| / max(|a|, |n|, 1e-8).
double grad_check(const std::function<double()>& f,
                  const std::vector<Matrix*>& params,
                  const std::vector<const Matrix*>& analytic, double h);

}  // namespace cvae::nd
