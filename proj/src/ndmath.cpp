#include "cvae/ndmath.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cvae/kernels.hpp"

namespace cvae::nd {

void tanh_forward(const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
}

Matrix tanh_forward(const Matrix& x) {
  Matrix y(x.rows, x.cols);
  tanh_forward(x.data.data(), y.data.data(), x.size());
  return y;
}

void tanh_backward(const double* y, const double* upstream, double* grad,
                   std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) grad[i] = upstream[i] * (1.0 - y[i] * y[i]);
}

Matrix tanh_backward(const Matrix& y, const Matrix& upstream) {
  if (y.rows != upstream.rows || y.cols != upstream.cols)
    throw std::invalid_argument("tanh_backward: shape mismatch");
  Matrix grad(y.rows, y.cols);
  tanh_backward(y.data.data(), upstream.data.data(), grad.data.data(),
                y.size());
  return grad;
}

void log_softmax(const double* logits, double* out, std::size_t n) {
  const double m = kernels::active().max(logits, n);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = logits[i] - m;
    z += std::exp(out[i]);
  }
  const double logz = std::log(z);
  for (std::size_t i = 0; i < n; ++i) out[i] -= logz;
}

std::vector<double> log_softmax(const std::vector<double>& logits) {
  std::vector<double> out(logits.size());
  log_softmax(logits.data(), out.data(), logits.size());
  return out;
}

void l2_normalize(double* x, std::size_t n) {
  const double sq = kernels::active().dot(x, x, n);
  if (sq == 0.0) return;
  kernels::active().scale(1.0 / std::sqrt(sq), x, n);
}

std::vector<double> l2_normalize(std::vector<double> x) {
  l2_normalize(x.data(), x.size());
  return x;
}

void dropout_forward(const double* x, std::size_t n, double p, RngStream& rng,
                     bool training, double* y, double* mask) {
  if (!training || p == 0.0) {
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = x[i];
      mask[i] = 1.0;
    }
    return;
  }
  if (p < 0.0 || p >= 1.0)
    throw std::invalid_argument("dropout: p must be in [0, 1)");
  const double keep_scale = 1.0 / (1.0 - p);
  for (std::size_t i = 0; i < n; ++i) {
    mask[i] = rng.uniform() < p ? 0.0 : keep_scale;
    y[i] = x[i] * mask[i];
  }
}

Matrix xavier_uniform(std::size_t rows, std::size_t cols, RngStream& rng) {
  if (rows == 0 || cols == 0)
    throw std::invalid_argument("xavier_uniform: empty shape");
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix w(rows, cols);
  for (auto& v : w.data) v = (2.0 * rng.uniform() - 1.0) * bound;
  return w;
}

Matrix bias_init(std::size_t len, RngStream& rng) {
  Matrix b(1, len);
  for (auto& v : b.data) v = 0.001 * rng.normal();
  return b;
}

void adam_update(Matrix& param, const Matrix& grad, AdamState& state) {
  if (param.rows != grad.rows || param.cols != grad.cols)
    throw std::invalid_argument("adam_update: shape mismatch");
  for (double g : grad.data)
    if (!std::isfinite(g))
      throw std::runtime_error("adam_update: non-finite gradient");

  state.step += 1;
  const double b1 = state.beta1;
  const double b2 = state.beta2;
  const double corr1 =
      1.0 - std::pow(b1, static_cast<double>(state.step));
  const double corr2 =
      1.0 - std::pow(b2, static_cast<double>(state.step));
  double* m = state.first_moment.data.data();
  double* v = state.second_moment.data.data();
  double* w = param.data.data();
  const double* g = grad.data.data();
  for (std::size_t i = 0; i < param.size(); ++i) {
    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
    const double mhat = m[i] / corr1;
    const double vhat = v[i] / corr2;
    w[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps_hat);
  }
}

double grad_check(const std::function<double()>& f,
                  const std::vector<Matrix*>& params,
                  const std::vector<const Matrix*>& analytic, double h) {
  if (params.size() != analytic.size())
    throw std::invalid_argument("grad_check: list size mismatch");
  double worst = 0.0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Matrix& p = *params[t];
    const Matrix& a = *analytic[t];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p.data[i];
      p.data[i] = saved + h;
      const double fp = f();
      p.data[i] = saved - h;
      const double fm = f();
      p.data[i] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double ana = a.data[i];
      const double denom =
          std::max({std::fabs(ana), std::fabs(numeric), 1e-8});
      worst = std::max(worst, std::fabs(ana - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace cvae::nd
