#include "cvae/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "cvae/kernels.hpp"

namespace cvae::model {
namespace {

using json = nlohmann::ordered_json;

void add_bias_rows(nd::Matrix& a, const nd::Matrix& bias) {
  for (std::size_t i = 0; i < a.rows; ++i)
    kernels::active().add(bias.data.data(), a.row(i), a.cols);
}

// out (1 x n) = column sums of a (B x n).
nd::Matrix col_sum(const nd::Matrix& a) {
  nd::Matrix out(1, a.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    kernels::active().add(a.row(i), out.row(0), a.cols);
  return out;
}

}  // namespace

const char* input_order_name(InputOrder order) {
  return order == InputOrder::NormalizeFirst ? "normalize_first"
                                             : "dropout_first";
}

InputOrder parse_input_order(const std::string& name) {
  if (name == "normalize_first") return InputOrder::NormalizeFirst;
  if (name == "dropout_first") return InputOrder::DropoutFirst;
  throw std::invalid_argument(
      "unknown input order: " + name +
      " (expected normalize_first|dropout_first)");
}

Params Params::init(const Dims& dims, nd::RngStream& rng) {
  Params p;
  p.dims = dims;
  p.enc_w1 = nd::xavier_uniform(dims.m + dims.s, dims.h, rng);
  p.enc_b1 = nd::bias_init(dims.h, rng);
  p.enc_w_mu = nd::xavier_uniform(dims.h, dims.d, rng);
  p.enc_b_mu = nd::bias_init(dims.d, rng);
  p.enc_w_logvar = nd::xavier_uniform(dims.h, dims.d, rng);
  p.enc_b_logvar = nd::bias_init(dims.d, rng);
  p.dec_w1 = nd::xavier_uniform(dims.d, dims.h, rng);
  p.dec_b1 = nd::bias_init(dims.h, rng);
  p.dec_w2 = nd::xavier_uniform(dims.h, dims.m, rng);
  p.dec_b2 = nd::bias_init(dims.m, rng);
  return p;
}

Params Params::zeros(const Dims& dims) {
  Params p;
  p.dims = dims;
  p.enc_w1 = nd::Matrix(dims.m + dims.s, dims.h);
  p.enc_b1 = nd::Matrix(1, dims.h);
  p.enc_w_mu = nd::Matrix(dims.h, dims.d);
  p.enc_b_mu = nd::Matrix(1, dims.d);
  p.enc_w_logvar = nd::Matrix(dims.h, dims.d);
  p.enc_b_logvar = nd::Matrix(1, dims.d);
  p.dec_w1 = nd::Matrix(dims.d, dims.h);
  p.dec_b1 = nd::Matrix(1, dims.h);
  p.dec_w2 = nd::Matrix(dims.h, dims.m);
  p.dec_b2 = nd::Matrix(1, dims.m);
  return p;
}

std::vector<Params::TensorRef> Params::tensors() {
  return {
      {"enc_w1", &enc_w1},           {"enc_b1", &enc_b1},
      {"enc_w_mu", &enc_w_mu},       {"enc_b_mu", &enc_b_mu},
      {"enc_w_logvar", &enc_w_logvar}, {"enc_b_logvar", &enc_b_logvar},
      {"dec_w1", &dec_w1},           {"dec_b1", &dec_b1},
      {"dec_w2", &dec_w2},           {"dec_b2", &dec_b2},
  };
}

std::vector<const nd::Matrix*> Params::tensor_list() const {
  return {&enc_w1, &enc_b1, &enc_w_mu,      &enc_b_mu,      &enc_w_logvar,
          &enc_b_logvar, &dec_w1, &dec_b1,  &dec_w2,        &dec_b2};
}

std::array<const char*, 10> tensor_names() {
  return {"enc_w1",     "enc_b1",        "enc_w_mu", "enc_b_mu",
          "enc_w_logvar", "enc_b_logvar", "dec_w1",   "dec_b1",
          "dec_w2",     "dec_b2"};
}

std::vector<double> build_input(std::span<const std::uint32_t> items,
                                const std::optional<std::uint32_t>& condition,
                                const Dims& dims, double dropout_p,
                                nd::RngStream* rng, bool training,
                                std::vector<double>* mask_out,
                                InputOrder order) {
  std::vector<double> x(dims.m + dims.s, 0.0);
  if (mask_out) mask_out->assign(dims.m, 1.0);
  // Binary row: normalization puts 1/sqrt(nnz) at each kept interaction.
  // Dropout draws one uniform per interaction (ascending item index); zero
  // entries are untouched either way.
  const bool drop = training && dropout_p > 0.0;
  const double keep_scale = drop ? 1.0 / (1.0 - dropout_p) : 1.0;
  std::size_t kept = 0;
  for (auto i : items) {
    double mult = 1.0;
    if (drop) mult = rng->uniform() < dropout_p ? 0.0 : keep_scale;
    x[i] = mult;
    if (mult != 0.0) ++kept;
    if (mask_out) (*mask_out)[i] = mult;
  }
  double scale = 0.0;
  if (order == InputOrder::NormalizeFirst) {
    scale = items.empty()
                ? 0.0
                : 1.0 / std::sqrt(static_cast<double>(items.size()));
  } else {
    // Dropout first: normalize the surviving pattern, absorbing the
    // inverted-dropout factor.
    scale = kept == 0 ? 0.0
                      : 1.0 / (keep_scale *
                               std::sqrt(static_cast<double>(kept)));
  }
  for (auto i : items) x[i] *= scale;
  if (condition) {
    if (*condition >= dims.s)
      throw std::invalid_argument("condition index out of range");
    x[dims.m + *condition] = 1.0;
  }
  return x;
}

GaussianLatent encode(std::span<const double> x, const Params& p) {
  const auto& k = kernels::active();
  const Dims& dims = p.dims;
  if (x.size() != dims.m + dims.s)
    throw std::invalid_argument("encode: input length mismatch");
  GaussianLatent latent;
  std::vector<double> h1(dims.h);
  k.matmul(x.data(), p.enc_w1.data.data(), h1.data(), 1, dims.m + dims.s,
           dims.h);
  k.add(p.enc_b1.data.data(), h1.data(), dims.h);
  nd::tanh_forward(h1.data(), h1.data(), dims.h);

  latent.mu.resize(dims.d);
  latent.logvar.resize(dims.d);
  k.matmul(h1.data(), p.enc_w_mu.data.data(), latent.mu.data(), 1, dims.h,
           dims.d);
  k.add(p.enc_b_mu.data.data(), latent.mu.data(), dims.d);
  k.matmul(h1.data(), p.enc_w_logvar.data.data(), latent.logvar.data(), 1,
           dims.h, dims.d);
  k.add(p.enc_b_logvar.data.data(), latent.logvar.data(), dims.d);
  return latent;
}

void sample_z(GaussianLatent& latent, nd::RngStream* rng, bool training) {
  const std::size_t d = latent.mu.size();
  latent.eps.assign(d, 0.0);
  latent.z = latent.mu;
  if (!training) return;
  for (std::size_t i = 0; i < d; ++i) {
    latent.eps[i] = rng->normal();
    latent.z[i] += latent.eps[i] * std::exp(0.5 * latent.logvar[i]);
  }
}

std::vector<double> decode(std::span<const double> z, const Params& p) {
  const auto& k = kernels::active();
  const Dims& dims = p.dims;
  if (z.size() != dims.d) throw std::invalid_argument("decode: latent dim");
  std::vector<double> h2(dims.h);
  k.matmul(z.data(), p.dec_w1.data.data(), h2.data(), 1, dims.d, dims.h);
  k.add(p.dec_b1.data.data(), h2.data(), dims.h);
  nd::tanh_forward(h2.data(), h2.data(), dims.h);

  std::vector<double> logits(dims.m);
  k.matmul(h2.data(), p.dec_w2.data.data(), logits.data(), 1, dims.h, dims.m);
  k.add(p.dec_b2.data.data(), logits.data(), dims.m);
  return logits;
}

std::vector<double> condition_mask(const std::optional<std::uint32_t>& c,
                                   const data::ItemConditionMatrix& G) {
  if (!c) return std::vector<double>(G.m, 1.0);
  if (*c >= G.s) throw std::invalid_argument("condition index out of range");
  std::vector<double> mask(G.m, 0.0);
  for (std::uint32_t i = 0; i < G.m; ++i)
    if (G.item_in_category(i, *c)) mask[i] = 1.0;
  return mask;
}

double conditioned_nll(std::span<const double> log_probs,
                       std::span<const std::uint32_t> items,
                       std::span<const double> mask) {
  double nll = 0.0;
  double hits = 0.0;
  for (auto i : items) {
    if (mask[i] == 0.0) continue;
    hits += 1.0;
    nll -= log_probs[i];
  }
  if (hits == 0.0)
    throw std::runtime_error("conditioned_nll: masked target is empty");
  return nll;
}

double kl_divergence(std::span<const double> mu,
                     std::span<const double> logvar) {
  double acc = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i)
    acc += 1.0 + logvar[i] - mu[i] * mu[i] - std::exp(logvar[i]);
  return -0.5 * acc;
}

ForwardResult forward_loss(const BatchInput& batch,
                           const data::ItemConditionMatrix& G, const Params& p,
                           double beta, double dropout_p, nd::RngStream& rng,
                           bool training, const nd::Matrix* fixed_eps,
                           InputOrder order) {
  const auto& k = kernels::active();
  const Dims& dims = p.dims;
  const std::size_t B = batch.size();
  if (B == 0) throw std::invalid_argument("forward_loss: empty batch");
  if (G.m != dims.m || (dims.s != 0 && G.s != dims.s))
    throw std::invalid_argument("forward_loss: condition matrix mismatch");

  ForwardResult res;
  ForwardCache& c = res.cache;
  c.x = nd::Matrix(B, dims.m + dims.s);
  c.drop_mask = nd::Matrix(B, dims.m);
  c.drop_mask.fill(1.0);

  // Input assembly; dropout uniforms are consumed first, example-major.
  const bool drop = training && dropout_p > 0.0;
  const double keep_scale = drop ? 1.0 / (1.0 - dropout_p) : 1.0;
  for (std::size_t e = 0; e < B; ++e) {
    const auto items = batch.rows[e];
    if (items.empty())
      throw std::invalid_argument("forward_loss: empty interaction row");
    double* xrow = c.x.row(e);
    double* mrow = c.drop_mask.row(e);
    std::size_t kept = 0;
    for (auto i : items) {
      double mult = 1.0;
      if (drop) mult = rng.uniform() < dropout_p ? 0.0 : keep_scale;
      xrow[i] = mult;
      if (mult != 0.0) ++kept;
      mrow[i] = mult;
    }
    double scale;
    if (order == InputOrder::NormalizeFirst)
      scale = 1.0 / std::sqrt(static_cast<double>(items.size()));
    else
      scale = kept == 0 ? 0.0
                        : 1.0 / (keep_scale *
                                 std::sqrt(static_cast<double>(kept)));
    for (auto i : items) xrow[i] *= scale;
    if (batch.conditions[e]) {
      if (*batch.conditions[e] >= dims.s)
        throw std::invalid_argument("forward_loss: condition out of range");
      xrow[dims.m + *batch.conditions[e]] = 1.0;
    }
  }

  // Encoder.
  c.h1 = nd::Matrix(B, dims.h);
  k.matmul(c.x.data.data(), p.enc_w1.data.data(), c.h1.data.data(), B,
           dims.m + dims.s, dims.h);
  add_bias_rows(c.h1, p.enc_b1);
  nd::tanh_forward(c.h1.data.data(), c.h1.data.data(), c.h1.size());

  c.mu = nd::Matrix(B, dims.d);
  c.logvar = nd::Matrix(B, dims.d);
  k.matmul(c.h1.data.data(), p.enc_w_mu.data.data(), c.mu.data.data(), B,
           dims.h, dims.d);
  add_bias_rows(c.mu, p.enc_b_mu);
  k.matmul(c.h1.data.data(), p.enc_w_logvar.data.data(), c.logvar.data.data(),
           B, dims.h, dims.d);
  add_bias_rows(c.logvar, p.enc_b_logvar);

  // Reparameterized sample; eps normals are consumed after all dropout
  // uniforms, row-major.
  c.eps = nd::Matrix(B, dims.d);
  if (fixed_eps != nullptr) {
    if (fixed_eps->rows != B || fixed_eps->cols != dims.d)
      throw std::invalid_argument("forward_loss: fixed_eps shape");
    c.eps = *fixed_eps;
  } else if (training) {
    for (auto& v : c.eps.data) v = rng.normal();
  }
  c.z = c.mu;
  for (std::size_t i = 0; i < c.z.size(); ++i)
    c.z.data[i] += c.eps.data[i] * std::exp(0.5 * c.logvar.data[i]);

  // Decoder.
  c.h2 = nd::Matrix(B, dims.h);
  k.matmul(c.z.data.data(), p.dec_w1.data.data(), c.h2.data.data(), B, dims.d,
           dims.h);
  add_bias_rows(c.h2, p.dec_b1);
  nd::tanh_forward(c.h2.data.data(), c.h2.data.data(), c.h2.size());

  c.log_probs = nd::Matrix(B, dims.m);
  k.matmul(c.h2.data.data(), p.dec_w2.data.data(), c.log_probs.data.data(), B,
           dims.h, dims.m);
  add_bias_rows(c.log_probs, p.dec_b2);
  for (std::size_t e = 0; e < B; ++e)
    nd::log_softmax(c.log_probs.row(e), c.log_probs.row(e), dims.m);

  // Losses.
  res.per_example.resize(B);
  c.mask_dot_target.assign(B, 0.0);
  for (std::size_t e = 0; e < B; ++e) {
    const auto items = batch.rows[e];
    const auto cond = batch.conditions[e];
    double nll = 0.0;
    double hits = 0.0;
    const double* lp = c.log_probs.row(e);
    for (auto i : items) {
      if (cond && !G.item_in_category(i, *cond)) continue;
      hits += 1.0;
      nll -= lp[i];
    }
    if (hits == 0.0)
      throw std::runtime_error(
          "forward_loss: conditioned target is empty for an example");
    c.mask_dot_target[e] = hits;
    LossBreakdown& lb = res.per_example[e];
    lb.neg_ll = nll;
    lb.kl = kl_divergence(
        std::span<const double>(c.mu.row(e), dims.d),
        std::span<const double>(c.logvar.row(e), dims.d));
    lb.beta = beta;
    lb.total = lb.neg_ll + beta * lb.kl;
  }
  LossBreakdown mean;
  mean.beta = beta;
  for (const auto& lb : res.per_example) {
    mean.neg_ll += lb.neg_ll;
    mean.kl += lb.kl;
    mean.total += lb.total;
  }
  const double invB = 1.0 / static_cast<double>(B);
  mean.neg_ll *= invB;
  mean.kl *= invB;
  mean.total *= invB;
  res.mean = mean;
  return res;
}

Params backward(const ForwardCache& c, const BatchInput& batch,
                const data::ItemConditionMatrix& G, const Params& p,
                double beta) {
  const auto& k = kernels::active();
  const Dims& dims = p.dims;
  const std::size_t B = batch.size();
  const double scale = 1.0 / static_cast<double>(B);
  Params g = Params::zeros(dims);

  // dL/dlogits = scale * (S_e * pi - mask .* r); the dropout and condition
  // masks are constants under differentiation.
  nd::Matrix d_logits(B, dims.m);
  for (std::size_t e = 0; e < B; ++e) {
    const double* lp = c.log_probs.row(e);
    double* dst = d_logits.row(e);
    const double se = scale * c.mask_dot_target[e];
    for (std::size_t i = 0; i < dims.m; ++i) dst[i] = se * std::exp(lp[i]);
    const auto cond = batch.conditions[e];
    for (auto i : batch.rows[e]) {
      if (cond && !G.item_in_category(i, *cond)) continue;
      dst[i] -= scale;
    }
  }

  k.matmul_tn(c.h2.data.data(), d_logits.data.data(), g.dec_w2.data.data(),
              dims.h, B, dims.m);
  g.dec_b2 = col_sum(d_logits);

  nd::Matrix d_h2(B, dims.h);
  k.matmul_nt(d_logits.data.data(), p.dec_w2.data.data(), d_h2.data.data(), B,
              dims.m, dims.h);
  nd::Matrix d_a2 = nd::tanh_backward(c.h2, d_h2);

  k.matmul_tn(c.z.data.data(), d_a2.data.data(), g.dec_w1.data.data(), dims.d,
              B, dims.h);
  g.dec_b1 = col_sum(d_a2);

  nd::Matrix d_z(B, dims.d);
  k.matmul_nt(d_a2.data.data(), p.dec_w1.data.data(), d_z.data.data(), B,
              dims.h, dims.d);

  // Latent heads: reconstruction flows through z; the KL term adds
  // beta * mu to d_mu and beta/2 * (exp(logvar) - 1) to d_logvar.
  nd::Matrix d_mu = d_z;
  nd::Matrix d_logvar(B, dims.d);
  const double bscale = beta * scale;
  for (std::size_t i = 0; i < d_mu.size(); ++i) {
    d_mu.data[i] += bscale * c.mu.data[i];
    d_logvar.data[i] =
        0.5 * d_z.data[i] * c.eps.data[i] * std::exp(0.5 * c.logvar.data[i]) +
        bscale * 0.5 * (std::exp(c.logvar.data[i]) - 1.0);
  }

  k.matmul_tn(c.h1.data.data(), d_mu.data.data(), g.enc_w_mu.data.data(),
              dims.h, B, dims.d);
  g.enc_b_mu = col_sum(d_mu);
  k.matmul_tn(c.h1.data.data(), d_logvar.data.data(),
              g.enc_w_logvar.data.data(), dims.h, B, dims.d);
  g.enc_b_logvar = col_sum(d_logvar);

  nd::Matrix d_h1(B, dims.h);
  k.matmul_nt(d_mu.data.data(), p.enc_w_mu.data.data(), d_h1.data.data(), B,
              dims.d, dims.h);
  nd::Matrix d_h1_lv(B, dims.h);
  k.matmul_nt(d_logvar.data.data(), p.enc_w_logvar.data.data(),
              d_h1_lv.data.data(), B, dims.d, dims.h);
  k.add(d_h1_lv.data.data(), d_h1.data.data(), d_h1.size());
  nd::Matrix d_a1 = nd::tanh_backward(c.h1, d_h1);

  k.matmul_tn(c.x.data.data(), d_a1.data.data(), g.enc_w1.data.data(),
              dims.m + dims.s, B, dims.h);
  g.enc_b1 = col_sum(d_a1);
  return g;
}

std::vector<double> predict_scores(std::span<const std::uint32_t> foldin,
                                   const std::optional<std::uint32_t>& c,
                                   const Params& p) {
  const auto x =
      build_input(foldin, c, p.dims, /*dropout_p=*/0.0, nullptr,
                  /*training=*/false);
  GaussianLatent latent = encode(x, p);
  sample_z(latent, nullptr, /*training=*/false);
  return decode(latent.z, p);
}

nd::Matrix batch_encode_mu(
    const std::vector<std::span<const std::uint32_t>>& rows,
    const std::vector<std::optional<std::uint32_t>>& conditions,
    const Params& p) {
  const auto& k = kernels::active();
  const Dims& dims = p.dims;
  const std::size_t B = rows.size();
  nd::Matrix x(B, dims.m + dims.s);
  for (std::size_t e = 0; e < B; ++e) {
    const double inv =
        rows[e].empty()
            ? 0.0
            : 1.0 / std::sqrt(static_cast<double>(rows[e].size()));
    double* xrow = x.row(e);
    for (auto i : rows[e]) xrow[i] = inv;
    if (conditions[e]) xrow[dims.m + *conditions[e]] = 1.0;
  }
  nd::Matrix h1(B, dims.h);
  k.matmul(x.data.data(), p.enc_w1.data.data(), h1.data.data(), B,
           dims.m + dims.s, dims.h);
  add_bias_rows(h1, p.enc_b1);
  nd::tanh_forward(h1.data.data(), h1.data.data(), h1.size());
  nd::Matrix mu(B, dims.d);
  k.matmul(h1.data.data(), p.enc_w_mu.data.data(), mu.data.data(), B, dims.h,
           dims.d);
  add_bias_rows(mu, p.enc_b_mu);
  return mu;
}

nd::Matrix batch_decode(const nd::Matrix& z, const Params& p) {
  const auto& k = kernels::active();
  const Dims& dims = p.dims;
  nd::Matrix h2(z.rows, dims.h);
  k.matmul(z.data.data(), p.dec_w1.data.data(), h2.data.data(), z.rows, dims.d,
           dims.h);
  add_bias_rows(h2, p.dec_b1);
  nd::tanh_forward(h2.data.data(), h2.data.data(), h2.size());
  nd::Matrix logits(z.rows, dims.m);
  k.matmul(h2.data.data(), p.dec_w2.data.data(), logits.data.data(), z.rows,
           dims.h, dims.m);
  add_bias_rows(logits, p.dec_b2);
  return logits;
}

// --- checkpoint format ------------------------------------------------------
//
//   bytes 0..7   magic "CVAECKP1"
//   u64 LE       manifest length L
//   L bytes      JSON manifest
//   payload      raw little-endian float64 tensors in manifest order; when
//                adam.present, each tensor is followed by its first and
//                second moment buffers of the same shape.

namespace {
constexpr char kMagic[8] = {'C', 'V', 'A', 'E', 'C', 'K', 'P', '1'};

void write_raw(std::ofstream& out, const nd::Matrix& t) {
  out.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
}

void read_raw(std::ifstream& in, nd::Matrix& t) {
  in.read(reinterpret_cast<char*>(t.data.data()),
          static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!in) throw std::runtime_error("checkpoint: truncated tensor data");
}
}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const auto names = tensor_names();
  const auto mats = ckpt.params.tensor_list();
  const bool has_adam = !ckpt.adam.empty();
  if (has_adam && ckpt.adam.size() != mats.size())
    throw std::invalid_argument("save_checkpoint: adam state count mismatch");

  json manifest;
  manifest["version"] = 1;
  manifest["dims"] = {{"m", ckpt.params.dims.m},
                      {"s", ckpt.params.dims.s},
                      {"h", ckpt.params.dims.h},
                      {"d", ckpt.params.dims.d}};
  manifest["seed"] = ckpt.seed;
  manifest["beta"] = ckpt.beta;
  manifest["epoch"] = ckpt.epoch;
  json tensors = json::array();
  for (std::size_t t = 0; t < mats.size(); ++t)
    tensors.push_back(
        {{"name", names[t]}, {"rows", mats[t]->rows}, {"cols", mats[t]->cols}});
  manifest["tensors"] = tensors;
  json adam;
  adam["present"] = has_adam;
  if (has_adam) {
    adam["step"] = ckpt.adam[0].step;
    adam["lr"] = ckpt.adam[0].lr;
    adam["beta1"] = ckpt.adam[0].beta1;
    adam["beta2"] = ckpt.adam[0].beta2;
    adam["eps_hat"] = ckpt.adam[0].eps_hat;
  }
  manifest["adam"] = adam;
  manifest["extra"] = ckpt.extra.is_null() ? json::object() : ckpt.extra;

  const std::string mstr = manifest.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t len = mstr.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(mstr.data(), static_cast<std::streamsize>(mstr.size()));
  for (std::size_t t = 0; t < mats.size(); ++t) {
    write_raw(out, *mats[t]);
    if (has_adam) {
      write_raw(out, ckpt.adam[t].first_moment);
      write_raw(out, ckpt.adam[t].second_moment);
    }
  }
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in) throw std::runtime_error("checkpoint: truncated manifest length");
  std::string mstr(len, '\0');
  in.read(mstr.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("checkpoint: truncated manifest");
  json manifest = json::parse(mstr);
  if (manifest.at("version").get<int>() != 1)
    throw std::runtime_error("checkpoint: unsupported version");

  Checkpoint ckpt;
  Dims dims;
  dims.m = manifest.at("dims").at("m").get<std::size_t>();
  dims.s = manifest.at("dims").at("s").get<std::size_t>();
  dims.h = manifest.at("dims").at("h").get<std::size_t>();
  dims.d = manifest.at("dims").at("d").get<std::size_t>();
  ckpt.params = Params::zeros(dims);
  ckpt.seed = manifest.at("seed").get<std::uint64_t>();
  ckpt.beta = manifest.at("beta").get<double>();
  ckpt.epoch = manifest.at("epoch").get<std::uint64_t>();
  ckpt.extra = manifest.at("extra");

  auto refs = ckpt.params.tensors();
  const auto& tensors = manifest.at("tensors");
  if (tensors.size() != refs.size())
    throw std::runtime_error("checkpoint: tensor list mismatch");
  const bool has_adam = manifest.at("adam").at("present").get<bool>();
  if (has_adam) {
    for (const auto& r : refs) {
      nd::AdamState st(r.tensor->rows, r.tensor->cols,
                       manifest.at("adam").at("lr").get<double>());
      st.step = manifest.at("adam").at("step").get<std::uint64_t>();
      st.beta1 = manifest.at("adam").at("beta1").get<double>();
      st.beta2 = manifest.at("adam").at("beta2").get<double>();
      st.eps_hat = manifest.at("adam").at("eps_hat").get<double>();
      ckpt.adam.push_back(std::move(st));
    }
  }
  for (std::size_t t = 0; t < refs.size(); ++t) {
    const auto& meta = tensors[t];
    if (meta.at("name").get<std::string>() != refs[t].name ||
        meta.at("rows").get<std::size_t>() != refs[t].tensor->rows ||
        meta.at("cols").get<std::size_t>() != refs[t].tensor->cols)
      throw std::runtime_error(
          "checkpoint: tensor shape mismatch for " +
          meta.at("name").get<std::string>());
    read_raw(in, *refs[t].tensor);
    if (has_adam) {
      read_raw(in, ckpt.adam[t].first_moment);
      read_raw(in, ckpt.adam[t].second_moment);
    }
  }
  return ckpt;
}

}  // namespace cvae::model
