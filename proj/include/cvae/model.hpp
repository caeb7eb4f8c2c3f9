#pragma once

// The conditioned VAE: encoder q(z | r_u, c), reparameterized sampling,
// decoder over the full item set, the conditioned multinomial loss, and
// hand-derived gradients for all ten parameter tensors. With s = 0 the model
// degenerates to the unconditioned multinomial VAE (all-ones mask, no
// condition block); the equivalence is covered by an independent loss oracle
// in the tests.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cvae/data.hpp"
#include "cvae/matrix.hpp"
#include "cvae/ndmath.hpp"
#include "cvae/rng.hpp"

namespace cvae::model {

struct Dims {
  std::size_t m = 0;    // items
  std::size_t s = 0;    // categories (0 = unconditioned model)
  std::size_t h = 600;  // hidden width
  std::size_t d = 200;  // latent width
};

// Order of the input pipeline on the rating block. NormalizeFirst scales the
// binary row to unit norm and then drops entries (inverted dropout);
// DropoutFirst drops first and normalizes the surviving pattern, so the kept
// entries sit at 1/sqrt(kept) and the inverted-dropout scale washes out.
// Inference applies no dropout, so both orders score identically.
enum class InputOrder { NormalizeFirst, DropoutFirst };

const char* input_order_name(InputOrder order);
InputOrder parse_input_order(const std::string& name);

struct Params {
  Dims dims;
  nd::Matrix enc_w1;        // (m+s) x h
  nd::Matrix enc_b1;        // 1 x h
  nd::Matrix enc_w_mu;      // h x d
  nd::Matrix enc_b_mu;      // 1 x d
  nd::Matrix enc_w_logvar;  // h x d
  nd::Matrix enc_b_logvar;  // 1 x d
  nd::Matrix dec_w1;        // d x h
  nd::Matrix dec_b1;        // 1 x h
  nd::Matrix dec_w2;        // h x m
  nd::Matrix dec_b2;        // 1 x m

  // Xavier-uniform weights, normal(0, 0.001^2) biases, drawn in tensor order.
  static Params init(const Dims& dims, nd::RngStream& rng);
  static Params zeros(const Dims& dims);

  struct TensorRef {
    const char* name;
    nd::Matrix* tensor;
  };
  // Fixed, documented tensor order (also the checkpoint serialization order).
  std::vector<TensorRef> tensors();
  std::vector<const nd::Matrix*> tensor_list() const;
};

// Names matching Params::tensors() / tensor_list() order.
std::array<const char*, 10> tensor_names();

struct GaussianLatent {
  std::vector<double> mu;
  std::vector<double> logvar;  // log sigma^2
  std::vector<double> eps;
  std::vector<double> z;
};

struct LossBreakdown {
  double neg_ll = 0.0;
  double kl = 0.0;
  double beta = 0.0;
  double total = 0.0;
};

// A mini-batch of training examples: per example the (sparse) binary rating
// row and the optional active category.
struct BatchInput {
  std::vector<std::span<const std::uint32_t>> rows;
  std::vector<std::optional<std::uint32_t>> conditions;
  std::size_t size() const { return rows.size(); }
};

// Intermediates retained for backward (training mode only).
struct ForwardCache {
  nd::Matrix x;          // B x (m+s): normalized, dropped-out input + condition
  nd::Matrix drop_mask;  // B x m dropout multipliers (rating block only)
  nd::Matrix h1;         // B x h
  nd::Matrix mu, logvar, eps, z;  // B x d
  nd::Matrix h2;                  // B x h
  nd::Matrix log_probs;           // B x m
  std::vector<double> mask_dot_target;  // per example: sum_i mask_i * r_ui
};

struct ForwardResult {
  LossBreakdown mean;  // batch mean of per-example totals
  std::vector<LossBreakdown> per_example;
  ForwardCache cache;
};

// --- single-example building blocks -------------------------------------

// L2-normalize the rating block, apply inverted dropout to it (training
// only), then append the raw binary condition block.
std::vector<double> build_input(std::span<const std::uint32_t> items,
                                const std::optional<std::uint32_t>& condition,
                                const Dims& dims, double dropout_p,
                                nd::RngStream* rng, bool training,
                                std::vector<double>* mask_out = nullptr,
                                InputOrder order = InputOrder::NormalizeFirst);

// hidden = tanh(x W1 + b1); mu and logvar are linear heads.
GaussianLatent encode(std::span<const double> x, const Params& p);

// Training: z = mu + eps .* exp(logvar / 2) with fresh standard normal eps;
// inference: z = mu.
void sample_z(GaussianLatent& latent, nd::RngStream* rng, bool training);

// logits = tanh(z V1 + c1) V2 + c2; no softmax here.
std::vector<double> decode(std::span<const double> z, const Params& p);

// Dense {0,1} mask over items: the active category's column of G, or all
// ones when unconditioned (never the zero vector a literal <c, G^T> with
// c = 0 would give).
std::vector<double> condition_mask(const std::optional<std::uint32_t>& c,
                                   const data::ItemConditionMatrix& G);

// -sum_i mask_i r_ui log pi_i. Throws if the masked target is empty.
double conditioned_nll(std::span<const double> log_probs,
                       std::span<const std::uint32_t> items,
                       std::span<const double> mask);

// Closed-form KL(q || N(0, I)) for a diagonal Gaussian.
double kl_divergence(std::span<const double> mu,
                     std::span<const double> logvar);

// --- batched training path -----------------------------------------------

// Forward pass over a batch. `fixed_eps` (B x d), when given, replaces the
// fresh noise draw; the gradient checker and the loss oracle tests use it.
ForwardResult forward_loss(const BatchInput& batch,
                           const data::ItemConditionMatrix& G, const Params& p,
                           double beta, double dropout_p, nd::RngStream& rng,
                           bool training, const nd::Matrix* fixed_eps = nullptr,
                           InputOrder order = InputOrder::NormalizeFirst);

// Gradients of the batch-mean loss for every parameter tensor.
Params backward(const ForwardCache& cache, const BatchInput& batch,
                const data::ItemConditionMatrix& G, const Params& p,
                double beta);

// Inference scores over all m items: no dropout, z = mu, raw logits.
// Fold-in exclusion is the evaluator's job.
std::vector<double> predict_scores(std::span<const std::uint32_t> foldin,
                                   const std::optional<std::uint32_t>& c,
                                   const Params& p);

// Batched inference encodings (used by the evaluator and the analyzer).
// Returns mu rows, one per input.
nd::Matrix batch_encode_mu(const std::vector<std::span<const std::uint32_t>>&
                               rows,
                           const std::vector<std::optional<std::uint32_t>>&
                               conditions,
                           const Params& p);
nd::Matrix batch_decode(const nd::Matrix& z, const Params& p);

// --- checkpointing ---------------------------------------------------------

struct Checkpoint {
  Params params;
  std::vector<nd::AdamState> adam;  // parallel to Params::tensors(); may be
                                    // empty for inference-only checkpoints
  nlohmann::ordered_json extra;     // trainer state for resume, free-form
  double beta = 0.0;
  std::uint64_t epoch = 0;
  std::uint64_t seed = 0;
};

// Self-describing binary container: magic, version, a JSON manifest (dims,
// seed, beta, epoch, named tensor shapes, Adam hyperparameters, extra state)
// followed by raw little-endian float64 tensor data in manifest order.
// save -> load -> save is byte-identical.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace cvae::model
