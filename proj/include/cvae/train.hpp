#pragma once

// Two-phase training protocol: phase 1 anneals beta linearly to 1.0 over the
// planned steps and records the beta value at the best validation nDCG@100;
// phase 2 re-initializes from scratch and anneals to that selected cap.
// Early stopping fires after `patience` consecutive non-improving epochs.

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cvae/data.hpp"
#include "cvae/eval.hpp"
#include "cvae/model.hpp"
#include "cvae/ndmath.hpp"

namespace cvae::train {

struct TrainConfig {
  std::size_t batch_size = 500;
  std::size_t max_epochs = 100;
  double lr = 0.001;
  double anneal_cap = 1.0;        // phase-2 cap when not using phase 1's pick
  std::size_t anneal_total_steps = 0;  // 0 = max_epochs * batches_per_epoch
  std::size_t patience = 5;
  double dropout_p = 0.5;
  std::uint64_t seed = 0;
  std::size_t hidden_dim = 600;
  std::size_t latent_dim = 200;
  bool conditioned = true;  // false builds an s = 0 model (no condition block)
  model::InputOrder input_order = model::InputOrder::NormalizeFirst;
  eval::ProtocolKind validation_protocol = eval::ProtocolKind::Conditioned;
};

struct EpochReport {
  std::size_t epoch = 0;  // 1-based
  double mean_train_loss = 0.0;
  double mean_nll = 0.0;
  double mean_kl = 0.0;
  double current_beta = 0.0;
  double val_ndcg100 = 0.0;
  double wall_time_s = 0.0;
};

// beta = cap * min(1, step / total_steps). Optimizer step g (1-based) trains
// with anneal_beta(g, ...), so the last planned step reaches the cap exactly.
double anneal_beta(std::uint64_t global_step, double cap,
                   std::uint64_t total_steps);

// Serializable trainer position for exact resume (stored in the checkpoint's
// extra manifest field).
struct TrainerSnapshot {
  std::string phase;            // "phase1" or "phase2"
  std::size_t next_epoch = 1;   // 1-based
  std::uint64_t global_step = 0;
  double phase_cap = 1.0;
  double best_score = 0.0;
  bool has_best = false;
  std::size_t best_epoch = 0;
  double best_beta = 0.0;
  std::size_t since_improve = 0;
  std::array<std::uint64_t, 4> shuffle_state{};
  std::array<std::uint64_t, 4> noise_state{};

  nlohmann::ordered_json to_json() const;
  static TrainerSnapshot from_json(const nlohmann::ordered_json& j);
};

struct ResumePoint {
  model::Params params;
  std::vector<nd::AdamState> adam;
  TrainerSnapshot snapshot;
  std::optional<model::Params> best_params;  // from best.ckpt when present
};

using ValidationFn = std::function<double(const model::Params&)>;

struct PhaseHooks {
  ValidationFn validate;  // required
  std::function<void(const EpochReport&)> on_report;
  // Called after every epoch with the live state (for last-epoch
  // checkpointing); snapshot.next_epoch already points past the epoch.
  std::function<void(const model::Params&, const std::vector<nd::AdamState>&,
                     const TrainerSnapshot&)>
      on_epoch_end;
  // Called when validation improves, with the new best parameters.
  std::function<void(const model::Params&, double beta, std::size_t epoch)>
      on_best;
};

struct PhaseResult {
  model::Params best_params;
  double best_beta = 0.0;
  double best_score = 0.0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  std::vector<EpochReport> reports;      // epochs run in this call
  std::vector<double> beta_trace;        // beta per optimizer step
  bool aborted_nonfinite = false;
  std::string abort_message;
};

// One annealing phase. `phase_tag` decouples the phase's init/noise/shuffle
// streams from the run seed; `resume`, when given, continues an interrupted
// phase instead of initializing fresh parameters.
PhaseResult run_phase(const data::Dataset& dataset, const TrainConfig& config,
                      double phase_cap, const std::string& phase_tag,
                      const PhaseHooks& hooks,
                      const ResumePoint* resume = nullptr);

struct TwoPhaseResult {
  PhaseResult phase1;
  PhaseResult phase2;
  double selected_beta = 0.0;
};

TwoPhaseResult two_phase_train(const data::Dataset& dataset,
                               const TrainConfig& config,
                               const PhaseHooks& hooks);

// Default validation: conditioned-protocol nDCG@100 over the validation
// users (configurable to another protocol).
ValidationFn make_validation(const data::Dataset& dataset,
                             const TrainConfig& config, unsigned threads);

}  // namespace cvae::train
