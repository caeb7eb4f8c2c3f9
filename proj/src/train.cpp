#include "cvae/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace cvae::train {
namespace {

// Stream purposes derived from the run seed; phase tags shift them so the
// two phases draw independent sequences.
std::uint64_t purpose_of(const std::string& phase_tag, std::uint64_t what) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : phase_tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h ^ what;
}

constexpr std::uint64_t kInitStream = 0x11;
constexpr std::uint64_t kShuffleStream = 0x22;
constexpr std::uint64_t kNoiseStream = 0x33;

std::array<std::uint64_t, 4> state_of(const nd::RngStream& rng) {
  return rng.state();
}

}  // namespace

double anneal_beta(std::uint64_t global_step, double cap,
                   std::uint64_t total_steps) {
  if (total_steps == 0) return cap;
  const double frac = static_cast<double>(global_step) /
                      static_cast<double>(total_steps);
  return cap * std::min(1.0, frac);
}

nlohmann::ordered_json TrainerSnapshot::to_json() const {
  nlohmann::ordered_json j;
  j["phase"] = phase;
  j["next_epoch"] = next_epoch;
  j["global_step"] = global_step;
  j["phase_cap"] = phase_cap;
  j["best_score"] = best_score;
  j["has_best"] = has_best;
  j["best_epoch"] = best_epoch;
  j["best_beta"] = best_beta;
  j["since_improve"] = since_improve;
  j["shuffle_state"] = shuffle_state;
  j["noise_state"] = noise_state;
  return j;
}

TrainerSnapshot TrainerSnapshot::from_json(const nlohmann::ordered_json& j) {
  TrainerSnapshot s;
  s.phase = j.at("phase").get<std::string>();
  s.next_epoch = j.at("next_epoch").get<std::size_t>();
  s.global_step = j.at("global_step").get<std::uint64_t>();
  s.phase_cap = j.at("phase_cap").get<double>();
  s.best_score = j.at("best_score").get<double>();
  s.has_best = j.at("has_best").get<bool>();
  s.best_epoch = j.at("best_epoch").get<std::size_t>();
  s.best_beta = j.at("best_beta").get<double>();
  s.since_improve = j.at("since_improve").get<std::size_t>();
  s.shuffle_state = j.at("shuffle_state").get<std::array<std::uint64_t, 4>>();
  s.noise_state = j.at("noise_state").get<std::array<std::uint64_t, 4>>();
  return s;
}

PhaseResult run_phase(const data::Dataset& dataset, const TrainConfig& config,
                      double phase_cap, const std::string& phase_tag,
                      const PhaseHooks& hooks, const ResumePoint* resume) {
  if (!hooks.validate)
    throw std::invalid_argument("run_phase: validation hook is required");
  if (dataset.examples.empty())
    throw std::invalid_argument("run_phase: no training examples");
  if (config.patience < 1)
    throw std::invalid_argument("run_phase: patience must be >= 1");

  const auto& M = dataset.interactions;
  const auto& G = dataset.conditions;
  model::Dims dims{M.m, config.conditioned ? G.s : 0, config.hidden_dim,
                   config.latent_dim};

  const std::size_t n_examples = dataset.examples.size();
  const std::size_t batches_per_epoch =
      (n_examples + config.batch_size - 1) / config.batch_size;
  const std::uint64_t total_steps =
      config.anneal_total_steps > 0
          ? config.anneal_total_steps
          : static_cast<std::uint64_t>(config.max_epochs) * batches_per_epoch;

  nd::RngStream shuffle_rng(nd::RngStream::derive(
      config.seed, purpose_of(phase_tag, kShuffleStream)));
  nd::RngStream noise_rng(nd::RngStream::derive(
      config.seed, purpose_of(phase_tag, kNoiseStream)));

  model::Params params;
  std::vector<nd::AdamState> adam;
  TrainerSnapshot snap;
  snap.phase = phase_tag;
  snap.phase_cap = phase_cap;

  PhaseResult res;
  if (resume != nullptr) {
    params = resume->params;
    adam = resume->adam;
    snap = resume->snapshot;
    shuffle_rng.set_state(snap.shuffle_state);
    noise_rng.set_state(snap.noise_state);
    if (resume->best_params) {
      res.best_params = *resume->best_params;
    } else {
      res.best_params = params;
    }
    res.best_score = snap.best_score;
    res.best_epoch = snap.best_epoch;
    res.best_beta = snap.best_beta;
  } else {
    nd::RngStream init_rng(nd::RngStream::derive(
        config.seed, purpose_of(phase_tag, kInitStream)));
    params = model::Params::init(dims, init_rng);
    for (const auto& t : params.tensors())
      adam.emplace_back(t.tensor->rows, t.tensor->cols, config.lr);
    res.best_params = params;  // placeholder until the first validation
  }

  std::vector<std::size_t> order(n_examples);

  for (std::size_t epoch = snap.next_epoch; epoch <= config.max_epochs;
       ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    // Each epoch's permutation is a function of the stream state alone, so a
    // resumed run shuffles identically to the uninterrupted one.
    std::iota(order.begin(), order.end(), 0);
    shuffle_rng.shuffle(order);

    double sum_total = 0.0, sum_nll = 0.0, sum_kl = 0.0;
    double current_beta = snap.has_best ? snap.best_beta : 0.0;
    for (std::size_t b = 0; b < batches_per_epoch; ++b) {
      const std::size_t lo = b * config.batch_size;
      const std::size_t hi = std::min(lo + config.batch_size, n_examples);
      model::BatchInput batch;
      batch.rows.reserve(hi - lo);
      batch.conditions.reserve(hi - lo);
      for (std::size_t e = lo; e < hi; ++e) {
        const auto& ex = dataset.examples[order[e]];
        batch.rows.emplace_back(M.rows[ex.user]);
        batch.conditions.push_back(ex.condition);
      }

      snap.global_step += 1;
      current_beta = anneal_beta(snap.global_step, phase_cap, total_steps);
      res.beta_trace.push_back(current_beta);

      try {
        auto fwd = model::forward_loss(batch, G, params, current_beta,
                                       config.dropout_p, noise_rng,
                                       /*training=*/true, nullptr,
                                       config.input_order);
        if (!std::isfinite(fwd.mean.total))
          throw std::runtime_error("non-finite batch loss");
        for (const auto& lb : fwd.per_example) {
          sum_total += lb.total;
          sum_nll += lb.neg_ll;
          sum_kl += lb.kl;
        }
        auto grads = model::backward(fwd.cache, batch, G, params, current_beta);
        auto prefs = params.tensors();
        auto grefs = grads.tensors();
        for (std::size_t t = 0; t < prefs.size(); ++t)
          nd::adam_update(*prefs[t].tensor, *grefs[t].tensor, adam[t]);
      } catch (const std::exception& e) {
        res.aborted_nonfinite = true;
        res.abort_message = "training aborted at epoch " +
                            std::to_string(epoch) + ", step " +
                            std::to_string(snap.global_step) + ": " + e.what();
        if (!snap.has_best) res.best_params = params;
        return res;
      }
    }

    EpochReport report;
    report.epoch = epoch;
    report.mean_train_loss = sum_total / static_cast<double>(n_examples);
    report.mean_nll = sum_nll / static_cast<double>(n_examples);
    report.mean_kl = sum_kl / static_cast<double>(n_examples);
    report.current_beta = current_beta;
    report.val_ndcg100 = hooks.validate(params);
    report.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    res.reports.push_back(report);
    res.epochs_run += 1;

    // Strict improvement; ties keep the earlier epoch.
    if (!snap.has_best || report.val_ndcg100 > snap.best_score) {
      snap.has_best = true;
      snap.best_score = report.val_ndcg100;
      snap.best_epoch = epoch;
      snap.best_beta = current_beta;
      snap.since_improve = 0;
      res.best_params = params;
      res.best_score = snap.best_score;
      res.best_epoch = epoch;
      res.best_beta = current_beta;
      if (hooks.on_best) hooks.on_best(params, current_beta, epoch);
    } else {
      snap.since_improve += 1;
    }

    if (hooks.on_report) hooks.on_report(report);
    snap.next_epoch = epoch + 1;
    snap.shuffle_state = state_of(shuffle_rng);
    snap.noise_state = state_of(noise_rng);
    if (hooks.on_epoch_end) hooks.on_epoch_end(params, adam, snap);

    if (snap.since_improve >= config.patience) break;
  }
  return res;
}

TwoPhaseResult two_phase_train(const data::Dataset& dataset,
                               const TrainConfig& config,
                               const PhaseHooks& hooks) {
  TwoPhaseResult out;
  out.phase1 = run_phase(dataset, config, /*phase_cap=*/1.0, "phase1", hooks);
  out.selected_beta = out.phase1.best_beta;
  out.phase2 =
      run_phase(dataset, config, out.selected_beta, "phase2", hooks);
  return out;
}

ValidationFn make_validation(const data::Dataset& dataset,
                             const TrainConfig& config, unsigned threads) {
  eval::EvalProtocol protocol;
  protocol.kind = config.validation_protocol;
  protocol.ks_recall = {};
  protocol.ks_ndcg = {100};
  return [&dataset, protocol, threads](const model::Params& params) {
    eval::ModelScorer scorer(params);
    const auto report =
        eval::evaluate(scorer, dataset.split.val_users, dataset.conditions,
                       protocol, /*filtered_baseline=*/false,
                       /*keep_per_case=*/false, threads);
    return report.summaries.at(0).mean;
  };
}

}  // namespace cvae::train
