#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "cvae/train.hpp"

using namespace cvae;

namespace {

// Small in-memory block dataset: s equal item blocks, users prefer one block
// with a little spillover, last users become val/test fold-in users.
data::Dataset make_block_dataset(std::size_t n_users = 60,
                                 std::size_t m = 24, std::size_t s = 3,
                                 std::uint64_t seed = 11,
                                 std::size_t n_heldout = 10) {
  data::Dataset ds;
  ds.seed = seed;
  auto& M = ds.interactions;
  M.n = n_users;
  M.m = m;
  M.rows.resize(n_users);
  const std::size_t block = m / s;
  nd::RngStream rng(seed);
  for (std::uint32_t u = 0; u < n_users; ++u) {
    const std::size_t primary = u % s;
    const std::size_t secondary = (u + 1) % s;
    std::set<std::uint32_t> items;
    while (items.size() < 6)
      items.insert(
          static_cast<std::uint32_t>(primary * block + rng.below(block)));
    while (items.size() < 8)
      items.insert(
          static_cast<std::uint32_t>(secondary * block + rng.below(block)));
    M.rows[u].assign(items.begin(), items.end());
  }
  for (std::uint32_t u = 0; u < n_users; ++u) {
    M.user_ids.push_back("u" + std::to_string(u));
    M.user_index[M.user_ids.back()] = u;
  }
  for (std::uint32_t i = 0; i < m; ++i) {
    M.item_ids.push_back("i" + std::to_string(i));
    M.item_index[M.item_ids.back()] = i;
  }

  auto& G = ds.conditions;
  G.m = m;
  G.s = s;
  G.rows.resize(m);
  for (std::uint32_t i = 0; i < m; ++i)
    G.rows[i] = {static_cast<std::uint32_t>(i / block)};
  for (std::size_t c = 0; c < s; ++c)
    G.category_names.push_back("cat" + std::to_string(c));

  // Last n_heldout users held out: half validation, half test.
  for (std::uint32_t u = 0; u < n_users; ++u) {
    if (u < n_users - n_heldout) {
      ds.split.train_users.push_back(u);
      continue;
    }
    data::HeldoutUser hu;
    hu.user = u;
    const auto& row = M.rows[u];
    const std::size_t cut = row.size() - 2;
    hu.foldin.assign(row.begin(), row.begin() + cut);
    hu.heldout.assign(row.begin() + cut, row.end());
    if (u < n_users - n_heldout / 2)
      ds.split.val_users.push_back(std::move(hu));
    else
      ds.split.test_users.push_back(std::move(hu));
  }
  ds.examples =
      data::expand_conditions(M, G, ds.split.train_users);
  return ds;
}

train::TrainConfig small_config(std::size_t max_epochs, double cap = 1.0) {
  train::TrainConfig tc;
  tc.batch_size = 32;
  tc.max_epochs = max_epochs;
  tc.lr = 0.01;
  tc.anneal_cap = cap;
  tc.patience = 5;
  tc.dropout_p = 0.2;
  tc.seed = 123;
  tc.hidden_dim = 16;
  tc.latent_dim = 4;
  return tc;
}

}  // namespace

TEST_CASE("anneal_beta: endpoints and linearity") {
  CHECK(train::anneal_beta(0, 1.0, 100) == 0.0);
  CHECK(train::anneal_beta(100, 1.0, 100) == 1.0);
  CHECK(train::anneal_beta(250, 1.0, 100) == 1.0);  // clamped at the cap
  CHECK(train::anneal_beta(50, 0.07, 100) == doctest::Approx(0.035));
}

TEST_CASE("early stopping fires after exactly patience non-improving epochs") {
  auto ds = make_block_dataset();
  auto tc = small_config(50);
  // Scripted plateau: improvements up to epoch 3, flat afterwards.
  std::size_t calls = 0;
  train::PhaseHooks hooks;
  hooks.validate = [&](const model::Params&) {
    ++calls;
    return calls <= 3 ? static_cast<double>(calls) : 3.0;
  };
  const auto res = train::run_phase(ds, tc, 1.0, "phase1", hooks);
  CHECK(res.best_epoch == 3);
  CHECK(res.epochs_run == 8);  // epochs 4..8 are the 5 non-improving ones
  CHECK(res.reports.size() == 8);
  CHECK(res.best_score == 3.0);
}

TEST_CASE("max_epochs bounds the run regardless of patience") {
  auto ds = make_block_dataset();
  auto tc = small_config(1);
  train::PhaseHooks hooks;
  hooks.validate = [](const model::Params&) { return 0.5; };
  const auto res = train::run_phase(ds, tc, 1.0, "phase1", hooks);
  CHECK(res.epochs_run == 1);
  CHECK(res.reports.size() == 1);
}

TEST_CASE("same config and seed replay an identical report sequence") {
  auto ds = make_block_dataset();
  auto tc = small_config(4);
  train::PhaseHooks hooks;
  hooks.validate = train::make_validation(ds, tc, 1);
  const auto a = train::run_phase(ds, tc, 1.0, "phase1", hooks);
  const auto b = train::run_phase(ds, tc, 1.0, "phase1", hooks);
  REQUIRE(a.reports.size() == b.reports.size());
  for (std::size_t i = 0; i < a.reports.size(); ++i) {
    CHECK(a.reports[i].mean_train_loss == b.reports[i].mean_train_loss);
    CHECK(a.reports[i].mean_nll == b.reports[i].mean_nll);
    CHECK(a.reports[i].val_ndcg100 == b.reports[i].val_ndcg100);
  }
  CHECK(a.best_params.enc_w1.data == b.best_params.enc_w1.data);
  CHECK(a.best_params.dec_b2.data == b.best_params.dec_b2.data);
}

TEST_CASE("beta trace is linear to the cap, non-decreasing, bounded") {
  auto ds = make_block_dataset();
  auto tc = small_config(6, 1.0);
  const double cap = 0.4;
  train::PhaseHooks hooks;
  hooks.validate = [](const model::Params&) { return 1.0; };
  // patience 5 with a constant score stops at epoch 6 = max_epochs anyway.
  const auto res = train::run_phase(ds, tc, cap, "phase1", hooks);

  const std::size_t batches =
      (ds.examples.size() + tc.batch_size - 1) / tc.batch_size;
  const double total = static_cast<double>(tc.max_epochs * batches);
  REQUIRE(res.beta_trace.size() == tc.max_epochs * batches);
  for (std::size_t g = 0; g < res.beta_trace.size(); ++g) {
    const double expect =
        cap * std::min(1.0, static_cast<double>(g + 1) / total);
    CHECK(res.beta_trace[g] == doctest::Approx(expect).epsilon(1e-12));
    if (g > 0) CHECK(res.beta_trace[g] >= res.beta_trace[g - 1]);
    CHECK(res.beta_trace[g] <= cap + 1e-15);
  }
  // The last planned step reaches the cap exactly.
  CHECK(res.beta_trace.back() == doctest::Approx(cap).epsilon(1e-12));
  // Epoch reports carry a non-decreasing beta.
  for (std::size_t e = 1; e < res.reports.size(); ++e)
    CHECK(res.reports[e].current_beta >= res.reports[e - 1].current_beta);
}

TEST_CASE("retained checkpoint matches the max of logged validation scores") {
  auto ds = make_block_dataset();
  auto tc = small_config(6);
  train::PhaseHooks hooks;
  hooks.validate = train::make_validation(ds, tc, 1);
  const auto res = train::run_phase(ds, tc, 0.5, "phase1", hooks);
  double best = -1.0;
  std::size_t best_epoch = 0;
  for (const auto& r : res.reports) {
    if (r.val_ndcg100 > best) {  // strict: ties keep the earlier epoch
      best = r.val_ndcg100;
      best_epoch = r.epoch;
    }
  }
  CHECK(res.best_score == best);
  CHECK(res.best_epoch == best_epoch);
}

TEST_CASE("overfit sanity: beta=0 training collapses the nll on 10 examples") {
  // Ten users with a single interaction each: the multinomial optimum puts
  // all mass on that item, so the nll floor is zero and 10% is reachable.
  data::Dataset ds;
  ds.seed = 31;
  ds.interactions.n = 10;
  ds.interactions.m = 12;
  ds.interactions.rows.resize(10);
  for (std::uint32_t u = 0; u < 10; ++u) ds.interactions.rows[u] = {u};
  ds.conditions.m = 12;
  ds.conditions.s = 2;
  ds.conditions.rows.resize(12);
  for (std::uint32_t i = 0; i < 12; ++i)
    ds.conditions.rows[i] = {i < 6 ? 0u : 1u};
  ds.conditions.category_names = {"lo", "hi"};
  for (std::uint32_t u = 0; u < 10; ++u) {
    ds.split.train_users.push_back(u);
    ds.examples.push_back({u, std::nullopt});
  }
  train::TrainConfig tc;
  tc.batch_size = 10;
  tc.max_epochs = 500;
  tc.lr = 0.01;
  tc.anneal_cap = 0.0;
  tc.patience = 1000;
  tc.dropout_p = 0.0;
  tc.seed = 7;
  tc.hidden_dim = 16;
  tc.latent_dim = 4;
  train::PhaseHooks hooks;
  hooks.validate = [](const model::Params&) { return 0.0; };
  const auto res = train::run_phase(ds, tc, 0.0, "phase1", hooks);
  REQUIRE(res.reports.size() == 500);
  const double initial = res.reports.front().mean_nll;
  const double final_nll = res.reports.back().mean_nll;
  CHECK(final_nll < 0.1 * initial);
}

TEST_CASE("two-phase: degenerate early best pins a tiny phase-2 cap") {
  auto ds = make_block_dataset();
  auto tc = small_config(6);
  // Strictly decreasing validation: the first epoch stays the best, so the
  // selected beta is the beta at the end of epoch 1.
  std::size_t calls = 0;
  train::PhaseHooks hooks;
  hooks.validate = [&](const model::Params&) {
    return 1.0 - 0.1 * static_cast<double>(calls++);
  };
  const auto res = train::two_phase_train(ds, tc, hooks);
  CHECK(res.phase1.best_epoch == 1);
  CHECK(res.selected_beta ==
        doctest::Approx(res.phase1.reports[0].current_beta));
  // Phase 2 anneals to the tiny cap and never exceeds it.
  for (double b : res.phase2.beta_trace)
    CHECK(b <= res.selected_beta + 1e-15);
}

TEST_CASE("two-phase on the structured dataset holds validation quality") {
  auto ds = make_block_dataset(160, 24, 3, 17, 40);
  auto tc = small_config(12);
  tc.lr = 0.02;
  train::PhaseHooks hooks;
  hooks.validate = train::make_validation(ds, tc, 1);
  const auto res = train::two_phase_train(ds, tc, hooks);
  CHECK(res.phase2.best_score >= res.phase1.best_score - 0.01);
}

TEST_CASE("non-finite loss aborts with diagnostics and the last good best") {
  auto ds = make_block_dataset();
  auto tc = small_config(6);
  tc.lr = 1e12;  // guaranteed blow-up
  train::PhaseHooks hooks;
  hooks.validate = [](const model::Params&) { return 0.1; };
  const auto res = train::run_phase(ds, tc, 1.0, "phase1", hooks);
  CHECK(res.aborted_nonfinite);
  CHECK_FALSE(res.abort_message.empty());
}

TEST_CASE("resume from a snapshot replays the uninterrupted run exactly") {
  auto ds = make_block_dataset();
  auto tc = small_config(6);

  // Reference: uninterrupted 6 epochs, capturing state after epoch 3.
  train::ResumePoint captured;
  bool have_capture = false;
  model::Params best_at_capture;
  bool have_best = false;
  train::PhaseHooks hooks;
  hooks.validate = train::make_validation(ds, tc, 1);
  hooks.on_best = [&](const model::Params& p, double, std::size_t) {
    if (!have_capture) {
      best_at_capture = p;
      have_best = true;
    }
  };
  hooks.on_epoch_end = [&](const model::Params& p,
                           const std::vector<nd::AdamState>& adam,
                           const train::TrainerSnapshot& snap) {
    if (snap.next_epoch == 4 && !have_capture) {
      captured.params = p;
      captured.adam = adam;
      captured.snapshot = snap;
      if (have_best) captured.best_params = best_at_capture;
      have_capture = true;
    }
  };
  const auto full = train::run_phase(ds, tc, 1.0, "phase1", hooks);
  REQUIRE(have_capture);
  REQUIRE(full.reports.size() == 6);

  train::PhaseHooks plain;
  plain.validate = train::make_validation(ds, tc, 1);
  const auto resumed =
      train::run_phase(ds, tc, 1.0, "phase1", plain, &captured);
  REQUIRE(resumed.reports.size() == 3);  // epochs 4..6
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(resumed.reports[i].epoch == full.reports[3 + i].epoch);
    CHECK(resumed.reports[i].mean_train_loss ==
          full.reports[3 + i].mean_train_loss);
    CHECK(resumed.reports[i].val_ndcg100 == full.reports[3 + i].val_ndcg100);
  }
  CHECK(resumed.best_params.enc_w1.data == full.best_params.enc_w1.data);
  CHECK(resumed.best_score == full.best_score);
}
