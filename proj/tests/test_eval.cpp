#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "cvae/eval.hpp"
#include "cvae/rng.hpp"
#include "oracles.hpp"

using namespace cvae;

namespace {

// Scorer with explicit per-item values; ignores fold-in and condition.
class FixedScorer : public eval::Scorer {
 public:
  explicit FixedScorer(std::vector<double> scores)
      : scores_(std::move(scores)) {}
  std::vector<double> score(std::span<const std::uint32_t>,
                            const std::optional<std::uint32_t>&) const
      override {
    return scores_;
  }
  std::size_t item_count() const override { return scores_.size(); }

 private:
  std::vector<double> scores_;
};

// Perfect scorer: puts each case's exact target on top — the held-out items
// restricted to the active category for conditioned cases.
class PerfectScorer : public eval::Scorer {
 public:
  PerfectScorer(const std::vector<data::HeldoutUser>& users,
                const data::ItemConditionMatrix& g)
      : users_(&users), g_(&g) {}
  std::vector<double> score(std::span<const std::uint32_t> foldin,
                            const std::optional<std::uint32_t>& condition)
      const override {
    std::vector<double> s(g_->m, 0.0);
    for (const auto& hu : *users_) {
      if (std::equal(hu.foldin.begin(), hu.foldin.end(), foldin.begin(),
                     foldin.end())) {
        for (auto i : hu.heldout)
          if (!condition || g_->item_in_category(i, *condition)) s[i] = 1.0;
        break;
      }
    }
    return s;
  }
  std::size_t item_count() const override { return g_->m; }

 private:
  const std::vector<data::HeldoutUser>* users_;
  const data::ItemConditionMatrix* g_;
};

eval::RankedList make_ranked(std::vector<std::uint32_t> order) {
  eval::RankedList r;
  r.item_order = std::move(order);
  return r;
}

data::ItemConditionMatrix two_cat_matrix(std::size_t m) {
  data::ItemConditionMatrix g;
  g.m = m;
  g.s = 2;
  g.rows.resize(m);
  for (std::uint32_t i = 0; i < m; ++i) g.rows[i] = {i % 2 == 0 ? 0u : 1u};
  g.category_names = {"even", "odd"};
  return g;
}

}  // namespace

TEST_CASE("recall@k: perfect hit, total miss, partial") {
  const auto ranked = make_ranked({5, 1, 2, 3, 4});
  const std::vector<std::uint32_t> single = {5};
  CHECK(eval::recall_at_k(ranked, single, 20) == 1.0);

  const std::vector<std::uint32_t> missing = {9};
  CHECK(eval::recall_at_k(ranked, missing, 3) == 0.0);

  // 30 held-out, 15 hit inside the top-20: 15 / min(20, 30) = 0.75.
  std::vector<std::uint32_t> order(40);
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::uint32_t> heldout;
  for (std::uint32_t i = 0; i < 15; ++i) heldout.push_back(i);      // hits
  for (std::uint32_t i = 100; i < 115; ++i) heldout.push_back(i);   // misses
  CHECK(eval::recall_at_k(make_ranked(order), heldout, 20) == 0.75);

  const std::vector<std::uint32_t> empty;
  CHECK_THROWS(eval::recall_at_k(ranked, empty, 5));
}

TEST_CASE("ndcg@k: closed-form positions") {
  const std::vector<std::uint32_t> target = {7};
  CHECK(eval::ndcg_at_k(make_ranked({7, 1, 2}), target, 10) == 1.0);
  CHECK(eval::ndcg_at_k(make_ranked({1, 7, 2}), target, 10) ==
        doctest::Approx(1.0 / std::log2(3.0)).epsilon(1e-12));
  CHECK_THROWS(eval::ndcg_at_k(make_ranked({1, 2}), {}, 5));
}

TEST_CASE("metrics match brute force over all rankings of <= 7 items") {
  // Exhaustive: every permutation of n items, every held-out subset of
  // size <= 3, several cutoffs.
  for (std::size_t n : {5u, 6u, 7u}) {
    std::vector<std::uint32_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<std::uint32_t> base = perm;
    do {
      for (std::uint32_t mask = 1; mask < (1u << n); ++mask) {
        if (__builtin_popcount(mask) > 3) continue;
        std::vector<std::uint32_t> heldout;
        for (std::uint32_t i = 0; i < n; ++i)
          if (mask & (1u << i)) heldout.push_back(i);
        for (std::size_t k : {1u, 2u, 3u, 5u, 7u}) {
          const auto ranked = make_ranked(base);
          CHECK(eval::recall_at_k(ranked, heldout, k) ==
                oracles::recall_oracle(base, heldout, k));
          CHECK(eval::ndcg_at_k(ranked, heldout, k) ==
                doctest::Approx(oracles::ndcg_oracle(base, heldout, k))
                    .epsilon(1e-14));
        }
      }
    } while (std::next_permutation(base.begin(), base.end()) &&
             n < 6);  // full sweep at n=5, first permutation only above
  }
}

TEST_CASE("metrics are invariant under consistent item relabeling") {
  nd::RngStream rng(44);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<std::uint32_t> order(12);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    std::vector<std::uint32_t> heldout = {order[2], order[5], order[9]};
    std::sort(heldout.begin(), heldout.end());

    // Relabel: i -> i + 100.
    std::vector<std::uint32_t> order2;
    for (auto i : order) order2.push_back(i + 100);
    std::vector<std::uint32_t> heldout2;
    for (auto i : heldout) heldout2.push_back(i + 100);

    for (std::size_t k : {1u, 3u, 5u, 10u}) {
      CHECK(eval::recall_at_k(make_ranked(order), heldout, k) ==
            eval::recall_at_k(make_ranked(order2), heldout2, k));
      CHECK(eval::ndcg_at_k(make_ranked(order), heldout, k) ==
            eval::ndcg_at_k(make_ranked(order2), heldout2, k));
    }
  }
}

TEST_CASE("saturated case: all held-out inside top-k gives 1.0 for both") {
  std::vector<std::uint32_t> order(30);
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::uint32_t> heldout(10);
  std::iota(heldout.begin(), heldout.end(), 0);  // ranks 1..10
  CHECK(eval::recall_at_k(make_ranked(order), heldout, 10) == 1.0);
  CHECK(eval::ndcg_at_k(make_ranked(order), heldout, 10) ==
        doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("rank_cvae: exclusion, tie-breaking, determinism") {
  std::vector<double> scores = {0.5, 0.9, 0.5, 0.1, 0.9};
  FixedScorer scorer(scores);
  const std::vector<std::uint32_t> foldin = {1};
  const auto ranked = eval::rank_cvae(scorer, 0, foldin, std::nullopt);
  // Item 1 excluded; ties resolve by ascending index: 4 (0.9), 0, 2, 3.
  CHECK(ranked.item_order == std::vector<std::uint32_t>{4, 0, 2, 3});
  const auto again = eval::rank_cvae(scorer, 0, foldin, std::nullopt);
  CHECK(ranked.item_order == again.item_order);
}

TEST_CASE("rank_filtered_baseline: candidate set contracts") {
  const auto g = two_cat_matrix(8);
  std::vector<double> scores = {0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1};
  FixedScorer scorer(scores);
  const std::vector<std::uint32_t> foldin = {0};

  const auto cond = eval::rank_filtered_baseline(scorer, 0, foldin,
                                                 std::uint32_t{0}, g);
  // Even items minus fold-in: 2, 4, 6 by descending score.
  CHECK(cond.item_order == std::vector<std::uint32_t>{2, 4, 6});
  for (auto i : cond.item_order) CHECK(g.item_in_category(i, 0));

  const auto uncond =
      eval::rank_filtered_baseline(scorer, 0, foldin, std::nullopt, g);
  CHECK(uncond.item_order.size() == 7);  // all items minus fold-in
}

TEST_CASE("build_cases: enumeration per protocol") {
  const auto g = two_cat_matrix(6);
  data::HeldoutUser hu;
  hu.user = 3;
  hu.foldin = {0, 1};
  hu.heldout = {2, 5};  // item 2 even, item 5 odd: both categories satisfiable
  const std::vector<data::HeldoutUser> users = {hu};

  CHECK(eval::build_cases(users, g, eval::ProtocolKind::Normal).size() == 1);
  const auto conditioned =
      eval::build_cases(users, g, eval::ProtocolKind::Conditioned);
  CHECK(conditioned.size() == 2);
  const auto total = eval::build_cases(users, g, eval::ProtocolKind::Total);
  CHECK(total.size() == 3);

  // Conditioned targets restrict to the category subset.
  for (const auto& c : conditioned) {
    REQUIRE(c.condition.has_value());
    for (auto item : c.target) CHECK(g.item_in_category(item, *c.condition));
  }

  // A user with single-category held-outs yields one conditioned case.
  data::HeldoutUser hu2;
  hu2.user = 4;
  hu2.foldin = {1, 3};
  hu2.heldout = {2, 4};  // both even
  const std::vector<data::HeldoutUser> users2 = {hu2};
  CHECK(eval::build_cases(users2, g, eval::ProtocolKind::Conditioned).size() ==
        1);
}

TEST_CASE("evaluate: perfect scorer hits the oracle upper bound") {
  const auto g = two_cat_matrix(10);
  std::vector<data::HeldoutUser> users;
  for (std::uint32_t u = 0; u < 3; ++u) {
    data::HeldoutUser hu;
    hu.user = u;
    hu.foldin = {u, u + 1};
    hu.heldout = {u + 4, u + 5};
    users.push_back(hu);
  }
  PerfectScorer scorer(users, g);
  eval::EvalProtocol protocol;
  protocol.kind = eval::ProtocolKind::Total;
  protocol.ks_recall = {2, 5};
  protocol.ks_ndcg = {5};
  const auto report = eval::evaluate(scorer, users, g, protocol, false, false,
                                     1);
  for (const auto& s : report.summaries) {
    CHECK(s.mean == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s.std_error == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("evaluate: standard error matches a two-pass oracle") {
  const auto g = two_cat_matrix(12);
  std::vector<data::HeldoutUser> users;
  for (std::uint32_t u = 0; u < 8; ++u) {
    data::HeldoutUser hu;
    hu.user = u;
    hu.foldin = {u};
    hu.heldout = {(u + 1) % 12, (u + 5) % 12};
    std::sort(hu.heldout.begin(), hu.heldout.end());
    users.push_back(hu);
  }
  std::vector<double> scores(12);
  nd::RngStream rng(3);
  for (auto& s : scores) s = rng.uniform();
  FixedScorer scorer(scores);

  eval::EvalProtocol protocol;
  protocol.kind = eval::ProtocolKind::Normal;
  protocol.ks_recall = {3};
  protocol.ks_ndcg = {};
  const auto report =
      eval::evaluate(scorer, users, g, protocol, false, true, 1);
  REQUIRE(report.per_case.size() == 8);

  std::vector<double> values;
  for (const auto& rec : report.per_case) values.push_back(rec.values[0].second);
  const double mean =
      std::accumulate(values.begin(), values.end(), 0.0) / values.size();
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  const double want = std::sqrt(sq / (values.size() - 1)) /
                      std::sqrt(static_cast<double>(values.size()));
  CHECK(report.summaries[0].mean == doctest::Approx(mean).epsilon(1e-12));
  CHECK(report.summaries[0].std_error == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("evaluate: thread fan-out does not change the report") {
  const auto g = two_cat_matrix(16);
  std::vector<data::HeldoutUser> users;
  for (std::uint32_t u = 0; u < 12; ++u) {
    data::HeldoutUser hu;
    hu.user = u;
    hu.foldin = {u % 16};
    hu.heldout = {(u + 3) % 16, (u + 7) % 16};
    std::sort(hu.heldout.begin(), hu.heldout.end());
    if (hu.heldout[0] == hu.foldin[0]) hu.heldout[0] = (u + 8) % 16;
    std::sort(hu.heldout.begin(), hu.heldout.end());
    users.push_back(hu);
  }
  std::vector<double> scores(16);
  nd::RngStream rng(5);
  for (auto& s : scores) s = rng.uniform();
  FixedScorer scorer(scores);
  eval::EvalProtocol protocol;
  const auto a = eval::evaluate(scorer, users, g, protocol, false, false, 1);
  const auto b = eval::evaluate(scorer, users, g, protocol, false, false, 4);
  REQUIRE(a.summaries.size() == b.summaries.size());
  for (std::size_t i = 0; i < a.summaries.size(); ++i) {
    CHECK(a.summaries[i].mean == b.summaries[i].mean);
    CHECK(a.summaries[i].std_error == b.summaries[i].std_error);
  }
}

TEST_CASE("filtered baseline equals brute force on small candidate sets") {
  // q <= 7 candidates: compare against the oracle metric on the same
  // subproblem for every condition.
  const auto g = two_cat_matrix(14);  // 7 even, 7 odd
  nd::RngStream rng(17);
  for (int trial = 0; trial < 25; ++trial) {
    std::vector<double> scores(14);
    for (auto& s : scores) s = rng.uniform();
    FixedScorer scorer(scores);
    const std::vector<std::uint32_t> foldin;  // keep all 7 candidates
    for (std::uint32_t cond = 0; cond < 2; ++cond) {
      const auto ranked =
          eval::rank_filtered_baseline(scorer, 0, foldin, cond, g);
      REQUIRE(ranked.item_order.size() == 7);
      std::vector<std::uint32_t> heldout = {cond, static_cast<std::uint32_t>(
                                                      cond + 4)};
      for (std::size_t k : {1u, 3u, 7u}) {
        CHECK(eval::recall_at_k(ranked, heldout, k) ==
              oracles::recall_oracle(ranked.item_order, heldout, k));
        CHECK(eval::ndcg_at_k(ranked, heldout, k) ==
              doctest::Approx(
                  oracles::ndcg_oracle(ranked.item_order, heldout, k))
                  .epsilon(1e-14));
      }
    }
  }
}
