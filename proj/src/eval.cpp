#include "cvae/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace cvae::eval {
namespace {

bool contains(std::span<const std::uint32_t> sorted, std::uint32_t v) {
  return std::binary_search(sorted.begin(), sorted.end(), v);
}

// Sort candidate items by descending score, ascending index on ties.
void order_by_score(std::vector<std::uint32_t>& items,
                    const std::vector<double>& scores) {
  std::sort(items.begin(), items.end(),
            [&](std::uint32_t a, std::uint32_t b) {
              if (scores[a] != scores[b]) return scores[a] > scores[b];
              return a < b;
            });
}

void run_chunked(std::size_t n, unsigned threads,
                 const std::function<void(std::size_t)>& body) {
  if (threads <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      body(i);
    }
  };
  std::vector<std::thread> pool;
  const unsigned count = std::min<unsigned>(threads, std::thread::hardware_concurrency() ? std::thread::hardware_concurrency() : 2);
  for (unsigned t = 0; t < count; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

}  // namespace

const char* protocol_name(ProtocolKind kind) {
  switch (kind) {
    case ProtocolKind::Total: return "total";
    case ProtocolKind::Normal: return "normal";
    case ProtocolKind::Conditioned: return "conditioned";
  }
  return "?";
}

ProtocolKind parse_protocol(const std::string& name) {
  if (name == "total") return ProtocolKind::Total;
  if (name == "normal") return ProtocolKind::Normal;
  if (name == "conditioned") return ProtocolKind::Conditioned;
  throw std::invalid_argument("unknown protocol: " + name +
                              " (expected total|normal|conditioned)");
}

std::vector<double> ModelScorer::score(
    std::span<const std::uint32_t> foldin,
    const std::optional<std::uint32_t>& condition) const {
  // An s = 0 model has no condition inputs; conditions are ignored.
  const auto c = params_->dims.s == 0 ? std::nullopt : condition;
  return model::predict_scores(foldin, c, *params_);
}

double recall_at_k(const RankedList& ranked,
                   std::span<const std::uint32_t> heldout, std::size_t k) {
  if (heldout.empty()) throw std::invalid_argument("recall: empty held-out");
  const std::size_t top = std::min(k, ranked.item_order.size());
  std::size_t hits = 0;
  for (std::size_t r = 0; r < top; ++r)
    if (contains(heldout, ranked.item_order[r])) ++hits;
  return static_cast<double>(hits) /
         static_cast<double>(std::min(k, heldout.size()));
}

double ndcg_at_k(const RankedList& ranked,
                 std::span<const std::uint32_t> heldout, std::size_t k) {
  if (heldout.empty()) throw std::invalid_argument("ndcg: empty held-out");
  const std::size_t top = std::min(k, ranked.item_order.size());
  double dcg = 0.0;
  for (std::size_t r = 0; r < top; ++r)
    if (contains(heldout, ranked.item_order[r]))
      dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  double idcg = 0.0;
  const std::size_t ideal = std::min(k, heldout.size());
  for (std::size_t r = 0; r < ideal; ++r)
    idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  return dcg / idcg;
}

RankedList rank_cvae(const Scorer& scorer, std::uint32_t user,
                     std::span<const std::uint32_t> foldin,
                     const std::optional<std::uint32_t>& condition) {
  RankedList out;
  out.user = user;
  out.condition = condition;
  out.excluded.assign(foldin.begin(), foldin.end());
  const auto scores = scorer.score(foldin, condition);
  out.item_order.reserve(scores.size() - foldin.size());
  for (std::uint32_t i = 0; i < scores.size(); ++i)
    if (!contains(foldin, i)) out.item_order.push_back(i);
  order_by_score(out.item_order, scores);
  return out;
}

RankedList rank_filtered_baseline(const Scorer& scorer, std::uint32_t user,
                                  std::span<const std::uint32_t> foldin,
                                  const std::optional<std::uint32_t>& condition,
                                  const data::ItemConditionMatrix& G) {
  RankedList out;
  out.user = user;
  out.condition = condition;
  out.excluded.assign(foldin.begin(), foldin.end());
  // The baseline model knows nothing about conditions; it is scored
  // unconditioned and only the candidate set is restricted.
  const auto scores = scorer.score(foldin, std::nullopt);
  if (condition) {
    for (std::uint32_t i = 0; i < scores.size(); ++i)
      if (G.item_in_category(i, *condition) && !contains(foldin, i))
        out.item_order.push_back(i);
  } else {
    for (std::uint32_t i = 0; i < scores.size(); ++i)
      if (!contains(foldin, i)) out.item_order.push_back(i);
  }
  order_by_score(out.item_order, scores);
  return out;
}

std::vector<EvalCase> build_cases(const std::vector<data::HeldoutUser>& users,
                                  const data::ItemConditionMatrix& G,
                                  ProtocolKind kind) {
  std::vector<EvalCase> cases;
  const bool want_normal =
      kind == ProtocolKind::Total || kind == ProtocolKind::Normal;
  const bool want_conditioned =
      kind == ProtocolKind::Total || kind == ProtocolKind::Conditioned;
  for (const auto& hu : users) {
    if (want_normal) {
      EvalCase c;
      c.user = hu.user;
      c.foldin = hu.foldin;
      c.target = hu.heldout;
      cases.push_back(std::move(c));
    }
    if (want_conditioned) {
      // One case per category with a non-empty held-out intersection.
      std::vector<std::vector<std::uint32_t>> by_cat(G.s);
      for (auto item : hu.heldout)
        for (auto cat : G.rows[item]) by_cat[cat].push_back(item);
      for (std::uint32_t j = 0; j < G.s; ++j) {
        if (by_cat[j].empty()) continue;
        EvalCase c;
        c.user = hu.user;
        c.condition = j;
        c.foldin = hu.foldin;
        c.target = std::move(by_cat[j]);
        cases.push_back(std::move(c));
      }
    }
  }
  return cases;
}

EvalReport evaluate(const Scorer& scorer,
                    const std::vector<data::HeldoutUser>& users,
                    const data::ItemConditionMatrix& G,
                    const EvalProtocol& protocol, bool filtered_baseline,
                    bool keep_per_case, unsigned threads) {
  EvalReport report;
  report.kind = protocol.kind;
  const auto cases = build_cases(users, G, protocol.kind);
  if (cases.empty()) throw std::runtime_error("evaluate: no evaluation cases");

  struct Metric {
    std::string name;
    std::size_t k;
    bool is_ndcg;
  };
  std::vector<Metric> metrics;
  for (auto k : protocol.ks_recall) metrics.push_back({"recall", k, false});
  for (auto k : protocol.ks_ndcg) metrics.push_back({"ndcg", k, true});
  if (metrics.empty()) throw std::invalid_argument("evaluate: no metrics");

  // Per-case values land in preassigned slots so the aggregation order (and
  // thus the report) is independent of the thread count.
  std::vector<std::vector<double>> values(metrics.size(),
                                          std::vector<double>(cases.size()));
  std::vector<char> skipped(cases.size(), 0);
  run_chunked(cases.size(), threads, [&](std::size_t ci) {
    const EvalCase& c = cases[ci];
    RankedList ranked =
        filtered_baseline
            ? rank_filtered_baseline(scorer, c.user, c.foldin, c.condition, G)
            : rank_cvae(scorer, c.user, c.foldin, c.condition);
    if (ranked.item_order.empty()) {
      skipped[ci] = 1;
      return;
    }
    for (std::size_t mi = 0; mi < metrics.size(); ++mi)
      values[mi][ci] = metrics[mi].is_ndcg
                           ? ndcg_at_k(ranked, c.target, metrics[mi].k)
                           : recall_at_k(ranked, c.target, metrics[mi].k);
  });

  std::vector<std::size_t> kept;
  for (std::size_t ci = 0; ci < cases.size(); ++ci) {
    if (skipped[ci]) {
      ++report.skipped_cases;
      continue;
    }
    kept.push_back(ci);
  }
  if (kept.empty())
    throw std::runtime_error("evaluate: every case was skipped");

  for (std::size_t mi = 0; mi < metrics.size(); ++mi) {
    MetricSummary s;
    s.metric = metrics[mi].name;
    s.k = metrics[mi].k;
    s.n_cases = kept.size();
    double sum = 0.0;
    for (auto ci : kept) sum += values[mi][ci];
    s.mean = sum / static_cast<double>(kept.size());
    if (kept.size() > 1) {
      double sq = 0.0;
      for (auto ci : kept) {
        const double d = values[mi][ci] - s.mean;
        sq += d * d;
      }
      const double sample_std =
          std::sqrt(sq / static_cast<double>(kept.size() - 1));
      s.std_error = sample_std / std::sqrt(static_cast<double>(kept.size()));
    }
    report.summaries.push_back(std::move(s));
  }

  if (keep_per_case) {
    for (auto ci : kept) {
      PerCaseRecord rec;
      rec.user = cases[ci].user;
      rec.condition = cases[ci].condition;
      for (std::size_t mi = 0; mi < metrics.size(); ++mi)
        rec.values.emplace_back(
            metrics[mi].name + "@" + std::to_string(metrics[mi].k),
            values[mi][ci]);
      report.per_case.push_back(std::move(rec));
    }
  }
  return report;
}

nlohmann::ordered_json report_to_json(const EvalReport& report) {
  nlohmann::ordered_json out;
  out["protocol"] = protocol_name(report.kind);
  out["skipped_cases"] = report.skipped_cases;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& s : report.summaries)
    rows.push_back({{"metric", s.metric},
                    {"k", s.k},
                    {"mean", s.mean},
                    {"stderr", s.std_error},
                    {"n_cases", s.n_cases}});
  out["metrics"] = rows;
  return out;
}

std::string format_report(const std::string& label, const EvalReport& report) {
  std::ostringstream ss;
  ss << label << " [" << protocol_name(report.kind) << "]";
  if (report.skipped_cases > 0)
    ss << " (skipped " << report.skipped_cases << " empty-candidate cases)";
  ss << "\n";
  char buf[128];
  for (const auto& s : report.summaries) {
    std::snprintf(buf, sizeof(buf), "  %s@%-4zu %.4f +/- %.4f  (n=%zu)\n",
                  s.metric == "ndcg" ? "n" : "r", s.k, s.mean, s.std_error,
                  s.n_cases);
    ss << buf;
  }
  return ss.str();
}

std::vector<Recommendation> recommend(
    const model::Params& params, const data::InteractionMatrix& interactions,
    const data::ItemConditionMatrix& G,
    const std::vector<std::string>& history_ids,
    const std::optional<std::string>& condition_label, std::size_t n,
    std::size_t* skipped_history_ids) {
  std::set<std::uint32_t> history;
  std::size_t skipped = 0;
  for (const auto& id : history_ids) {
    auto it = interactions.item_index.find(id);
    if (it == interactions.item_index.end())
      ++skipped;
    else
      history.insert(it->second);
  }
  if (skipped_history_ids) *skipped_history_ids = skipped;

  std::optional<std::uint32_t> condition;
  if (condition_label) {
    auto it = std::find(G.category_names.begin(), G.category_names.end(),
                        *condition_label);
    if (it == G.category_names.end()) {
      std::string valid;
      for (const auto& name : G.category_names) {
        if (!valid.empty()) valid += ", ";
        valid += name;
      }
      throw std::runtime_error("unknown condition label '" + *condition_label +
                               "'; valid labels: " + valid);
    }
    condition = static_cast<std::uint32_t>(
        std::distance(G.category_names.begin(), it));
  }

  const std::vector<std::uint32_t> foldin(history.begin(), history.end());
  const auto scores = model::predict_scores(foldin, condition, params);
  std::vector<std::uint32_t> candidates;
  for (std::uint32_t i = 0; i < scores.size(); ++i)
    if (!history.count(i)) candidates.push_back(i);
  order_by_score(candidates, scores);

  std::vector<Recommendation> out;
  const std::size_t count = std::min(n, candidates.size());
  out.reserve(count);
  for (std::size_t r = 0; r < count; ++r)
    out.push_back({interactions.item_ids[candidates[r]],
                   scores[candidates[r]]});
  return out;
}

}  // namespace cvae::eval
