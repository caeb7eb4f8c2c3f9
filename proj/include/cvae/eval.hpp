#pragma once

// Ranking construction and metric computation under the three evaluation
// protocols (total / normal / conditioned), including the filtered-output
// baseline that restricts an unconditioned model's ranking to the items
// satisfying the condition.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cvae/data.hpp"
#include "cvae/model.hpp"

namespace cvae::eval {

enum class ProtocolKind { Total, Normal, Conditioned };

const char* protocol_name(ProtocolKind kind);
ProtocolKind parse_protocol(const std::string& name);

struct EvalProtocol {
  ProtocolKind kind = ProtocolKind::Total;
  std::vector<std::size_t> ks_recall = {20, 50};
  std::vector<std::size_t> ks_ndcg = {100};
};

struct RankedList {
  std::uint32_t user = 0;
  std::optional<std::uint32_t> condition;
  std::vector<std::uint32_t> item_order;  // descending score, stable by index
  std::vector<std::uint32_t> excluded;    // fold-in items (sorted)
};

struct MetricSummary {
  std::string metric;  // "recall" or "ndcg"
  std::size_t k = 0;
  double mean = 0.0;
  double std_error = 0.0;  // sample std (n-1 normalized) / sqrt(n_cases)
  std::size_t n_cases = 0;
};

// One evaluation unit: a user with a fold-in input and a held-out target
// (restricted to the active category for conditioned cases).
struct EvalCase {
  std::uint32_t user = 0;
  std::optional<std::uint32_t> condition;
  std::span<const std::uint32_t> foldin;
  std::vector<std::uint32_t> target;  // sorted, non-empty
};

// Score provider over the full item set. The model-backed implementation is
// pure and safe to call concurrently; tests plug oracles through the same
// interface.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual std::vector<double> score(
      std::span<const std::uint32_t> foldin,
      const std::optional<std::uint32_t>& condition) const = 0;
  virtual std::size_t item_count() const = 0;
};

class ModelScorer : public Scorer {
 public:
  explicit ModelScorer(const model::Params& params) : params_(&params) {}
  std::vector<double> score(
      std::span<const std::uint32_t> foldin,
      const std::optional<std::uint32_t>& condition) const override;
  std::size_t item_count() const override { return params_->dims.m; }

 private:
  const model::Params* params_;
};

// |top-k intersect heldout| / min(k, |heldout|).
double recall_at_k(const RankedList& ranked,
                   std::span<const std::uint32_t> heldout, std::size_t k);

// DCG over hit ranks r (1-based) of 1/log2(r+1) truncated at k, normalized
// by the ideal DCG of min(k, |heldout|) top-placed hits.
double ndcg_at_k(const RankedList& ranked,
                 std::span<const std::uint32_t> heldout, std::size_t k);

// Whole-item-set ranking: fold-in excluded, ties broken by ascending index.
RankedList rank_cvae(const Scorer& scorer, std::uint32_t user,
                     std::span<const std::uint32_t> foldin,
                     const std::optional<std::uint32_t>& condition);

// Unconditioned scores ranked over only the items satisfying the condition
// (minus fold-in). An unconditioned call ranks the whole set.
RankedList rank_filtered_baseline(const Scorer& scorer, std::uint32_t user,
                                  std::span<const std::uint32_t> foldin,
                                  const std::optional<std::uint32_t>& condition,
                                  const data::ItemConditionMatrix& G);

// Case enumeration: normal = one unconditioned case per user; conditioned =
// one case per (user, category) whose held-out set contains at least one
// item of that category, with the target restricted to that subset; total =
// union of both.
std::vector<EvalCase> build_cases(const std::vector<data::HeldoutUser>& users,
                                  const data::ItemConditionMatrix& G,
                                  ProtocolKind kind);

struct PerCaseRecord {
  std::uint32_t user = 0;
  std::optional<std::uint32_t> condition;
  std::vector<std::pair<std::string, double>> values;  // "recall@20" -> v
};

struct EvalReport {
  ProtocolKind kind = ProtocolKind::Total;
  std::vector<MetricSummary> summaries;
  std::vector<PerCaseRecord> per_case;  // populated only when requested
  std::size_t skipped_cases = 0;        // filtered baseline, empty candidates
};

// Runs every case through the scorer (filtered-baseline mode when
// `filtered_baseline` is set) and aggregates mean and standard error per
// metric; cases fan out over `threads` workers (0/1 = single-threaded
// reference) with a fixed aggregation order.
EvalReport evaluate(const Scorer& scorer,
                    const std::vector<data::HeldoutUser>& users,
                    const data::ItemConditionMatrix& G,
                    const EvalProtocol& protocol, bool filtered_baseline,
                    bool keep_per_case, unsigned threads);

nlohmann::ordered_json report_to_json(const EvalReport& report);
// Text table mirroring the usual recall@k / nDCG@k layout.
std::string format_report(const std::string& label, const EvalReport& report);

struct Recommendation {
  std::string item_id;
  double score = 0.0;
};

// Serving wrapper: external-id history in, top-N external ids out. Unknown
// history ids are skipped and counted; an unknown condition label throws,
// listing the valid labels.
std::vector<Recommendation> recommend(
    const model::Params& params, const data::InteractionMatrix& interactions,
    const data::ItemConditionMatrix& G,
    const std::vector<std::string>& history_ids,
    const std::optional<std::string>& condition_label, std::size_t n,
    std::size_t* skipped_history_ids = nullptr);

}  // namespace cvae::eval
