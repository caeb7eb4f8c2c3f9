#pragma once

// Post-hoc analyses over a trained checkpoint: where target-category items
// land in the ranking, top-k purity, latent mean export across conditions,
// and a deterministic in-repo PCA with per-category component centroids.
// Everything here is read-only over the model.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cvae/data.hpp"
#include "cvae/eval.hpp"
#include "cvae/matrix.hpp"
#include "cvae/model.hpp"

namespace cvae::analyze {

// A user together with the interaction row fed to the model (full row for
// training users, fold-in for held-out users). Analysis cases are the
// (user, category) pairs whose input row contains at least one item of the
// category; the input row is also the ranking exclusion set.
struct UserRow {
  std::uint32_t user = 0;
  std::span<const std::uint32_t> row;
};

std::vector<UserRow> user_rows(const data::InteractionMatrix& interactions,
                               const std::vector<std::uint32_t>& users);

struct RankHistogram {
  std::vector<std::size_t> bins;  // count of target-category items per rank
  std::size_t max_rank = 0;
  std::size_t n_cases = 0;

  std::size_t total() const {
    std::size_t t = 0;
    for (auto b : bins) t += b;
    return t;
  }
};

RankHistogram ranking_distribution(const eval::Scorer& scorer,
                                   const std::vector<UserRow>& users,
                                   const data::ItemConditionMatrix& G,
                                   std::size_t max_rank, unsigned threads);

// Fraction of top-k slots holding condition-satisfying items, over all
// conditioned cases.
double topk_purity(const eval::Scorer& scorer,
                   const std::vector<UserRow>& users,
                   const data::ItemConditionMatrix& G, std::size_t k,
                   unsigned threads);

struct LatentTable {
  std::size_t d = 0;
  std::size_t s = 0;
  std::vector<std::string> category_names;
  struct Row {
    std::uint32_t user = 0;
    std::int64_t condition = -1;  // -1 = unconditioned
    std::vector<double> mu;
  };
  std::vector<Row> rows;
};

// One row per (user, condition) for every category plus unconditioned,
// using the latent mean (no sampling, no dropout).
LatentTable export_latents(const model::Params& params,
                           const std::vector<UserRow>& users,
                           const data::ItemConditionMatrix& G);

struct PcaResult {
  nd::Matrix components;                    // q x d, orthonormal rows
  std::vector<double> explained_variances;  // non-increasing
  std::vector<double> mean;                 // d
  nd::Matrix projections;                   // rows x q
  std::size_t requested = 0;  // may exceed components.rows on rank deficiency
};

// Deterministic PCA: center, form the sample covariance, extract the top q
// eigenpairs by power iteration with projection deflation (fixed start
// vectors, tolerance 1e-10). Sign convention: each axis's
// largest-magnitude entry is positive. Rank-deficient inputs yield fewer
// components.
PcaResult pca(const LatentTable& table, std::size_t q);
PcaResult pca_matrix(const nd::Matrix& rows_by_dims, std::size_t q);

struct ComponentReport {
  std::size_t comp_x = 0;  // 0-based component indices
  std::size_t comp_y = 0;
  struct Entry {
    std::int64_t condition = -1;
    std::string label;
    double x = 0.0;
    double y = 0.0;
    std::size_t count = 0;
  };
  std::vector<Entry> entries;  // one per category plus unconditioned
};

std::vector<ComponentReport> component_report(
    const PcaResult& pca_result, const LatentTable& table,
    const std::vector<std::pair<std::size_t, std::size_t>>& pairs);

// Rows of `table` with the given category label removed (the paired
// `projections` rows, when supplied, are filtered in lockstep so reports on
// a pre-computed basis stay aligned).
LatentTable drop_category(const LatentTable& table, const std::string& label,
                          const nd::Matrix* projections_in = nullptr,
                          nd::Matrix* projections_out = nullptr);

// Mean inter-category centroid distance over mean intra-category dispersion
// in the raw latent space; > 1 means conditions land in separated regions.
double latent_separation_ratio(const LatentTable& table);

// Plot-ready delimited text artifacts.
std::string histogram_to_text(const RankHistogram& hist);
std::string latents_to_text(const LatentTable& table);
std::string pca_to_text(const PcaResult& result);
std::string component_report_to_text(const std::vector<ComponentReport>& reports);

}  // namespace cvae::analyze
