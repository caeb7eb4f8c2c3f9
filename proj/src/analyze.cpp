#include "cvae/analyze.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "cvae/kernels.hpp"
#include "cvae/ndmath.hpp"
#include "cvae/rng.hpp"

namespace cvae::analyze {
namespace {

struct ConditionedCase {
  std::size_t user_slot;  // index into the UserRow list
  std::uint32_t condition;
};

// (user, category) pairs satisfiable by the user's input row.
std::vector<ConditionedCase> conditioned_cases(
    const std::vector<UserRow>& users, const data::ItemConditionMatrix& G) {
  std::vector<ConditionedCase> cases;
  std::vector<char> covered(G.s, 0);
  for (std::size_t ui = 0; ui < users.size(); ++ui) {
    std::fill(covered.begin(), covered.end(), 0);
    for (auto item : users[ui].row)
      for (auto cat : G.rows[item]) covered[cat] = 1;
    for (std::uint32_t j = 0; j < G.s; ++j)
      if (covered[j]) cases.push_back({ui, j});
  }
  return cases;
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
  for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

}  // namespace

std::vector<UserRow> user_rows(const data::InteractionMatrix& interactions,
                               const std::vector<std::uint32_t>& users) {
  std::vector<UserRow> out;
  out.reserve(users.size());
  for (auto u : users) out.push_back({u, interactions.rows[u]});
  return out;
}

RankHistogram ranking_distribution(const eval::Scorer& scorer,
                                   const std::vector<UserRow>& users,
                                   const data::ItemConditionMatrix& G,
                                   std::size_t max_rank, unsigned threads) {
  const auto cases = conditioned_cases(users, G);
  RankHistogram hist;
  hist.max_rank = max_rank;
  hist.n_cases = cases.size();
  hist.bins.assign(max_rank, 0);

  std::vector<std::vector<char>> marks(cases.size());
  run_chunked(cases.size(), threads, [&](std::size_t ci) {
    const auto& c = cases[ci];
    const auto& ur = users[c.user_slot];
    const auto ranked = eval::rank_cvae(scorer, ur.user, ur.row, c.condition);
    auto& mark = marks[ci];
    mark.assign(max_rank, 0);
    const std::size_t top = std::min(max_rank, ranked.item_order.size());
    for (std::size_t r = 0; r < top; ++r)
      if (G.item_in_category(ranked.item_order[r], c.condition)) mark[r] = 1;
  });
  for (const auto& mark : marks)
    for (std::size_t r = 0; r < mark.size(); ++r)
      if (mark[r]) ++hist.bins[r];
  return hist;
}

double topk_purity(const eval::Scorer& scorer,
                   const std::vector<UserRow>& users,
                   const data::ItemConditionMatrix& G, std::size_t k,
                   unsigned threads) {
  const auto cases = conditioned_cases(users, G);
  if (cases.empty()) throw std::runtime_error("topk_purity: no cases");
  std::vector<std::size_t> hits(cases.size(), 0);
  std::vector<std::size_t> slots(cases.size(), 0);
  run_chunked(cases.size(), threads, [&](std::size_t ci) {
    const auto& c = cases[ci];
    const auto& ur = users[c.user_slot];
    const auto ranked = eval::rank_cvae(scorer, ur.user, ur.row, c.condition);
    const std::size_t top = std::min(k, ranked.item_order.size());
    slots[ci] = top;
    for (std::size_t r = 0; r < top; ++r)
      if (G.item_in_category(ranked.item_order[r], c.condition)) ++hits[ci];
  });
  std::size_t total_hits = 0, total_slots = 0;
  for (std::size_t ci = 0; ci < cases.size(); ++ci) {
    total_hits += hits[ci];
    total_slots += slots[ci];
  }
  if (total_slots == 0) throw std::runtime_error("topk_purity: empty rankings");
  return static_cast<double>(total_hits) / static_cast<double>(total_slots);
}

LatentTable export_latents(const model::Params& params,
                           const std::vector<UserRow>& users,
                           const data::ItemConditionMatrix& G) {
  LatentTable table;
  table.d = params.dims.d;
  table.s = G.s;
  table.category_names = G.category_names;

  // Row order: per user, unconditioned first, then every category ascending.
  std::vector<std::span<const std::uint32_t>> rows;
  std::vector<std::optional<std::uint32_t>> conds;
  for (const auto& ur : users) {
    rows.push_back(ur.row);
    conds.push_back(std::nullopt);
    for (std::uint32_t j = 0; j < G.s; ++j) {
      rows.push_back(ur.row);
      conds.push_back(j);
    }
  }

  const std::size_t chunk = 512;
  for (std::size_t lo = 0; lo < rows.size(); lo += chunk) {
    const std::size_t hi = std::min(lo + chunk, rows.size());
    std::vector<std::span<const std::uint32_t>> part_rows(
        rows.begin() + lo, rows.begin() + hi);
    std::vector<std::optional<std::uint32_t>> part_conds(
        conds.begin() + lo, conds.begin() + hi);
    const nd::Matrix mu = model::batch_encode_mu(part_rows, part_conds, params);
    for (std::size_t e = 0; e < mu.rows; ++e) {
      LatentTable::Row row;
      const std::size_t global = lo + e;
      row.user = users[global / (G.s + 1)].user;
      const std::size_t slot = global % (G.s + 1);
      row.condition = slot == 0 ? -1 : static_cast<std::int64_t>(slot - 1);
      row.mu.assign(mu.row(e), mu.row(e) + mu.cols);
      table.rows.push_back(std::move(row));
    }
  }
  return table;
}

PcaResult pca_matrix(const nd::Matrix& x, std::size_t q) {
  const std::size_t n = x.rows;
  const std::size_t d = x.cols;
  if (n < 2 || q == 0 || q > d)
    throw std::invalid_argument("pca: need >= 2 rows and 0 < q <= dims");

  PcaResult res;
  res.requested = q;
  res.mean.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    kernels::active().add(x.row(i), res.mean.data(), d);
  kernels::active().scale(1.0 / static_cast<double>(n), res.mean.data(), d);

  nd::Matrix centered(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      centered.at(i, j) = x.at(i, j) - res.mean[j];

  // Sample covariance (n-1 normalization).
  nd::Matrix cov = nd::matmul_tn(centered, centered);
  kernels::active().scale(1.0 / static_cast<double>(n - 1),
                          cov.data.data(), cov.size());

  constexpr double kTol = 1e-10;
  constexpr std::size_t kMaxIter = 100000;
  // Fixed-seed start vectors make the whole procedure deterministic.
  nd::RngStream start_rng(0x9ca0ffee);

  std::vector<std::vector<double>> axes;
  std::vector<double> lambdas;
  for (std::size_t comp = 0; comp < q; ++comp) {
    std::vector<double> v(d);
    for (auto& e : v) e = start_rng.normal();
    auto deflate = [&](std::vector<double>& w) {
      for (const auto& axis : axes) {
        const double proj = kernels::active().dot(w.data(), axis.data(), d);
        kernels::active().axpy(-proj, axis.data(), w.data(), d);
      }
    };
    deflate(v);
    nd::l2_normalize(v.data(), d);

    double lambda = 0.0;
    std::vector<double> w(d);
    std::vector<double> residual(d);
    for (std::size_t it = 0; it < kMaxIter; ++it) {
      // w = cov * v (v treated as a d x 1 column).
      kernels::active().matmul(cov.data.data(), v.data(), w.data(), d, d, 1);
      deflate(w);
      const double norm =
          std::sqrt(kernels::active().dot(w.data(), w.data(), d));
      if (norm < kTol) {
        lambda = 0.0;
        break;
      }
      kernels::active().scale(1.0 / norm, w.data(), d);
      v = w;
      // Residual ||cov v - lambda v|| bounds the eigenpair error directly
      // (alignment change per step does not, when eigenvalue gaps are small).
      kernels::active().matmul(cov.data.data(), v.data(), w.data(), d, d, 1);
      deflate(w);
      lambda = kernels::active().dot(v.data(), w.data(), d);
      for (std::size_t j = 0; j < d; ++j)
        residual[j] = w[j] - lambda * v[j];
      const double rnorm =
          std::sqrt(kernels::active().dot(residual.data(), residual.data(), d));
      if (rnorm <= kTol * std::max(1.0, std::fabs(lambda))) break;
    }
    if (lambda <= kTol) break;  // rank deficient: stop with fewer components
    // Sign convention: largest-magnitude entry positive.
    std::size_t arg = 0;
    for (std::size_t j = 1; j < d; ++j)
      if (std::fabs(v[j]) > std::fabs(v[arg])) arg = j;
    if (v[arg] < 0.0) kernels::active().scale(-1.0, v.data(), d);
    axes.push_back(v);
    lambdas.push_back(lambda);
  }

  res.components = nd::Matrix(axes.size(), d);
  for (std::size_t c = 0; c < axes.size(); ++c)
    std::copy(axes[c].begin(), axes[c].end(), res.components.row(c));
  res.explained_variances = lambdas;
  res.projections = nd::matmul_nt(centered, res.components);
  return res;
}

PcaResult pca(const LatentTable& table, std::size_t q) {
  nd::Matrix x(table.rows.size(), table.d);
  for (std::size_t i = 0; i < table.rows.size(); ++i)
    std::copy(table.rows[i].mu.begin(), table.rows[i].mu.end(), x.row(i));
  return pca_matrix(x, q);
}

std::vector<ComponentReport> component_report(
    const PcaResult& pca_result, const LatentTable& table,
    const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  const std::size_t q = pca_result.components.rows;
  std::vector<ComponentReport> reports;
  for (const auto& [a, b] : pairs) {
    if (a >= q || b >= q)
      throw std::invalid_argument("component_report: component out of range");
    ComponentReport rep;
    rep.comp_x = a;
    rep.comp_y = b;
    // Centroids per condition (-1 .. s-1) over projected rows.
    std::vector<double> sx(table.s + 1, 0.0), sy(table.s + 1, 0.0);
    std::vector<std::size_t> cnt(table.s + 1, 0);
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
      const std::size_t slot =
          static_cast<std::size_t>(table.rows[i].condition + 1);
      sx[slot] += pca_result.projections.at(i, a);
      sy[slot] += pca_result.projections.at(i, b);
      ++cnt[slot];
    }
    for (std::size_t slot = 0; slot < table.s + 1; ++slot) {
      if (cnt[slot] == 0) continue;
      ComponentReport::Entry e;
      e.condition = static_cast<std::int64_t>(slot) - 1;
      e.label = slot == 0 ? "(unconditioned)" : table.category_names[slot - 1];
      e.x = sx[slot] / static_cast<double>(cnt[slot]);
      e.y = sy[slot] / static_cast<double>(cnt[slot]);
      e.count = cnt[slot];
      rep.entries.push_back(std::move(e));
    }
    reports.push_back(std::move(rep));
  }
  return reports;
}

LatentTable drop_category(const LatentTable& table, const std::string& label,
                          const nd::Matrix* projections_in,
                          nd::Matrix* projections_out) {
  std::int64_t drop = -2;
  for (std::size_t j = 0; j < table.category_names.size(); ++j)
    if (table.category_names[j] == label) drop = static_cast<std::int64_t>(j);
  if (drop == -2)
    throw std::invalid_argument("drop_category: unknown label '" + label +
                                "'");
  LatentTable out;
  out.d = table.d;
  out.s = table.s;
  out.category_names = table.category_names;
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    if (table.rows[i].condition == drop) continue;
    out.rows.push_back(table.rows[i]);
    kept.push_back(i);
  }
  if (projections_in != nullptr && projections_out != nullptr) {
    *projections_out = nd::Matrix(kept.size(), projections_in->cols);
    for (std::size_t r = 0; r < kept.size(); ++r)
      std::copy(projections_in->row(kept[r]),
                projections_in->row(kept[r]) + projections_in->cols,
                projections_out->row(r));
  }
  return out;
}

double latent_separation_ratio(const LatentTable& table) {
  if (table.s < 2)
    throw std::invalid_argument("latent_separation_ratio: need >= 2 categories");
  const std::size_t d = table.d;
  std::vector<std::vector<double>> centroid(table.s,
                                            std::vector<double>(d, 0.0));
  std::vector<std::size_t> count(table.s, 0);
  for (const auto& row : table.rows) {
    if (row.condition < 0) continue;
    const auto c = static_cast<std::size_t>(row.condition);
    kernels::active().add(row.mu.data(), centroid[c].data(), d);
    ++count[c];
  }
  for (std::size_t c = 0; c < table.s; ++c) {
    if (count[c] == 0)
      throw std::runtime_error("latent_separation_ratio: empty category");
    kernels::active().scale(1.0 / static_cast<double>(count[c]),
                            centroid[c].data(), d);
  }

  auto dist = [&](const double* a, const double* b) {
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = a[j] - b[j];
      sq += diff * diff;
    }
    return std::sqrt(sq);
  };

  double inter = 0.0;
  std::size_t inter_n = 0;
  for (std::size_t a = 0; a < table.s; ++a)
    for (std::size_t b = a + 1; b < table.s; ++b) {
      inter += dist(centroid[a].data(), centroid[b].data());
      ++inter_n;
    }
  inter /= static_cast<double>(inter_n);

  double intra = 0.0;
  std::size_t intra_n = 0;
  for (const auto& row : table.rows) {
    if (row.condition < 0) continue;
    const auto c = static_cast<std::size_t>(row.condition);
    intra += dist(row.mu.data(), centroid[c].data());
    ++intra_n;
  }
  intra /= static_cast<double>(intra_n);
  if (intra == 0.0) return std::numeric_limits<double>::infinity();
  return inter / intra;
}

std::string histogram_to_text(const RankHistogram& hist) {
  std::ostringstream ss;
  ss << "# rank position histogram of target-category items\n";
  ss << "# cases=" << hist.n_cases << " max_rank=" << hist.max_rank << "\n";
  ss << "rank,count\n";
  for (std::size_t r = 0; r < hist.bins.size(); ++r)
    ss << (r + 1) << "," << hist.bins[r] << "\n";
  return ss.str();
}

std::string latents_to_text(const LatentTable& table) {
  std::ostringstream ss;
  ss << "# latent means; condition -1 = unconditioned\n";
  ss << "user,condition";
  for (std::size_t j = 0; j < table.d; ++j) ss << ",mu" << j;
  ss << "\n";
  char buf[32];
  for (const auto& row : table.rows) {
    ss << row.user << "," << row.condition;
    for (double v : row.mu) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      ss << "," << buf;
    }
    ss << "\n";
  }
  return ss.str();
}

std::string pca_to_text(const PcaResult& result) {
  std::ostringstream ss;
  char buf[32];
  ss << "# pca: components (rows) over latent dims, then explained variances\n";
  ss << "component,";
  for (std::size_t j = 0; j < result.components.cols; ++j)
    ss << "axis" << j << (j + 1 < result.components.cols ? "," : "\n");
  for (std::size_t c = 0; c < result.components.rows; ++c) {
    ss << c;
    for (std::size_t j = 0; j < result.components.cols; ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", result.components.at(c, j));
      ss << "," << buf;
    }
    ss << "\n";
  }
  ss << "explained_variance";
  for (double v : result.explained_variances) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    ss << "," << buf;
  }
  ss << "\n";
  return ss.str();
}

std::string component_report_to_text(
    const std::vector<ComponentReport>& reports) {
  std::ostringstream ss;
  char buf[32];
  ss << "# per-category centroids on principal component pairs (0-based)\n";
  ss << "comp_x,comp_y,condition,label,x,y,count\n";
  for (const auto& rep : reports) {
    for (const auto& e : rep.entries) {
      ss << rep.comp_x << "," << rep.comp_y << "," << e.condition << ","
         << e.label << ",";
      std::snprintf(buf, sizeof(buf), "%.17g", e.x);
      ss << buf << ",";
      std::snprintf(buf, sizeof(buf), "%.17g", e.y);
      ss << buf << "," << e.count << "\n";
    }
  }
  return ss.str();
}

}  // namespace cvae::analyze
