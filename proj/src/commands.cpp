#include "cvae/commands.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include "cvae/analyze.hpp"
#include "cvae/data.hpp"
#include "cvae/eval.hpp"
#include "cvae/io_util.hpp"
#include "cvae/kernels.hpp"
#include "cvae/model.hpp"
#include "cvae/train.hpp"

namespace cvae::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

class Timer {
 public:
  Timer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

constexpr const char* kVersion = "0.1.0";

// One run manifest per artifact directory, keyed by command; every artifact
// a command produces lands under this directory and is listed here.
void update_run_manifest(const RunConfig& config, const std::string& command,
                         const std::vector<std::string>& artifacts,
                         const std::vector<std::pair<std::string, std::string>>&
                             fingerprints,
                         double seconds) {
  const std::string path = join(config.artifact_dir, "run_manifest.json");
  json manifest;
  if (fs::exists(path)) {
    try {
      manifest = json::parse(io::read_file(path));
    } catch (...) {
      manifest = json::object();
    }
  }
  manifest["version"] = kVersion;
  json entry;
  entry["seed"] = config.seed;
  entry["config"] = config_to_json(config);
  json fp = json::object();
  for (const auto& [name, hex] : fingerprints) fp[name] = hex;
  entry["input_fingerprints"] = fp;
  entry["artifacts"] = artifacts;
  entry["wall_time_s"] = seconds;
  manifest[command] = entry;
  io::write_file(path, manifest.dump(2) + "\n");
}

unsigned effective_threads(const RunConfig& config) {
  return config.threads == 0 ? 1 : config.threads;
}

void check_checkpoint_dims(const model::Dims& have, const data::Dataset& ds) {
  if (have.m != ds.interactions.m)
    throw std::runtime_error(
        "checkpoint item count does not match the split (checkpoint m=" +
        std::to_string(have.m) + ", split m=" +
        std::to_string(ds.interactions.m) + ")");
  if (have.s != 0 && have.s != ds.conditions.s)
    throw std::runtime_error(
        "checkpoint category count does not match the split (checkpoint s=" +
        std::to_string(have.s) + ", split s=" +
        std::to_string(ds.conditions.s) + ")");
}

// Training examples for the configured model flavor: the unconditioned
// baseline trains on the unconditioned examples only.
std::vector<data::TrainingExample> effective_examples(
    const RunConfig& config, const data::Dataset& ds) {
  if (config.conditioned) return ds.examples;
  std::vector<data::TrainingExample> out;
  for (const auto& ex : ds.examples)
    if (!ex.condition) out.push_back(ex);
  return out;
}

}  // namespace

void apply_simd_choice(const std::string& choice) {
  if (choice == "auto") return;
  if (choice == "scalar") {
    kernels::select(kernels::Isa::Scalar);
    return;
  }
  if (choice == "avx2") {
    kernels::select(kernels::Isa::Avx2);
    return;
  }
  throw std::runtime_error("unknown simd choice: " + choice);
}

int cmd_preprocess(const RunConfig& config) {
  Timer timer;
  apply_simd_choice(config.simd);
  if (!fs::exists(config.ratings_path))
    throw std::runtime_error("ratings file not found: " + config.ratings_path);
  if (!fs::exists(config.categories_path))
    throw std::runtime_error("category file not found: " +
                             config.categories_path);

  io::DirLock lock(config.artifact_dir);
  const auto ratings = data::load_ratings(config.ratings_path,
                                          config.rating_threshold,
                                          config.delimiter);
  auto matrix = data::filter_interactions(ratings, config.min_user_interactions,
                                          config.min_item_interactions);
  auto conditions = data::load_item_conditions(
      config.categories_path, matrix, config.drop_categories, config.delimiter);
  if (conditions.unresolved_items > 0)
    std::cerr << "warning: " << conditions.unresolved_items
              << " category rows referenced unknown items and were skipped\n";

  const auto spec = config.split_spec();
  auto split = data::split_heldout(matrix, spec);
  auto examples =
      data::expand_conditions(matrix, conditions, split.train_users);

  data::Dataset ds;
  ds.interactions = std::move(matrix);
  ds.conditions = std::move(conditions);
  ds.split = std::move(split);
  ds.examples = std::move(examples);
  ds.seed = config.seed;

  const std::vector<std::pair<std::string, std::string>> fingerprints = {
      {"ratings",
       io::fingerprint_hex(io::fnv1a64_file(config.ratings_path))},
      {"categories",
       io::fingerprint_hex(io::fnv1a64_file(config.categories_path))},
  };
  data::write_split_dir(config.split_dir(), ds, spec, config.rating_threshold,
                        fingerprints);

  std::cout << "preprocess: n=" << ds.interactions.n
            << " m=" << ds.interactions.m << " s=" << ds.conditions.s
            << " interactions=" << ds.interactions.interaction_count()
            << " train_users=" << ds.split.train_users.size()
            << " val_users=" << ds.split.val_users.size()
            << " test_users=" << ds.split.test_users.size()
            << " training_examples=" << ds.examples.size() << "\n";
  update_run_manifest(config, "preprocess", {config.split_dir()}, fingerprints,
                      timer.seconds());
  return 0;
}

namespace {

struct PhaseFiles {
  std::string log_path;
  std::string trace_path;
  std::string last_path;
  std::string best_path;
};

PhaseFiles phase_files(const RunConfig& config, const std::string& phase) {
  PhaseFiles f;
  f.log_path = join(config.artifact_dir, "training_log.jsonl");
  f.trace_path = join(config.artifact_dir, "beta_trace_" + phase + ".csv");
  f.last_path = join(config.artifact_dir, "last.ckpt");
  f.best_path = join(config.artifact_dir, phase + "_best.ckpt");
  return f;
}

void append_line(const std::string& path, const std::string& line) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("cannot append to " + path);
  out << line << "\n";
}

// Runs (or resumes) one phase, wiring epoch logs, the beta trace, and last /
// best checkpoints to disk.
train::PhaseResult run_phase_to_disk(const RunConfig& config,
                                     const data::Dataset& ds,
                                     const train::TrainConfig& tc,
                                     double phase_cap,
                                     const std::string& phase,
                                     const train::ResumePoint* resume) {
  const PhaseFiles files = phase_files(config, phase);
  const std::uint64_t start_step =
      resume ? resume->snapshot.global_step : 0;
  if (!resume) {
    io::write_file(files.trace_path, "step,beta\n");
  }

  train::PhaseHooks hooks;
  hooks.validate = train::make_validation(ds, tc, effective_threads(config));
  hooks.on_report = [&](const train::EpochReport& r) {
    json line;
    line["phase"] = phase;
    line["epoch"] = r.epoch;
    line["mean_train_loss"] = r.mean_train_loss;
    line["mean_nll"] = r.mean_nll;
    line["mean_kl"] = r.mean_kl;
    line["current_beta"] = r.current_beta;
    line["val_ndcg100"] = r.val_ndcg100;
    line["wall_time_s"] = r.wall_time_s;
    append_line(files.log_path, line.dump());
    std::cout << phase << " epoch " << r.epoch << ": loss "
              << r.mean_train_loss << " (nll " << r.mean_nll << ", kl "
              << r.mean_kl << ", beta " << r.current_beta << ") val-ndcg@100 "
              << r.val_ndcg100 << "\n";
  };
  hooks.on_epoch_end = [&](const model::Params& params,
                           const std::vector<nd::AdamState>& adam,
                           const train::TrainerSnapshot& snap) {
    model::Checkpoint ckpt;
    ckpt.params = params;
    ckpt.adam = adam;
    ckpt.extra = json::object();
    ckpt.extra["input_order"] = model::input_order_name(tc.input_order);
    ckpt.extra["trainer"] = snap.to_json();
    ckpt.beta = snap.best_beta;
    ckpt.epoch = snap.next_epoch - 1;
    ckpt.seed = config.seed;
    model::save_checkpoint(files.last_path, ckpt);
  };
  hooks.on_best = [&](const model::Params& params, double beta,
                      std::size_t epoch) {
    model::Checkpoint best;
    best.params = params;
    best.extra = json::object();
    best.extra["phase"] = phase;
    best.extra["input_order"] = model::input_order_name(tc.input_order);
    best.beta = beta;
    best.epoch = epoch;
    best.seed = config.seed;
    model::save_checkpoint(files.best_path, best);
  };

  auto result = train::run_phase(ds, tc, phase_cap, phase, hooks, resume);

  std::ostringstream trace;
  char buf[64];
  for (std::size_t i = 0; i < result.beta_trace.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%llu,%.17g",
                  static_cast<unsigned long long>(start_step + i + 1),
                  result.beta_trace[i]);
    trace << buf << "\n";
  }
  {
    std::ofstream out(files.trace_path, std::ios::app);
    out << trace.str();
  }
  if (result.aborted_nonfinite)
    std::cerr << "error: " << result.abort_message
              << " (best checkpoint so far kept at " << files.best_path
              << ")\n";
  return result;
}

std::optional<train::ResumePoint> load_resume(const RunConfig& config,
                                              const data::Dataset& ds) {
  const std::string last_path = join(config.artifact_dir, "last.ckpt");
  if (!fs::exists(last_path)) return std::nullopt;
  auto ckpt = model::load_checkpoint(last_path);
  check_checkpoint_dims(ckpt.params.dims, ds);
  if (ckpt.adam.empty())
    throw std::runtime_error(
        "last.ckpt carries no optimizer state; cannot resume");
  train::ResumePoint rp;
  rp.snapshot = train::TrainerSnapshot::from_json(ckpt.extra.at("trainer"));
  rp.params = std::move(ckpt.params);
  rp.adam = std::move(ckpt.adam);
  const std::string best_path =
      join(config.artifact_dir, rp.snapshot.phase + "_best.ckpt");
  if (fs::exists(best_path))
    rp.best_params = model::load_checkpoint(best_path).params;
  return rp;
}

}  // namespace

int cmd_train(const RunConfig& config, const TrainOptions& options) {
  Timer timer;
  apply_simd_choice(config.simd);
  io::DirLock lock(config.artifact_dir);
  const auto ds_full = data::read_split_dir(config.split_dir());

  data::Dataset ds = ds_full;
  ds.examples = effective_examples(config, ds_full);
  if (ds.examples.empty())
    throw std::runtime_error("train: no training examples for this model");

  train::TrainConfig tc = config.train_config();
  if (options.max_epochs) tc.max_epochs = *options.max_epochs;

  std::optional<train::ResumePoint> resume;
  if (options.resume) {
    resume = load_resume(config, ds);
    if (!resume)
      std::cerr << "warning: --resume requested but no last.ckpt found; "
                   "starting fresh\n";
  }
  if (!options.resume) {
    // Fresh run: truncate the epoch log.
    io::write_file(join(config.artifact_dir, "training_log.jsonl"), "");
  }

  const std::string final_phase = options.phase == "1" ? "phase1" : "phase2";
  json train_manifest;
  const std::string manifest_path =
      join(config.artifact_dir, "train_manifest.json");
  if (fs::exists(manifest_path)) {
    try {
      train_manifest = json::parse(io::read_file(manifest_path));
    } catch (...) {
      train_manifest = json::object();
    }
  }

  double selected_beta = 0.0;
  bool aborted = false;
  auto record_phase = [&](const std::string& phase,
                          const train::PhaseResult& r) {
    json e;
    e["best_epoch"] = r.best_epoch;
    e["best_val_ndcg100"] = r.best_score;
    e["best_beta"] = r.best_beta;
    e["epochs_run"] = r.epochs_run;
    e["aborted"] = r.aborted_nonfinite;
    train_manifest[phase] = e;
  };

  if (options.phase == "1" || options.phase == "both") {
    const bool resuming_p1 = resume && resume->snapshot.phase == "phase1";
    const bool p2_in_progress = resume && resume->snapshot.phase == "phase2";
    if (!p2_in_progress) {
      const double cap = options.phase == "1" && options.beta_cap
                             ? *options.beta_cap
                             : 1.0;
      auto r1 = run_phase_to_disk(config, ds, tc, cap, "phase1",
                                  resuming_p1 ? &*resume : nullptr);
      aborted = r1.aborted_nonfinite;
      selected_beta = r1.best_beta;
      train_manifest["selected_beta"] = selected_beta;
      record_phase("phase1", r1);
      if (options.phase == "1" && !aborted) {
        fs::copy_file(join(config.artifact_dir, "phase1_best.ckpt"),
                      join(config.artifact_dir, "best.ckpt"),
                      fs::copy_options::overwrite_existing);
      }
      resume.reset();  // phase 2 always starts fresh parameters
    }
  }

  if (!aborted && (options.phase == "2" || options.phase == "both")) {
    double cap = config.anneal_cap;
    if (train_manifest.contains("selected_beta"))
      cap = train_manifest["selected_beta"].get<double>();
    if (options.beta_cap) cap = *options.beta_cap;
    const bool resuming_p2 = resume && resume->snapshot.phase == "phase2";
    if (resuming_p2) cap = resume->snapshot.phase_cap;
    auto r2 = run_phase_to_disk(config, ds, tc, cap, "phase2",
                                resuming_p2 ? &*resume : nullptr);
    aborted = r2.aborted_nonfinite;
    train_manifest["phase2_cap"] = cap;
    record_phase("phase2", r2);
    if (!aborted)
      fs::copy_file(join(config.artifact_dir, "phase2_best.ckpt"),
                    join(config.artifact_dir, "best.ckpt"),
                    fs::copy_options::overwrite_existing);
  }

  io::write_file(manifest_path, train_manifest.dump(2) + "\n");
  update_run_manifest(
      config, "train",
      {join(config.artifact_dir, "best.ckpt"),
       join(config.artifact_dir, "training_log.jsonl")},
      {{"split_manifest", io::fingerprint_hex(io::fnv1a64_file(
                              join(config.split_dir(), "manifest.json")))}},
      timer.seconds());
  if (aborted) return 1;
  std::cout << "train: done; best checkpoint at "
            << join(config.artifact_dir, "best.ckpt") << "\n";
  return 0;
}

int cmd_evaluate(const RunConfig& config, const EvaluateOptions& options) {
  Timer timer;
  apply_simd_choice(config.simd);
  const auto ds = data::read_split_dir(config.split_dir());
  const std::string ckpt_path = options.checkpoint.empty()
                                    ? join(config.artifact_dir, "best.ckpt")
                                    : options.checkpoint;
  const auto ckpt = model::load_checkpoint(ckpt_path);
  check_checkpoint_dims(ckpt.params.dims, ds);

  eval::EvalProtocol protocol;
  protocol.kind = eval::parse_protocol(options.protocol);
  protocol.ks_recall = config.ks_recall;
  protocol.ks_ndcg = config.ks_ndcg;

  std::vector<std::string> artifacts;
  const auto run_one = [&](const model::Params& params, bool filtered,
                           const std::string& tag) {
    eval::ModelScorer scorer(params);
    const auto report =
        eval::evaluate(scorer, ds.split.test_users, ds.conditions, protocol,
                       filtered, options.per_case, effective_threads(config));
    const std::string base = "metrics_" + options.protocol + tag;
    const std::string json_path = join(config.artifact_dir, base + ".json");
    io::write_file(json_path, eval::report_to_json(report).dump(2) + "\n");
    const std::string text =
        eval::format_report(filtered ? "filtered-baseline" : "model", report);
    const std::string txt_path = join(config.artifact_dir, base + ".txt");
    io::write_file(txt_path, text);
    std::cout << text;
    artifacts.push_back(json_path);
    artifacts.push_back(txt_path);
    if (options.per_case) {
      std::ostringstream ss;
      ss << "user,condition";
      if (!report.per_case.empty())
        for (const auto& [name, _] : report.per_case.front().values)
          ss << "," << name;
      ss << "\n";
      char buf[32];
      for (const auto& rec : report.per_case) {
        ss << rec.user << ","
           << (rec.condition ? static_cast<std::int64_t>(*rec.condition) : -1);
        for (const auto& [_, v] : rec.values) {
          std::snprintf(buf, sizeof(buf), "%.17g", v);
          ss << "," << buf;
        }
        ss << "\n";
      }
      const std::string pc_path =
          join(config.artifact_dir, "per_case_" + options.protocol + tag +
                                        ".csv");
      io::write_file(pc_path, ss.str());
      artifacts.push_back(pc_path);
    }
  };

  run_one(ckpt.params, /*filtered=*/false, "");
  if (!options.baseline_checkpoint.empty()) {
    const auto baseline = model::load_checkpoint(options.baseline_checkpoint);
    if (baseline.params.dims.s != 0)
      throw std::runtime_error(
          "baseline checkpoint must be an unconditioned (s = 0) model");
    check_checkpoint_dims(baseline.params.dims, ds);
    run_one(baseline.params, /*filtered=*/true, "_baseline");
  }
  update_run_manifest(
      config, "evaluate", artifacts,
      {{"checkpoint", io::fingerprint_hex(io::fnv1a64_file(ckpt_path))}},
      timer.seconds());
  return 0;
}

int cmd_analyze(const RunConfig& config, const AnalyzeOptions& options) {
  Timer timer;
  apply_simd_choice(config.simd);
  const auto ds = data::read_split_dir(config.split_dir());
  const std::string ckpt_path = options.checkpoint.empty()
                                    ? join(config.artifact_dir, "best.ckpt")
                                    : options.checkpoint;
  const auto ckpt = model::load_checkpoint(ckpt_path);
  check_checkpoint_dims(ckpt.params.dims, ds);
  const std::string out_dir = join(config.artifact_dir, "analysis");
  fs::create_directories(out_dir);
  const unsigned threads = effective_threads(config);

  // Seeded sample from the training-user pool.
  std::vector<std::uint32_t> users = ds.split.train_users;
  if (users.size() > config.sample_users) {
    nd::RngStream rng(nd::RngStream::derive(config.seed, 0xA7A1));
    rng.shuffle(users);
    users.resize(config.sample_users);
    std::sort(users.begin(), users.end());
  }
  const auto rows = analyze::user_rows(ds.interactions, users);
  eval::ModelScorer scorer(ckpt.params);

  const bool all = options.which == "all";
  std::vector<std::string> artifacts;
  if (all || options.which == "ranking") {
    const auto hist = analyze::ranking_distribution(scorer, rows,
                                                    ds.conditions,
                                                    config.max_rank, threads);
    const std::string path = join(out_dir, "ranking_histogram.csv");
    io::write_file(path, analyze::histogram_to_text(hist));
    artifacts.push_back(path);
    std::cout << "ranking histogram over " << hist.n_cases << " cases -> "
              << path << "\n";
  }
  if (all || options.which == "purity") {
    const double purity = analyze::topk_purity(scorer, rows, ds.conditions,
                                               config.purity_k, threads);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f\n", purity);
    const std::string path = join(out_dir, "purity.txt");
    io::write_file(path, buf);
    artifacts.push_back(path);
    std::cout << purity << "\n";
  }
  if (all || options.which == "latent" || options.which == "pca") {
    const auto table =
        analyze::export_latents(ckpt.params, rows, ds.conditions);
    if (all || options.which == "latent") {
      const std::string path = join(out_dir, "latents.csv");
      io::write_file(path, analyze::latents_to_text(table));
      artifacts.push_back(path);
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.6f\n",
                    analyze::latent_separation_ratio(table));
      const std::string sep_path = join(out_dir, "separation.txt");
      io::write_file(sep_path, buf);
      artifacts.push_back(sep_path);
      std::cout << "latent table: " << table.rows.size() << " rows -> " << path
                << "; separation ratio " << buf;
    }
    if (all || options.which == "pca") {
      const std::size_t q =
          std::min(config.pca_components, ckpt.params.dims.d);
      // Optional category drop: either recompute the basis on the reduced
      // table (default) or keep the full-table basis and only reproject.
      analyze::LatentTable report_table = table;
      analyze::PcaResult result;
      if (!options.drop_category.empty() && options.recompute) {
        report_table = analyze::drop_category(table, options.drop_category);
        result = analyze::pca(report_table, q);
      } else if (!options.drop_category.empty()) {
        result = analyze::pca(table, q);
        nd::Matrix filtered;
        report_table = analyze::drop_category(table, options.drop_category,
                                              &result.projections, &filtered);
        result.projections = std::move(filtered);
      } else {
        result = analyze::pca(table, q);
      }
      if (result.components.rows < q)
        std::cerr << "warning: rank-deficient latents, returning "
                  << result.components.rows << " of " << q << " components\n";
      const std::string pca_path = join(out_dir, "pca.csv");
      io::write_file(pca_path, analyze::pca_to_text(result));
      artifacts.push_back(pca_path);
      std::vector<std::pair<std::size_t, std::size_t>> pairs;
      for (const auto& [a, b] : config.component_pairs) {
        if (a < 1 || b < 1 || a > result.components.rows ||
            b > result.components.rows) {
          std::cerr << "warning: component pair (" << a << "," << b
                    << ") out of range, skipped\n";
          continue;
        }
        pairs.emplace_back(a - 1, b - 1);
      }
      const auto reports =
          analyze::component_report(result, report_table, pairs);
      const std::string rep_path = join(out_dir, "component_report.csv");
      io::write_file(rep_path, analyze::component_report_to_text(reports));
      artifacts.push_back(rep_path);
      std::cout << "pca: " << result.components.rows << " components -> "
                << pca_path << "\n";
    }
  }
  if (artifacts.empty())
    throw std::runtime_error("analyze: unknown --which value '" +
                             options.which +
                             "' (expected ranking|purity|latent|pca|all)");
  update_run_manifest(config, "analyze", artifacts, {}, timer.seconds());
  return 0;
}

int cmd_recommend(const RunConfig& config, const RecommendOptions& options) {
  apply_simd_choice(config.simd);
  const auto ds = data::read_split_dir(config.split_dir());
  const std::string ckpt_path = options.checkpoint.empty()
                                    ? join(config.artifact_dir, "best.ckpt")
                                    : options.checkpoint;
  const auto ckpt = model::load_checkpoint(ckpt_path);
  check_checkpoint_dims(ckpt.params.dims, ds);

  std::vector<std::string> history;
  {
    std::ifstream in(options.history_path);
    if (!in)
      throw std::runtime_error("cannot open history file: " +
                               options.history_path);
    std::string line;
    while (std::getline(in, line)) {
      while (!line.empty() && (line.back() == '\r' || line.back() == ' '))
        line.pop_back();
      if (!line.empty()) history.push_back(line);
    }
  }

  std::size_t skipped = 0;
  const auto recs = eval::recommend(ckpt.params, ds.interactions,
                                    ds.conditions, history, options.condition,
                                    options.n, &skipped);
  if (skipped > 0)
    std::cerr << "warning: " << skipped
              << " history ids not found in the item index\n";
  for (const auto& r : recs) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", r.score);
    std::cout << r.item_id << "\t" << buf << "\n";
  }
  return 0;
}

int cmd_fixture(const RunConfig& config, const fixture::FixtureSpec& spec,
                const std::string& out_dir) {
  Timer timer;
  const std::string dir =
      out_dir.empty() ? join(config.artifact_dir, "fixture") : out_dir;
  const auto truth = fixture::generate(dir, spec);
  std::cout << "fixture: users=" << truth.n_users
            << " items=" << truth.n_items
            << " categories=" << truth.n_categories
            << " positives=" << truth.positive_interactions
            << " dropped=" << truth.dropped_interactions << " -> " << dir
            << "\n";
  update_run_manifest(config, "fixture",
                      {join(dir, "ratings.csv"), join(dir, "categories.csv")},
                      {}, timer.seconds());
  return 0;
}

}  // namespace cvae::cli
