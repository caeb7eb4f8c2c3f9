// cvae: preprocess -> train -> evaluate -> analyze -> recommend, driven by a
// JSON config file with flag overrides (flags win).

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "cvae/commands.hpp"
#include "cvae/config.hpp"
#include "cvae/fixture.hpp"

namespace {

struct GlobalFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  std::optional<std::string> artifact_dir;
  std::optional<std::string> simd;
  bool verbose = false;
};

cvae::cli::RunConfig resolve_config(const GlobalFlags& flags) {
  cvae::cli::RunConfig config;
  if (!flags.config_path.empty())
    config = cvae::cli::load_config(flags.config_path);
  if (const char* root = std::getenv("CVAE_ARTIFACT_ROOT"))
    config.artifact_dir = root;
  if (flags.seed) config.seed = *flags.seed;
  if (flags.threads) config.threads = *flags.threads;
  if (flags.artifact_dir) config.artifact_dir = *flags.artifact_dir;
  if (flags.simd) config.simd = *flags.simd;
  if (flags.verbose) config.verbose = true;
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conditioned VAE recommender pipeline"};
  app.require_subcommand(1);

  GlobalFlags flags;
  app.add_option("--config", flags.config_path, "JSON run configuration");
  app.add_option("--seed", flags.seed, "Override the run seed");
  app.add_option("--threads", flags.threads,
                 "Worker threads (0 = deterministic single-threaded)");
  app.add_option("--artifact-dir", flags.artifact_dir,
                 "Override the artifact directory");
  app.add_option("--simd", flags.simd, "Kernel backend: auto|scalar|avx2");
  app.add_flag("--verbose", flags.verbose, "Chatty logging");

  auto* preprocess =
      app.add_subcommand("preprocess", "Build the split directory");

  auto* train = app.add_subcommand("train", "Run the training protocol");
  cvae::cli::TrainOptions train_opts;
  train->add_option("--phase", train_opts.phase, "1, 2, or both")
      ->check(CLI::IsMember({"1", "2", "both"}));
  std::optional<double> beta_cap;
  train->add_option("--beta-cap", beta_cap, "Anneal cap override");
  std::optional<std::size_t> max_epochs;
  train->add_option("--max-epochs", max_epochs, "Epoch budget override");
  train->add_flag("--resume", train_opts.resume,
                  "Continue from the last epoch checkpoint");

  auto* evaluate = app.add_subcommand("evaluate", "Compute ranking metrics");
  cvae::cli::EvaluateOptions eval_opts;
  evaluate->add_option("--checkpoint", eval_opts.checkpoint,
                       "Model checkpoint (default <artifacts>/best.ckpt)");
  evaluate->add_option("--protocol", eval_opts.protocol,
                       "total|normal|conditioned")
      ->check(CLI::IsMember({"total", "normal", "conditioned"}));
  evaluate->add_option("--baseline-checkpoint", eval_opts.baseline_checkpoint,
                       "s=0 model evaluated with output filtering");
  evaluate->add_flag("--per-case", eval_opts.per_case,
                     "Dump per-case metric values");

  auto* analyze = app.add_subcommand("analyze", "Post-hoc analyses");
  cvae::cli::AnalyzeOptions analyze_opts;
  analyze->add_option("--checkpoint", analyze_opts.checkpoint,
                      "Model checkpoint (default <artifacts>/best.ckpt)");
  analyze->add_option("--which", analyze_opts.which,
                      "ranking|purity|latent|pca|all")
      ->check(CLI::IsMember({"ranking", "purity", "latent", "pca", "all"}));
  analyze->add_option("--drop-category", analyze_opts.drop_category,
                      "Exclude one category label from the pca report");
  bool no_recompute = false;
  analyze->add_flag("--no-recompute", no_recompute,
                    "Keep the full-table pca basis after --drop-category");

  auto* recommend = app.add_subcommand("recommend", "Top-N for a history");
  cvae::cli::RecommendOptions rec_opts;
  recommend->add_option("--checkpoint", rec_opts.checkpoint,
                        "Model checkpoint (default <artifacts>/best.ckpt)");
  recommend
      ->add_option("--history", rec_opts.history_path,
                   "File with one item id per line")
      ->required();
  std::string condition_label;
  recommend->add_option("--condition", condition_label,
                        "Category label (omitted = unconditioned)");
  recommend->add_option("-N,--top-n", rec_opts.n, "List length");

  auto* fixture =
      app.add_subcommand("fixture", "Generate the synthetic dataset");
  cvae::fixture::FixtureSpec fix_spec;
  std::string fixture_out;
  fixture->add_option("--users", fix_spec.n_users, "User count");
  fixture->add_option("--items", fix_spec.n_items, "Item count");
  fixture->add_option("--categories", fix_spec.n_categories, "Category count");
  fixture->add_option("--out", fixture_out,
                      "Output directory (default <artifacts>/fixture)");

  CLI11_PARSE(app, argc, argv);

  try {
    cvae::cli::RunConfig config = resolve_config(flags);
    if (preprocess->parsed()) return cvae::cli::cmd_preprocess(config);
    if (train->parsed()) {
      train_opts.beta_cap = beta_cap;
      train_opts.max_epochs = max_epochs;
      return cvae::cli::cmd_train(config, train_opts);
    }
    if (evaluate->parsed()) return cvae::cli::cmd_evaluate(config, eval_opts);
    if (analyze->parsed()) {
      analyze_opts.recompute = !no_recompute;
      return cvae::cli::cmd_analyze(config, analyze_opts);
    }
    if (recommend->parsed()) {
      if (!condition_label.empty()) rec_opts.condition = condition_label;
      return cvae::cli::cmd_recommend(config, rec_opts);
    }
    if (fixture->parsed()) {
      fix_spec.seed = config.seed;
      return cvae::cli::cmd_fixture(config, fix_spec, fixture_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
