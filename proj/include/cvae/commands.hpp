#pragma once

// Subcommand implementations behind the CLI binary. They are plain functions
// so the test suites can drive the full pipeline in-process.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cvae/config.hpp"
#include "cvae/fixture.hpp"

namespace cvae::cli {

struct TrainOptions {
  std::string phase = "both";  // "1", "2", or "both"
  std::optional<double> beta_cap;
  std::optional<std::size_t> max_epochs;
  bool resume = false;
};

struct EvaluateOptions {
  std::string checkpoint;  // default: <artifact_dir>/best.ckpt
  std::string protocol = "total";
  std::string baseline_checkpoint;  // s = 0 model for filtered-baseline rows
  bool per_case = false;
};

struct AnalyzeOptions {
  std::string checkpoint;
  std::string which = "all";  // ranking | purity | latent | pca | all
  std::string drop_category;  // exclude one category from the pca report
  bool recompute = true;      // recompute pca after the drop (vs reproject)
};

struct RecommendOptions {
  std::string checkpoint;
  std::string history_path;  // one external item id per line
  std::optional<std::string> condition;
  std::size_t n = 10;
};

int cmd_preprocess(const RunConfig& config);
int cmd_train(const RunConfig& config, const TrainOptions& options);
int cmd_evaluate(const RunConfig& config, const EvaluateOptions& options);
int cmd_analyze(const RunConfig& config, const AnalyzeOptions& options);
int cmd_recommend(const RunConfig& config, const RecommendOptions& options);
int cmd_fixture(const RunConfig& config, const fixture::FixtureSpec& spec,
                const std::string& out_dir);

// Applies the configured SIMD backend selection (auto keeps CPU detection).
void apply_simd_choice(const std::string& choice);

}  // namespace cvae::cli
