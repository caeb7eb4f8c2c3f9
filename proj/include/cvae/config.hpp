#pragma once

// Run configuration: one JSON file drives the whole pipeline; command-line
// flags override individual fields. The schema is documented in the README.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cvae/data.hpp"
#include "cvae/train.hpp"

namespace cvae::cli {

struct RunConfig {
  std::uint64_t seed = 13;
  unsigned threads = 0;  // 0 = deterministic single-threaded reference
  std::string artifact_dir = "artifacts";
  std::string simd = "auto";  // auto | scalar | avx2
  bool verbose = false;

  // data
  std::string ratings_path;
  std::string categories_path;
  char delimiter = ',';
  double rating_threshold = 3.0;
  std::vector<std::string> drop_categories;
  std::size_t min_user_interactions = 4;
  std::size_t min_item_interactions = 10;
  std::size_t n_heldout_val = 0;
  std::size_t n_heldout_test = 0;
  double foldin_fraction = 0.8;

  // model
  std::size_t hidden_dim = 600;
  std::size_t latent_dim = 200;
  bool conditioned = true;  // false trains the unconditioned (s = 0) baseline

  // train
  std::size_t batch_size = 500;
  std::size_t max_epochs = 100;
  double learning_rate = 0.001;
  double anneal_cap = 1.0;
  std::size_t anneal_total_steps = 0;
  std::size_t patience = 5;
  double dropout = 0.5;
  std::string input_order = "normalize_first";  // or dropout_first
  std::string validation_protocol = "conditioned";

  // eval
  std::vector<std::size_t> ks_recall = {20, 50};
  std::vector<std::size_t> ks_ndcg = {100};

  // analyze
  std::size_t sample_users = 2000;
  std::size_t max_rank = 100;
  std::size_t purity_k = 100;
  std::size_t pca_components = 5;
  // 1-based component pairs, matching how components are usually quoted.
  std::vector<std::pair<std::size_t, std::size_t>> component_pairs = {{2, 5},
                                                                      {3, 5}};

  data::SplitSpec split_spec() const;
  train::TrainConfig train_config() const;
  std::string split_dir() const;
};

RunConfig load_config(const std::string& path);
RunConfig config_from_json(const nlohmann::ordered_json& j);
nlohmann::ordered_json config_to_json(const RunConfig& config);

}  // namespace cvae::cli
