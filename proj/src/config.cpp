#include "cvae/config.hpp"

#include <filesystem>
#include <stdexcept>

#include "cvae/eval.hpp"
#include "cvae/io_util.hpp"
#include "cvae/model.hpp"

namespace cvae::cli {
namespace {

using json = nlohmann::ordered_json;

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

data::SplitSpec RunConfig::split_spec() const {
  data::SplitSpec spec;
  spec.n_heldout_val = n_heldout_val;
  spec.n_heldout_test = n_heldout_test;
  spec.foldin_fraction = foldin_fraction;
  spec.min_user_interactions = min_user_interactions;
  spec.min_item_interactions = min_item_interactions;
  spec.seed = seed;
  return spec;
}

train::TrainConfig RunConfig::train_config() const {
  train::TrainConfig tc;
  tc.batch_size = batch_size;
  tc.max_epochs = max_epochs;
  tc.lr = learning_rate;
  tc.anneal_cap = anneal_cap;
  tc.anneal_total_steps = anneal_total_steps;
  tc.patience = patience;
  tc.dropout_p = dropout;
  tc.seed = seed;
  tc.hidden_dim = hidden_dim;
  tc.latent_dim = latent_dim;
  tc.conditioned = conditioned;
  tc.input_order = model::parse_input_order(input_order);
  tc.validation_protocol = eval::parse_protocol(validation_protocol);
  return tc;
}

std::string RunConfig::split_dir() const {
  return (std::filesystem::path(artifact_dir) / "split").string();
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  maybe(j, "seed", c.seed);
  maybe(j, "threads", c.threads);
  maybe(j, "artifact_dir", c.artifact_dir);
  maybe(j, "simd", c.simd);
  maybe(j, "verbose", c.verbose);

  if (j.contains("data")) {
    const auto& d = j.at("data");
    maybe(d, "ratings", c.ratings_path);
    maybe(d, "categories", c.categories_path);
    if (d.contains("delimiter")) {
      const auto s = d.at("delimiter").get<std::string>();
      if (s.size() != 1)
        throw std::runtime_error("config: delimiter must be one character");
      c.delimiter = s[0];
    }
    maybe(d, "rating_threshold", c.rating_threshold);
    maybe(d, "drop_categories", c.drop_categories);
    maybe(d, "min_user_interactions", c.min_user_interactions);
    maybe(d, "min_item_interactions", c.min_item_interactions);
    maybe(d, "n_heldout_val", c.n_heldout_val);
    maybe(d, "n_heldout_test", c.n_heldout_test);
    maybe(d, "foldin_fraction", c.foldin_fraction);
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    maybe(m, "hidden_dim", c.hidden_dim);
    maybe(m, "latent_dim", c.latent_dim);
    maybe(m, "conditioned", c.conditioned);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    maybe(t, "batch_size", c.batch_size);
    maybe(t, "max_epochs", c.max_epochs);
    maybe(t, "learning_rate", c.learning_rate);
    maybe(t, "anneal_cap", c.anneal_cap);
    maybe(t, "anneal_total_steps", c.anneal_total_steps);
    maybe(t, "patience", c.patience);
    maybe(t, "dropout", c.dropout);
    maybe(t, "input_order", c.input_order);
    maybe(t, "validation_protocol", c.validation_protocol);
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    maybe(e, "ks_recall", c.ks_recall);
    maybe(e, "ks_ndcg", c.ks_ndcg);
  }
  if (j.contains("analyze")) {
    const auto& a = j.at("analyze");
    maybe(a, "sample_users", c.sample_users);
    maybe(a, "max_rank", c.max_rank);
    maybe(a, "purity_k", c.purity_k);
    maybe(a, "pca_components", c.pca_components);
    if (a.contains("component_pairs")) {
      c.component_pairs.clear();
      for (const auto& p : a.at("component_pairs"))
        c.component_pairs.emplace_back(p.at(0).get<std::size_t>(),
                                       p.at(1).get<std::size_t>());
    }
  }

  if (c.anneal_cap < 0.0 || c.anneal_cap > 1.0)
    throw std::runtime_error("config: anneal_cap must be in [0, 1]");
  if (c.dropout < 0.0 || c.dropout >= 1.0)
    throw std::runtime_error("config: dropout must be in [0, 1)");
  if (c.patience < 1) throw std::runtime_error("config: patience must be >= 1");
  if (c.simd != "auto" && c.simd != "scalar" && c.simd != "avx2")
    throw std::runtime_error("config: simd must be auto|scalar|avx2");
  model::parse_input_order(c.input_order);
  return c;
}

RunConfig load_config(const std::string& path) {
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::parse_error& e) {
    throw std::runtime_error("config parse error in " + path + ": " +
                             e.what());
  }
  return config_from_json(j);
}

json config_to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["artifact_dir"] = c.artifact_dir;
  j["simd"] = c.simd;
  j["verbose"] = c.verbose;
  j["data"] = {{"ratings", c.ratings_path},
               {"categories", c.categories_path},
               {"delimiter", std::string(1, c.delimiter)},
               {"rating_threshold", c.rating_threshold},
               {"drop_categories", c.drop_categories},
               {"min_user_interactions", c.min_user_interactions},
               {"min_item_interactions", c.min_item_interactions},
               {"n_heldout_val", c.n_heldout_val},
               {"n_heldout_test", c.n_heldout_test},
               {"foldin_fraction", c.foldin_fraction}};
  j["model"] = {{"hidden_dim", c.hidden_dim},
                {"latent_dim", c.latent_dim},
                {"conditioned", c.conditioned}};
  j["train"] = {{"batch_size", c.batch_size},
                {"max_epochs", c.max_epochs},
                {"learning_rate", c.learning_rate},
                {"anneal_cap", c.anneal_cap},
                {"anneal_total_steps", c.anneal_total_steps},
                {"patience", c.patience},
                {"dropout", c.dropout},
                {"input_order", c.input_order},
                {"validation_protocol", c.validation_protocol}};
  j["eval"] = {{"ks_recall", c.ks_recall}, {"ks_ndcg", c.ks_ndcg}};
  json pairs = json::array();
  for (const auto& [a, b] : c.component_pairs) pairs.push_back({a, b});
  j["analyze"] = {{"sample_users", c.sample_users},
                  {"max_rank", c.max_rank},
                  {"purity_k", c.purity_k},
                  {"pca_components", c.pca_components},
                  {"component_pairs", pairs}};
  return j;
}

}  // namespace cvae::cli
