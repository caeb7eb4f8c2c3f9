#pragma once

// Ingestion and preprocessing: raw ratings to a binary interaction matrix,
// item categories, held-out splits with fold-in partitions, and the
// condition-expanded training example list.

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "cvae/rng.hpp"

namespace cvae::data {

struct RawRating {
  std::string user_id;
  std::string item_id;
  double value = 0.0;
  std::optional<std::int64_t> timestamp;
};

// Binary implicit feedback. Rows are strictly sorted, duplicate-free item
// index lists; every row is non-empty after preprocessing.
struct InteractionMatrix {
  std::size_t n = 0;
  std::size_t m = 0;
  std::vector<std::vector<std::uint32_t>> rows;
  std::vector<std::string> user_ids;  // index -> external id
  std::vector<std::string> item_ids;
  std::unordered_map<std::string, std::uint32_t> user_index;  // id -> index
  std::unordered_map<std::string, std::uint32_t> item_index;

  std::size_t interaction_count() const {
    std::size_t total = 0;
    for (const auto& r : rows) total += r.size();
    return total;
  }
};

// Binary item x category membership (an item may belong to no category).
struct ItemConditionMatrix {
  std::size_t m = 0;
  std::size_t s = 0;
  std::vector<std::vector<std::uint32_t>> rows;  // per item, sorted
  std::vector<std::string> category_names;
  std::size_t unresolved_items = 0;  // ids in the file absent from the index

  bool item_in_category(std::uint32_t item, std::uint32_t cat) const;
  // Items belonging to the category, ascending.
  std::vector<std::uint32_t> category_items(std::uint32_t cat) const;
};

// At most one active category during training; absent means unconditioned.
struct ConditionVector {
  std::size_t s = 0;
  std::optional<std::uint32_t> active;

  std::vector<double> materialize() const {
    std::vector<double> c(s, 0.0);
    if (active) c[*active] = 1.0;
    return c;
  }
};

struct TrainingExample {
  std::uint32_t user = 0;
  std::optional<std::uint32_t> condition;
};

struct SplitSpec {
  std::size_t n_heldout_val = 0;
  std::size_t n_heldout_test = 0;
  double foldin_fraction = 0.8;
  std::size_t min_user_interactions = 4;
  std::size_t min_item_interactions = 10;
  std::uint64_t seed = 0;
};

struct HeldoutUser {
  std::uint32_t user = 0;
  std::vector<std::uint32_t> foldin;   // sorted
  std::vector<std::uint32_t> heldout;  // sorted, non-empty
};

struct Split {
  std::vector<std::uint32_t> train_users;
  std::vector<HeldoutUser> val_users;
  std::vector<HeldoutUser> test_users;
};

// Parses delimited ratings (user_id, item_id, rating[, timestamp]); a header
// line is auto-detected by a non-numeric third field. Keeps rows with
// value >= threshold, preserving order.
std::vector<RawRating> load_ratings(const std::string& path, double threshold,
                                    char delimiter = ',');

// Iteratively removes items with fewer than min_item users and users with
// fewer than min_user items until a fixed point, then re-indexes densely in
// first-appearance order. Duplicate (user, item) pairs collapse to one.
InteractionMatrix filter_interactions(const std::vector<RawRating>& ratings,
                                      std::size_t min_user,
                                      std::size_t min_item);

// Parses delimited item categories (item_id, pipe-separated labels). Labels
// in drop_list are removed before the dense category indexing (categories
// are ordered lexicographically). Item ids absent from the matrix are
// skipped and counted.
ItemConditionMatrix load_item_conditions(
    const std::string& path, const InteractionMatrix& matrix,
    const std::vector<std::string>& drop_list, char delimiter = ',');

// Deterministic under spec.seed. Users with fewer than two interactions are
// not eligible for val/test. Each held-out user's items are partitioned into
// fold-in (floor(fraction * count), clamped to [1, count-1]) and held-out.
Split split_heldout(const InteractionMatrix& matrix, const SplitSpec& spec);

// One unconditioned example per user plus one example per category that at
// least one of the user's items belongs to.
std::vector<TrainingExample> expand_conditions(
    const InteractionMatrix& matrix, const ItemConditionMatrix& conditions,
    const std::vector<std::uint32_t>& users);

// In-memory form of a preprocessed split directory.
struct Dataset {
  InteractionMatrix interactions;  // rows for every user index
  ItemConditionMatrix conditions;
  Split split;
  std::vector<TrainingExample> examples;  // over train users
  std::uint64_t seed = 0;
};

// Split directory layout: manifest.json, train.csv, validation_foldin.csv,
// validation_heldout.csv, test_foldin.csv, test_heldout.csv, categories.csv,
// examples.csv, user_index.csv, item_index.csv. Writes are deterministic:
// the same dataset and seed produce byte-identical files.
void write_split_dir(const std::string& dir, const Dataset& dataset,
                     const SplitSpec& spec, double rating_threshold,
                     const std::vector<std::pair<std::string, std::string>>&
                         input_fingerprints);
Dataset read_split_dir(const std::string& dir);

}  // namespace cvae::data
