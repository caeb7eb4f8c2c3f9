#include "cvae/fixture.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <set>
#include <sstream>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "cvae/io_util.hpp"
#include "cvae/rng.hpp"

namespace cvae::fixture {
namespace {

// Lexicographically ordered labels so category indexing is stable.
const char* kLabels[] = {"alpha",   "bravo",  "charlie", "delta",  "echo",
                         "foxtrot", "golf",   "hotel",   "india",  "juliett",
                         "kilo",    "lima",   "mike",    "november", "oscar"};

std::string pad_id(const char* prefix, std::size_t v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%05zu", prefix, v);
  return buf;
}

}  // namespace

FixtureTruth generate(const std::string& dir, const FixtureSpec& spec) {
  if (spec.n_categories < 2 ||
      spec.n_categories > sizeof(kLabels) / sizeof(kLabels[0]))
    throw std::invalid_argument("fixture: unsupported category count");
  if (spec.n_items % spec.n_categories != 0)
    throw std::invalid_argument(
        "fixture: item count must be a multiple of the category count");
  std::filesystem::create_directories(dir);

  const std::size_t block = spec.n_items / spec.n_categories;
  nd::RngStream rng(nd::RngStream::derive(spec.seed, 0xF17E));

  std::ostringstream ratings;
  ratings << "user_id,item_id,rating,timestamp\n";
  std::int64_t ts = 1500000000;
  FixtureTruth truth;
  truth.n_users = spec.n_users;
  truth.n_items = spec.n_items;
  truth.n_categories = spec.n_categories;

  for (std::size_t u = 0; u < spec.n_users; ++u) {
    const std::size_t primary = rng.below(spec.n_categories);
    std::size_t secondary = rng.below(spec.n_categories - 1);
    if (secondary >= primary) ++secondary;

    const std::size_t span = spec.max_interactions - spec.min_interactions + 1;
    const std::size_t want = spec.min_interactions + rng.below(span);
    std::set<std::uint32_t> positives;
    while (positives.size() < want) {
      const double roll = rng.uniform();
      std::size_t item;
      if (roll < spec.primary_share) {
        item = primary * block + rng.below(block);
      } else if (roll < spec.primary_share + spec.secondary_share) {
        item = secondary * block + rng.below(block);
      } else {
        item = rng.below(spec.n_items);
      }
      positives.insert(static_cast<std::uint32_t>(item));
    }
    std::set<std::uint32_t> negatives;
    while (negatives.size() < spec.n_low_ratings) {
      const auto item = static_cast<std::uint32_t>(rng.below(spec.n_items));
      if (!positives.count(item)) negatives.insert(item);
    }

    const std::string uid = pad_id("u", u);
    for (auto item : positives) {
      const int rating = rng.uniform() < 0.5 ? 4 : 5;
      ratings << uid << "," << pad_id("i", item) << "," << rating << ","
              << ts++ << "\n";
      ++truth.positive_interactions;
    }
    for (auto item : negatives) {
      const int rating = rng.uniform() < 0.5 ? 1 : 2;
      ratings << uid << "," << pad_id("i", item) << "," << rating << ","
              << ts++ << "\n";
      ++truth.dropped_interactions;
    }
  }

  std::ostringstream categories;
  categories << "item_id,categories\n";
  for (std::size_t i = 0; i < spec.n_items; ++i)
    categories << pad_id("i", i) << "," << kLabels[i / block] << "\n";

  namespace fs = std::filesystem;
  io::write_file((fs::path(dir) / "ratings.csv").string(), ratings.str());
  io::write_file((fs::path(dir) / "categories.csv").string(),
                 categories.str());

  nlohmann::ordered_json truth_json;
  truth_json["n_users"] = truth.n_users;
  truth_json["n_items"] = truth.n_items;
  truth_json["n_categories"] = truth.n_categories;
  truth_json["positive_interactions"] = truth.positive_interactions;
  truth_json["dropped_interactions"] = truth.dropped_interactions;
  io::write_file((fs::path(dir) / "fixture_truth.json").string(),
                 truth_json.dump(2) + "\n");
  return truth;
}

}  // namespace cvae::fixture
