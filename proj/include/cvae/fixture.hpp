#pragma once

// Synthetic block-structured dataset generator used by the acceptance suite
// and for smoke-testing the pipeline without real data. Items are split into
// equal single-category blocks; each user prefers a primary and a secondary
// category and rates mostly inside those blocks, plus some uniform noise and
// a few low ratings that the binarization threshold drops.

#include <cstdint>
#include <string>

namespace cvae::fixture {

struct FixtureSpec {
  std::size_t n_users = 1000;
  std::size_t n_items = 200;
  std::size_t n_categories = 5;
  std::uint64_t seed = 13;
  double primary_share = 0.65;    // draw from the primary block
  double secondary_share = 0.25;  // draw from the secondary block
  std::size_t min_interactions = 18;
  std::size_t max_interactions = 32;
  std::size_t n_low_ratings = 3;  // per user, below the keep threshold
};

struct FixtureTruth {
  std::size_t n_users = 0;
  std::size_t n_items = 0;
  std::size_t n_categories = 0;
  std::size_t positive_interactions = 0;  // rating >= 3
  std::size_t dropped_interactions = 0;   // rating < 3
};

// Writes <dir>/ratings.csv, <dir>/categories.csv and
// <dir>/fixture_truth.json; returns the generator's bookkeeping.
FixtureTruth generate(const std::string& dir, const FixtureSpec& spec);

}  // namespace cvae::fixture
