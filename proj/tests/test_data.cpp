#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "cvae/data.hpp"
#include "cvae/io_util.hpp"

namespace fs = std::filesystem;
using namespace cvae;

namespace {

std::string temp_dir(const std::string& tag) {
  const auto dir = fs::temp_directory_path() / ("cvae_data_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

std::string write_temp(const std::string& dir, const std::string& name,
                       const std::string& content) {
  const auto path = (fs::path(dir) / name).string();
  io::write_file(path, content);
  return path;
}

data::InteractionMatrix tiny_matrix() {
  // 3 users x 4 items.
  data::InteractionMatrix m;
  m.n = 3;
  m.m = 4;
  m.rows = {{0, 1, 2}, {1, 3}, {0, 2, 3}};
  m.user_ids = {"u0", "u1", "u2"};
  m.item_ids = {"a", "b", "c", "d"};
  for (std::uint32_t i = 0; i < 3; ++i) m.user_index[m.user_ids[i]] = i;
  for (std::uint32_t i = 0; i < 4; ++i) m.item_index[m.item_ids[i]] = i;
  return m;
}

}  // namespace

TEST_CASE("load_ratings: threshold keeps high scores only") {
  const auto dir = temp_dir("ratings");
  const auto path = write_temp(dir, "r.csv",
                               "u1,i1,3.0\n"
                               "u1,i2,2.5\n");
  const auto kept = data::load_ratings(path, 3.0);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].user_id == "u1");
  CHECK(kept[0].item_id == "i1");
}

TEST_CASE("load_ratings: zero threshold is a no-op, header auto-detected") {
  const auto dir = temp_dir("ratings2");
  const auto path = write_temp(dir, "r.csv",
                               "user_id,item_id,rating,timestamp\n"
                               "u1,i1,1.0,100\n"
                               "u2,i2,0.5,200\n"
                               "u3,i3,4.0,300\n");
  const auto kept = data::load_ratings(path, 0.0);
  CHECK(kept.size() == 3);
  CHECK(kept[0].timestamp.has_value());
  CHECK(*kept[2].timestamp == 300);
}

TEST_CASE("load_ratings: mixed five-row fixture keeps three") {
  const auto dir = temp_dir("ratings3");
  const auto path = write_temp(dir, "r.csv",
                               "a,x,4\nb,y,1\nc,z,3\nd,w,2\ne,v,5\n");
  CHECK(data::load_ratings(path, 3.0).size() == 3);
}

TEST_CASE("load_ratings: malformed line names the line number") {
  const auto dir = temp_dir("ratings4");
  const auto path = write_temp(dir, "r.csv",
                               "u1,i1,4.0\n"
                               "u2,i2,not_a_number\n");
  try {
    data::load_ratings(path, 0.0);
    FAIL("expected a parse error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find(":2") != std::string::npos);
  }
}

TEST_CASE("load_ratings: empty result is an error") {
  const auto dir = temp_dir("ratings5");
  const auto path = write_temp(dir, "r.csv", "u1,i1,1.0\n");
  CHECK_THROWS(data::load_ratings(path, 3.0));
  const auto missing = (fs::path(dir) / "nope.csv").string();
  CHECK_THROWS(data::load_ratings(missing, 3.0));
}

TEST_CASE("filter_interactions: forced elimination errors") {
  std::vector<data::RawRating> ratings = {{"u1", "i1", 5.0, {}}};
  CHECK_THROWS(data::filter_interactions(ratings, 4, 1));
}

TEST_CASE("filter_interactions: identity thresholds keep everything") {
  std::vector<data::RawRating> ratings = {
      {"u1", "a", 5.0, {}}, {"u1", "b", 5.0, {}}, {"u2", "b", 5.0, {}},
      {"u2", "a", 5.0, {}}, {"u1", "a", 4.0, {}},  // duplicate pair collapses
  };
  const auto m = data::filter_interactions(ratings, 1, 1);
  CHECK(m.n == 2);
  CHECK(m.m == 2);
  CHECK(m.interaction_count() == 4);
  CHECK(m.rows[0] == std::vector<std::uint32_t>{0, 1});
}

TEST_CASE("filter_interactions: fixed-point hand trace") {
  // Users with 5, 5, and 2 items; min_user=4 eliminates the third user, which
  // leaves every item with >= 1 user (min_item=1): 2 users survive.
  std::vector<data::RawRating> ratings;
  for (int i = 0; i < 5; ++i)
    ratings.push_back({"u1", "i" + std::to_string(i), 5.0, {}});
  for (int i = 0; i < 5; ++i)
    ratings.push_back({"u2", "i" + std::to_string(i), 5.0, {}});
  ratings.push_back({"u3", "i0", 5.0, {}});
  ratings.push_back({"u3", "i1", 5.0, {}});
  const auto m = data::filter_interactions(ratings, 4, 1);
  CHECK(m.n == 2);
  CHECK(m.m == 5);
}

TEST_CASE("filter_interactions: idempotence at the fixed point") {
  // Re-filtering the surviving pairs with the same thresholds is a no-op.
  std::vector<data::RawRating> ratings = {
      {"u1", "a", 5, {}}, {"u1", "b", 5, {}}, {"u1", "c", 5, {}},
      {"u2", "a", 5, {}}, {"u2", "b", 5, {}}, {"u2", "d", 5, {}},
      {"u3", "d", 5, {}}, {"u3", "e", 5, {}}, {"u3", "a", 5, {}},
      {"u4", "a", 5, {}}, {"u4", "b", 5, {}}, {"u4", "d", 5, {}},
  };
  const auto m1 = data::filter_interactions(ratings, 2, 2);
  std::vector<data::RawRating> again;
  for (std::uint32_t u = 0; u < m1.n; ++u)
    for (auto i : m1.rows[u])
      again.push_back({m1.user_ids[u], m1.item_ids[i], 5.0, {}});
  const auto m2 = data::filter_interactions(again, 2, 2);
  CHECK(m1.n == m2.n);
  CHECK(m1.m == m2.m);
  CHECK(m1.rows == m2.rows);
  CHECK(m1.user_ids == m2.user_ids);
  CHECK(m1.item_ids == m2.item_ids);
}

TEST_CASE("filter_interactions: cascade that empties everything throws") {
  std::vector<data::RawRating> ratings = {
      {"u1", "a", 5, {}}, {"u1", "b", 5, {}}, {"u1", "c", 5, {}},
      {"u2", "a", 5, {}}, {"u2", "b", 5, {}}, {"u2", "d", 5, {}},
      {"u3", "d", 5, {}}, {"u3", "e", 5, {}}, {"u3", "a", 5, {}},
  };
  CHECK_THROWS(data::filter_interactions(ratings, 3, 2));
}

TEST_CASE("load_item_conditions: parse, drop list, missing item") {
  const auto m = tiny_matrix();
  const auto dir = temp_dir("cats");
  const auto path = write_temp(dir, "c.csv",
                               "item_id,categories\n"
                               "a,Action|Comedy\n"
                               "b,Comedy\n"
                               "c,IMAX\n"
                               "zz,Action\n");  // zz unresolvable
  SUBCASE("plain parse") {
    const auto g = data::load_item_conditions(path, m, {});
    CHECK(g.s == 3);  // Action, Comedy, IMAX (lexicographic)
    CHECK(g.category_names ==
          std::vector<std::string>{"Action", "Comedy", "IMAX"});
    CHECK(g.rows[0] == std::vector<std::uint32_t>{0, 1});
    CHECK(g.rows[1] == std::vector<std::uint32_t>{1});
    CHECK(g.rows[3].empty());  // d absent from the file
    CHECK(g.unresolved_items == 1);
  }
  SUBCASE("drop list removes the column and decrements s") {
    const auto g = data::load_item_conditions(path, m, {"IMAX"});
    CHECK(g.s == 2);
    CHECK(g.category_names == std::vector<std::string>{"Action", "Comedy"});
    CHECK(g.rows[2].empty());  // c only had IMAX
  }
}

TEST_CASE("load_item_conditions: zero resolvable items errors") {
  const auto m = tiny_matrix();
  const auto dir = temp_dir("cats2");
  const auto path = write_temp(dir, "c.csv", "zz,Action\nyy,Comedy\n");
  CHECK_THROWS(data::load_item_conditions(path, m, {}));
}

TEST_CASE("split_heldout: fold-in arithmetic and minimum split") {
  data::InteractionMatrix m;
  m.n = 30;
  m.m = 12;
  m.rows.resize(30);
  for (std::uint32_t u = 0; u < 30; ++u) {
    const std::size_t count = u < 10 ? 10 : 2;
    for (std::uint32_t i = 0; i < count; ++i)
      m.rows[u].push_back(i);
  }
  data::SplitSpec spec;
  spec.n_heldout_val = 5;
  spec.n_heldout_test = 5;
  spec.foldin_fraction = 0.8;
  spec.seed = 99;
  const auto split = data::split_heldout(m, spec);
  CHECK(split.train_users.size() == 20);
  CHECK(split.val_users.size() == 5);
  CHECK(split.test_users.size() == 5);
  for (const auto& hu : split.val_users) {
    if (m.rows[hu.user].size() == 10) {
      CHECK(hu.foldin.size() == 8);  // floor(0.8 * 10)
      CHECK(hu.heldout.size() == 2);
    } else {
      CHECK(hu.foldin.size() == 1);  // 2-item users split 1/1
      CHECK(hu.heldout.size() == 1);
    }
    // Disjoint, union equals the row.
    std::vector<std::uint32_t> merged = hu.foldin;
    merged.insert(merged.end(), hu.heldout.begin(), hu.heldout.end());
    std::sort(merged.begin(), merged.end());
    CHECK(merged == m.rows[hu.user]);
  }
}

TEST_CASE("split_heldout: determinism and single-item exclusion") {
  data::InteractionMatrix m;
  m.n = 20;
  m.m = 10;
  m.rows.resize(20);
  for (std::uint32_t u = 0; u < 20; ++u) {
    m.rows[u].push_back(u % 10);
    if (u >= 5) m.rows[u].push_back((u + 3) % 10);
  }
  data::SplitSpec spec;
  spec.n_heldout_val = 4;
  spec.n_heldout_test = 4;
  spec.foldin_fraction = 0.5;
  spec.seed = 7;
  const auto a = data::split_heldout(m, spec);
  const auto b = data::split_heldout(m, spec);
  CHECK(a.train_users == b.train_users);
  for (std::size_t i = 0; i < a.val_users.size(); ++i) {
    CHECK(a.val_users[i].user == b.val_users[i].user);
    CHECK(a.val_users[i].foldin == b.val_users[i].foldin);
    CHECK(a.val_users[i].heldout == b.val_users[i].heldout);
  }
  // Users 0..4 have a single interaction and are never held out.
  for (const auto& hu : a.val_users) CHECK(hu.user >= 5);
  for (const auto& hu : a.test_users) CHECK(hu.user >= 5);
}

TEST_CASE("expand_conditions: coverage and vacuous cases") {
  const auto m = tiny_matrix();
  data::ItemConditionMatrix g;
  g.m = 4;
  g.s = 17;
  g.rows = {{0}, {5}, {9}, {}};
  g.category_names.resize(17, "x");
  // User 0 has items {0,1,2} covering categories {0,5,9}: 3 + 1 examples.
  const auto ex = data::expand_conditions(m, g, {0});
  REQUIRE(ex.size() == 4);
  CHECK_FALSE(ex[0].condition.has_value());
  CHECK(*ex[1].condition == 0);
  CHECK(*ex[2].condition == 5);
  CHECK(*ex[3].condition == 9);

  // A user whose items carry no categories yields one unconditioned example.
  data::ItemConditionMatrix empty;
  empty.m = 4;
  empty.s = 3;
  empty.rows = {{}, {}, {}, {}};
  empty.category_names = {"a", "b", "c"};
  const auto ex2 = data::expand_conditions(m, empty, {1});
  REQUIRE(ex2.size() == 1);
  CHECK_FALSE(ex2[0].condition.has_value());
}

TEST_CASE("expand_conditions: every conditioned example has a nonzero target") {
  const auto m = tiny_matrix();
  data::ItemConditionMatrix g;
  g.m = 4;
  g.s = 4;
  g.rows = {{0, 1}, {1}, {2}, {0, 3}};
  g.category_names = {"a", "b", "c", "d"};
  const auto ex =
      data::expand_conditions(m, g, std::vector<std::uint32_t>{0, 1, 2});
  for (const auto& e : ex) {
    if (!e.condition) continue;
    bool hit = false;
    for (auto item : m.rows[e.user])
      hit |= g.item_in_category(item, *e.condition);
    CHECK(hit);
  }
  // Size bound: |users| * (s + 1).
  CHECK(ex.size() <= 3 * (4 + 1));
}

TEST_CASE("split dir round trip and byte-identical rewrites") {
  const auto m = tiny_matrix();
  data::ItemConditionMatrix g;
  g.m = 4;
  g.s = 2;
  g.rows = {{0}, {1}, {0}, {1}};
  g.category_names = {"left", "right"};

  data::SplitSpec spec;
  spec.n_heldout_val = 1;
  spec.n_heldout_test = 1;
  spec.foldin_fraction = 0.5;
  spec.seed = 5;

  data::Dataset ds;
  ds.interactions = m;
  ds.conditions = g;
  ds.split = data::split_heldout(m, spec);
  ds.examples = data::expand_conditions(m, g, ds.split.train_users);
  ds.seed = 5;

  const auto dir = temp_dir("splitdir");
  data::write_split_dir(dir, ds, spec, 3.0, {{"ratings", "deadbeef"}});
  const auto loaded = data::read_split_dir(dir);

  CHECK(loaded.interactions.n == m.n);
  CHECK(loaded.interactions.m == m.m);
  CHECK(loaded.interactions.rows == m.rows);
  CHECK(loaded.interactions.item_ids == m.item_ids);
  CHECK(loaded.conditions.rows == g.rows);
  CHECK(loaded.conditions.category_names == g.category_names);
  CHECK(loaded.examples.size() == ds.examples.size());
  REQUIRE(loaded.split.val_users.size() == 1);
  CHECK(loaded.split.val_users[0].foldin == ds.split.val_users[0].foldin);
  CHECK(loaded.split.val_users[0].heldout == ds.split.val_users[0].heldout);

  // Writing the same dataset again produces byte-identical files.
  const auto dir2 = temp_dir("splitdir2");
  data::write_split_dir(dir2, ds, spec, 3.0, {{"ratings", "deadbeef"}});
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    CHECK(io::read_file(entry.path().string()) ==
          io::read_file((fs::path(dir2) / name).string()));
  }
}
