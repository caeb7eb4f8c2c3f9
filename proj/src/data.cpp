#include "cvae/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "cvae/io_util.hpp"

namespace cvae::data {
namespace {

using json = nlohmann::ordered_json;

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_fields(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == delim) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(trim(cur));
  return out;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size() && std::isfinite(out);
}

bool parse_i64(const std::string& s, std::int64_t& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtoll(s.c_str(), &end, 10);
  return end == s.c_str() + s.size();
}

[[noreturn]] void malformed(const std::string& path, std::size_t line_no,
                            const std::string& why) {
  throw std::runtime_error(path + ":" + std::to_string(line_no) +
                           ": malformed line (" + why + ")");
}

void sort_unique(std::vector<std::uint32_t>& v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
}

}  // namespace

bool ItemConditionMatrix::item_in_category(std::uint32_t item,
                                           std::uint32_t cat) const {
  const auto& r = rows[item];
  return std::binary_search(r.begin(), r.end(), cat);
}

std::vector<std::uint32_t> ItemConditionMatrix::category_items(
    std::uint32_t cat) const {
  std::vector<std::uint32_t> items;
  for (std::uint32_t i = 0; i < m; ++i)
    if (item_in_category(i, cat)) items.push_back(i);
  return items;
}

std::vector<RawRating> load_ratings(const std::string& path, double threshold,
                                    char delimiter) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open ratings file: " + path);

  std::vector<RawRating> kept;
  std::string line;
  std::size_t line_no = 0;
  bool first_content_line = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_fields(line, delimiter);
    if (fields.size() < 3 || fields.size() > 4)
      malformed(path, line_no, "expected 3 or 4 fields, got " +
                                   std::to_string(fields.size()));
    double value = 0.0;
    if (!parse_double(fields[2], value)) {
      // A non-numeric rating on the first content line is a header.
      if (first_content_line) {
        first_content_line = false;
        continue;
      }
      malformed(path, line_no, "non-numeric rating '" + fields[2] + "'");
    }
    first_content_line = false;
    if (fields[0].empty() || fields[1].empty())
      malformed(path, line_no, "empty id");
    RawRating r;
    r.user_id = fields[0];
    r.item_id = fields[1];
    r.value = value;
    if (fields.size() == 4) {
      std::int64_t ts = 0;
      if (!parse_i64(fields[3], ts))
        malformed(path, line_no, "non-integer timestamp '" + fields[3] + "'");
      r.timestamp = ts;
    }
    if (r.value >= threshold) kept.push_back(std::move(r));
  }
  if (kept.empty())
    throw std::runtime_error("no interactions at or above threshold " +
                             std::to_string(threshold) + " in " + path);
  return kept;
}

InteractionMatrix filter_interactions(const std::vector<RawRating>& ratings,
                                      std::size_t min_user,
                                      std::size_t min_item) {
  if (ratings.empty()) throw std::runtime_error("filter_interactions: no input");

  // Provisional dense ids in first-appearance order, duplicates collapsed.
  std::unordered_map<std::string, std::uint32_t> umap;
  std::unordered_map<std::string, std::uint32_t> imap;
  std::vector<std::string> unames;
  std::vector<std::string> inames;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
  for (const auto& r : ratings) {
    auto [uit, unew] = umap.try_emplace(
        r.user_id, static_cast<std::uint32_t>(unames.size()));
    if (unew) unames.push_back(r.user_id);
    auto [iit, inew] = imap.try_emplace(
        r.item_id, static_cast<std::uint32_t>(inames.size()));
    if (inew) inames.push_back(r.item_id);
    const std::pair<std::uint32_t, std::uint32_t> p{uit->second, iit->second};
    if (seen.insert(p).second) pairs.push_back(p);
  }

  // Alternate item and user pruning until a fixed point.
  std::vector<char> user_alive(unames.size(), 1);
  std::vector<char> item_alive(inames.size(), 1);
  bool changed = true;
  while (changed) {
    changed = false;
    std::vector<std::size_t> item_count(inames.size(), 0);
    for (const auto& [u, i] : pairs)
      if (user_alive[u] && item_alive[i]) ++item_count[i];
    for (std::size_t i = 0; i < inames.size(); ++i) {
      if (item_alive[i] && item_count[i] < min_item) {
        item_alive[i] = 0;
        changed = true;
      }
    }
    std::vector<std::size_t> user_count(unames.size(), 0);
    for (const auto& [u, i] : pairs)
      if (user_alive[u] && item_alive[i]) ++user_count[u];
    for (std::size_t u = 0; u < unames.size(); ++u) {
      if (user_alive[u] && user_count[u] < min_user) {
        user_alive[u] = 0;
        changed = true;
      }
    }
  }

  InteractionMatrix out;
  std::vector<std::uint32_t> user_final(unames.size(), 0);
  std::vector<std::uint32_t> item_final(inames.size(), 0);
  for (std::size_t u = 0; u < unames.size(); ++u) {
    if (!user_alive[u]) continue;
    user_final[u] = static_cast<std::uint32_t>(out.user_ids.size());
    out.user_index.emplace(unames[u], user_final[u]);
    out.user_ids.push_back(unames[u]);
  }
  for (std::size_t i = 0; i < inames.size(); ++i) {
    if (!item_alive[i]) continue;
    item_final[i] = static_cast<std::uint32_t>(out.item_ids.size());
    out.item_index.emplace(inames[i], item_final[i]);
    out.item_ids.push_back(inames[i]);
  }
  out.n = out.user_ids.size();
  out.m = out.item_ids.size();
  if (out.n == 0 || out.m == 0)
    throw std::runtime_error(
        "filter_interactions: thresholds eliminated the whole dataset");

  out.rows.resize(out.n);
  for (const auto& [u, i] : pairs)
    if (user_alive[u] && item_alive[i])
      out.rows[user_final[u]].push_back(item_final[i]);
  for (auto& row : out.rows) sort_unique(row);
  return out;
}

ItemConditionMatrix load_item_conditions(
    const std::string& path, const InteractionMatrix& matrix,
    const std::vector<std::string>& drop_list, char delimiter) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open category file: " + path);
  const std::set<std::string> dropped(drop_list.begin(), drop_list.end());

  // First pass: resolve items, collect surviving labels per item.
  std::vector<std::pair<std::uint32_t, std::vector<std::string>>> parsed;
  std::set<std::string> labels;
  std::size_t unresolved = 0;
  std::string line;
  std::size_t line_no = 0;
  bool first_content_line = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_fields(line, delimiter);
    if (fields.size() != 2)
      malformed(path, line_no,
                "expected 2 fields, got " + std::to_string(fields.size()));
    auto it = matrix.item_index.find(fields[0]);
    if (it == matrix.item_index.end()) {
      // A header such as "item_id,categories" never resolves; only the first
      // content line is forgiven silently.
      if (!first_content_line) ++unresolved;
      first_content_line = false;
      continue;
    }
    first_content_line = false;
    std::vector<std::string> cats;
    for (const auto& raw : split_fields(fields[1], '|')) {
      if (raw.empty() || dropped.count(raw)) continue;
      cats.push_back(raw);
      labels.insert(raw);
    }
    parsed.emplace_back(it->second, std::move(cats));
  }
  if (parsed.empty())
    throw std::runtime_error("no category rows resolved against the item set");

  ItemConditionMatrix g;
  g.m = matrix.m;
  g.s = labels.size();
  g.category_names.assign(labels.begin(), labels.end());  // lexicographic
  g.unresolved_items = unresolved;
  std::unordered_map<std::string, std::uint32_t> label_index;
  for (std::uint32_t j = 0; j < g.s; ++j)
    label_index.emplace(g.category_names[j], j);

  g.rows.resize(g.m);
  for (const auto& [item, cats] : parsed)
    for (const auto& c : cats) g.rows[item].push_back(label_index.at(c));
  for (auto& row : g.rows) sort_unique(row);
  return g;
}

Split split_heldout(const InteractionMatrix& matrix, const SplitSpec& spec) {
  if (spec.foldin_fraction <= 0.0 || spec.foldin_fraction >= 1.0)
    throw std::invalid_argument("foldin_fraction must be in (0, 1)");
  if (spec.n_heldout_val + spec.n_heldout_test >= matrix.n)
    throw std::invalid_argument("held-out counts exceed the user count");

  std::vector<std::uint32_t> candidates;
  for (std::uint32_t u = 0; u < matrix.n; ++u)
    if (matrix.rows[u].size() >= 2) candidates.push_back(u);
  const std::size_t want = spec.n_heldout_val + spec.n_heldout_test;
  if (candidates.size() < want)
    throw std::runtime_error(
        "not enough users with >= 2 interactions for the requested held-out "
        "counts");

  nd::RngStream rng(nd::RngStream::derive(spec.seed, /*purpose=*/0x5EED0001));
  rng.shuffle(candidates);

  Split split;
  std::vector<std::uint32_t> val(candidates.begin(),
                                 candidates.begin() + spec.n_heldout_val);
  std::vector<std::uint32_t> test(candidates.begin() + spec.n_heldout_val,
                                  candidates.begin() + want);
  std::sort(val.begin(), val.end());
  std::sort(test.begin(), test.end());

  std::vector<char> heldout_flag(matrix.n, 0);
  for (auto u : val) heldout_flag[u] = 1;
  for (auto u : test) heldout_flag[u] = 1;
  for (std::uint32_t u = 0; u < matrix.n; ++u)
    if (!heldout_flag[u]) split.train_users.push_back(u);

  auto partition_user = [&](std::uint32_t u) {
    HeldoutUser hu;
    hu.user = u;
    std::vector<std::uint32_t> items = matrix.rows[u];
    rng.shuffle(items);
    const std::size_t sz = items.size();
    std::size_t k = static_cast<std::size_t>(
        std::floor(spec.foldin_fraction * static_cast<double>(sz)));
    k = std::min(std::max<std::size_t>(k, 1), sz - 1);
    hu.foldin.assign(items.begin(), items.begin() + k);
    hu.heldout.assign(items.begin() + k, items.end());
    std::sort(hu.foldin.begin(), hu.foldin.end());
    std::sort(hu.heldout.begin(), hu.heldout.end());
    return hu;
  };
  for (auto u : val) split.val_users.push_back(partition_user(u));
  for (auto u : test) split.test_users.push_back(partition_user(u));
  return split;
}

std::vector<TrainingExample> expand_conditions(
    const InteractionMatrix& matrix, const ItemConditionMatrix& conditions,
    const std::vector<std::uint32_t>& users) {
  if (conditions.m != matrix.m)
    throw std::invalid_argument("expand_conditions: item count mismatch");
  std::vector<TrainingExample> out;
  std::vector<char> covered(conditions.s, 0);
  for (auto u : users) {
    out.push_back({u, std::nullopt});
    std::fill(covered.begin(), covered.end(), 0);
    for (auto item : matrix.rows[u])
      for (auto c : conditions.rows[item]) covered[c] = 1;
    for (std::uint32_t j = 0; j < conditions.s; ++j)
      if (covered[j]) out.push_back({u, j});
  }
  return out;
}

namespace {

void write_pairs(const std::string& path,
                 const std::vector<std::pair<std::uint32_t, std::uint32_t>>&
                     pairs,
                 const char* header) {
  std::ostringstream ss;
  ss << header << "\n";
  for (const auto& [a, b] : pairs) ss << a << "," << b << "\n";
  io::write_file(path, ss.str());
}

std::vector<std::pair<std::uint32_t, std::uint32_t>> read_pairs(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open split file: " + path);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> out;
  std::string line;
  std::getline(in, line);  // header
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_fields(line, ',');
    if (fields.size() != 2) malformed(path, line_no, "expected 2 fields");
    out.emplace_back(static_cast<std::uint32_t>(std::stoul(fields[0])),
                     static_cast<std::uint32_t>(std::stoul(fields[1])));
  }
  return out;
}

void write_id_map(const std::string& path, const std::vector<std::string>& ids,
                  const char* header) {
  std::ostringstream ss;
  ss << header << "\n";
  for (std::size_t i = 0; i < ids.size(); ++i) ss << i << "," << ids[i] << "\n";
  io::write_file(path, ss.str());
}

}  // namespace

void write_split_dir(const std::string& dir, const Dataset& dataset,
                     const SplitSpec& spec, double rating_threshold,
                     const std::vector<std::pair<std::string, std::string>>&
                         input_fingerprints) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const auto& M = dataset.interactions;
  const auto& G = dataset.conditions;

  using PairList = std::vector<std::pair<std::uint32_t, std::uint32_t>>;
  PairList train;
  for (auto u : dataset.split.train_users)
    for (auto i : M.rows[u]) train.emplace_back(u, i);
  auto collect = [](const std::vector<HeldoutUser>& users, bool foldin) {
    PairList out;
    for (const auto& hu : users)
      for (auto i : (foldin ? hu.foldin : hu.heldout))
        out.emplace_back(hu.user, i);
    return out;
  };
  const auto join = [&](const char* name) {
    return (fs::path(dir) / name).string();
  };
  write_pairs(join("train.csv"), train, "user_index,item_index");
  write_pairs(join("validation_foldin.csv"),
              collect(dataset.split.val_users, true), "user_index,item_index");
  write_pairs(join("validation_heldout.csv"),
              collect(dataset.split.val_users, false),
              "user_index,item_index");
  write_pairs(join("test_foldin.csv"), collect(dataset.split.test_users, true),
              "user_index,item_index");
  write_pairs(join("test_heldout.csv"),
              collect(dataset.split.test_users, false),
              "user_index,item_index");

  PairList cat_pairs;
  for (std::uint32_t i = 0; i < G.m; ++i)
    for (auto c : G.rows[i]) cat_pairs.emplace_back(i, c);
  write_pairs(join("categories.csv"), cat_pairs, "item_index,category_index");

  {
    std::ostringstream ss;
    ss << "user_index,condition_index\n";
    for (const auto& ex : dataset.examples)
      ss << ex.user << ","
         << (ex.condition ? static_cast<std::int64_t>(*ex.condition) : -1)
         << "\n";
    io::write_file(join("examples.csv"), ss.str());
  }
  write_id_map(join("user_index.csv"), M.user_ids, "index,user_id");
  write_id_map(join("item_index.csv"), M.item_ids, "index,item_id");

  json manifest;
  manifest["format_version"] = 1;
  manifest["n"] = M.n;
  manifest["m"] = M.m;
  manifest["s"] = G.s;
  manifest["seed"] = dataset.seed;
  manifest["rating_threshold"] = rating_threshold;
  manifest["min_user_interactions"] = spec.min_user_interactions;
  manifest["min_item_interactions"] = spec.min_item_interactions;
  manifest["foldin_fraction"] = spec.foldin_fraction;
  manifest["category_names"] = G.category_names;
  manifest["counts"] = {
      {"interactions", M.interaction_count()},
      {"train_users", dataset.split.train_users.size()},
      {"validation_users", dataset.split.val_users.size()},
      {"test_users", dataset.split.test_users.size()},
      {"training_examples", dataset.examples.size()},
  };
  json fp = json::object();
  for (const auto& [name, hex] : input_fingerprints) fp[name] = hex;
  manifest["input_fingerprints"] = fp;
  io::write_file(join("manifest.json"), manifest.dump(2) + "\n");
}

Dataset read_split_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  const auto join = [&](const char* name) {
    return (fs::path(dir) / name).string();
  };
  json manifest = json::parse(io::read_file(join("manifest.json")));

  Dataset ds;
  ds.seed = manifest.at("seed").get<std::uint64_t>();
  auto& M = ds.interactions;
  M.n = manifest.at("n").get<std::size_t>();
  M.m = manifest.at("m").get<std::size_t>();
  M.rows.resize(M.n);

  auto& G = ds.conditions;
  G.m = M.m;
  G.s = manifest.at("s").get<std::size_t>();
  G.category_names =
      manifest.at("category_names").get<std::vector<std::string>>();
  G.rows.resize(G.m);
  for (const auto& [i, c] : read_pairs(join("categories.csv")))
    G.rows[i].push_back(c);
  for (auto& row : G.rows) sort_unique(row);

  // Ids.
  {
    std::ifstream in(join("user_index.csv"));
    if (!in) throw std::runtime_error("missing user_index.csv in " + dir);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (trim(line).empty()) continue;
      auto pos = line.find(',');
      M.user_ids.push_back(trim(line.substr(pos + 1)));
    }
    std::ifstream in2(join("item_index.csv"));
    if (!in2) throw std::runtime_error("missing item_index.csv in " + dir);
    std::getline(in2, line);
    while (std::getline(in2, line)) {
      if (trim(line).empty()) continue;
      auto pos = line.find(',');
      M.item_ids.push_back(trim(line.substr(pos + 1)));
    }
    for (std::uint32_t i = 0; i < M.user_ids.size(); ++i)
      M.user_index.emplace(M.user_ids[i], i);
    for (std::uint32_t i = 0; i < M.item_ids.size(); ++i)
      M.item_index.emplace(M.item_ids[i], i);
  }

  std::set<std::uint32_t> train_set;
  for (const auto& [u, i] : read_pairs(join("train.csv"))) {
    M.rows[u].push_back(i);
    train_set.insert(u);
  }
  ds.split.train_users.assign(train_set.begin(), train_set.end());

  auto load_heldout = [&](const char* foldin_file, const char* heldout_file) {
    std::map<std::uint32_t, HeldoutUser> users;
    for (const auto& [u, i] : read_pairs(join(foldin_file))) {
      users[u].user = u;
      users[u].foldin.push_back(i);
      M.rows[u].push_back(i);
    }
    for (const auto& [u, i] : read_pairs(join(heldout_file))) {
      users[u].user = u;
      users[u].heldout.push_back(i);
      M.rows[u].push_back(i);
    }
    std::vector<HeldoutUser> out;
    for (auto& [u, hu] : users) {
      std::sort(hu.foldin.begin(), hu.foldin.end());
      std::sort(hu.heldout.begin(), hu.heldout.end());
      out.push_back(std::move(hu));
    }
    return out;
  };
  ds.split.val_users =
      load_heldout("validation_foldin.csv", "validation_heldout.csv");
  ds.split.test_users = load_heldout("test_foldin.csv", "test_heldout.csv");
  for (auto& row : M.rows) sort_unique(row);

  {
    std::ifstream in(join("examples.csv"));
    if (!in) throw std::runtime_error("missing examples.csv in " + dir);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (trim(line).empty()) continue;
      auto fields = split_fields(line, ',');
      TrainingExample ex;
      ex.user = static_cast<std::uint32_t>(std::stoul(fields[0]));
      const std::int64_t c = std::stoll(fields[1]);
      if (c >= 0) ex.condition = static_cast<std::uint32_t>(c);
      ds.examples.push_back(ex);
    }
  }
  return ds;
}

}  // namespace cvae::data
