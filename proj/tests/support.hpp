#pragma once

// Shared fixtures and independent reference implementations for the tests.
// Oracles here deliberately avoid the library's own helpers.

#include "arena/config.hpp"
#include "arena/digest.hpp"
#include "arena/evaluation.hpp"
#include "arena/leaderboard.hpp"
#include "arena/time.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace arena::test {

class TempDir {
public:
  TempDir()
  {
    std::string tmpl = (std::filesystem::temp_directory_path() / "arena-test-XXXXXX").string();
    if (!::mkdtemp(tmpl.data())) {
      throw std::runtime_error("mkdtemp failed");
    }
    path_ = tmpl;
  }
  ~TempDir()
  {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

private:
  std::filesystem::path path_;
};

inline Timestamp at(const char* rfc3339) { return parse_rfc3339(rfc3339); }

// Two stages: "stage1" ranking (Jan-Feb 2026, MAP@10, v1 all_interactions,
// v2 test_only) and "stage2" instance task (March 2026, three instances).
inline nlohmann::json base_config()
{
  using nlohmann::json;
  json instances = json::array({{{"name", "inst-a"}, {"sense", "min"}},
                                {{"name", "inst-b"}, {"sense", "min"}},
                                {{"name", "inst-c"}, {"sense", "max"}}});
  return {
    {"competition_id", "demo"},
    {"title", "Demo challenge"},
    {"official_time_zone", "America/New_York"},
    {"registration_window", {{"open", "2025-12-01T00:00:00Z"}, {"close", "2026-03-15T00:00:00Z"}}},
    {"stages",
     json::array(
       {{{"stage_id", "stage1"},
         {"kind", "ranking_task"},
         {"open", "2026-01-01T00:00:00Z"},
         {"close", "2026-03-01T00:00:00Z"},
         {"daily_submission_limit", 10},
         {"aggregation_cadence_s", 1},
         {"baseline_score", 0.25},
         {"evaluator_versions",
          json::array({{{"version", 1},
                        {"metric", "map_at_k"},
                        {"parameters", {{"k", 10}, {"relevance_universe", "all_interactions"}, {"ground_truth", "holdout.csv"}}}},
                       {{"version", 2},
                        {"metric", "map_at_k"},
                        {"parameters", {{"k", 10}, {"relevance_universe", "test_only"}, {"ground_truth", "holdout.csv"}}}}})}},
        {{"stage_id", "stage2"},
         {"kind", "instance_task"},
         {"open", "2026-03-01T00:00:00Z"},
         {"close", "2026-04-01T00:00:00Z"},
         {"daily_submission_limit", 5},
         {"aggregation_cadence_s", 5},
         {"evaluator_versions",
          json::array({{{"version", 1},
                        {"metric", "instance_log"},
                        {"requires_verification", true},
                        {"parameters", {{"instances", instances}}}}})}}})},
    {"data_manifest",
     json::array({{{"file", "train.csv"}, {"sha256", std::string(64, '0')}, {"visibility", "registered"}},
                  {{"file", "README.txt"}, {"sha256", std::string(64, '0')}, {"visibility", "public"}}})},
    {"badge_rules",
     json::array({{{"badge_id", "first-submission"}, {"trigger", "first_submission"}},
                  {{"badge_id", "past-baseline"}, {"trigger", "first_past_baseline"}}})}};
}

inline CompetitionConfig config_from(const nlohmann::json& j) { return load_config(j.dump()); }

// ---- ranking fixtures -----------------------------------------------------

struct RawInteraction {
  std::string user;
  std::string item;
  int label;
  bool test;
};

inline std::string ground_truth_csv(const std::vector<RawInteraction>& rows)
{
  std::string out = "user_id,item_id,label,split\n";
  for (const auto& r : rows) {
    out += r.user + "," + r.item + "," + std::to_string(r.label) + "," + (r.test ? "test" : "train") + "\n";
  }
  return out;
}

inline std::string ranking_csv(const std::map<std::string, std::vector<std::string>>& lists)
{
  std::string out = "user_id,item_id,rank\n";
  for (const auto& [user, items] : lists) {
    for (std::size_t i = 0; i < items.size(); ++i) {
      out += user + "," + items[i] + "," + std::to_string(i + 1) + "\n";
    }
  }
  return out;
}

// AP by definition: for every cut-off r up to min(k, n), precision at r is
// recounted from scratch over the prefix; terms are added only where rank r is
// relevant. Quadratic on purpose.
inline long double oracle_ap(const std::vector<std::string>& ranked, const std::set<std::string>& relevant, int k)
{
  const std::size_t depth = std::min<std::size_t>(static_cast<std::size_t>(k), ranked.size());
  long double total = 0;
  for (std::size_t r = 1; r <= depth; ++r) {
    if (!relevant.count(ranked[r - 1])) {
      continue;
    }
    std::size_t hits = 0;
    for (std::size_t j = 0; j < r; ++j) {
      hits += relevant.count(ranked[j]);
    }
    total += static_cast<long double>(hits) / static_cast<long double>(r);
  }
  return total / static_cast<long double>(std::min<std::size_t>(static_cast<std::size_t>(k), relevant.size()));
}

// MAP straight from raw rows: relevance universe, list filter and exclusion of
// users without relevant items are all rederived here.
inline long double oracle_map(const std::vector<RawInteraction>& rows,
                              const std::map<std::string, std::vector<std::string>>& lists, int k,
                              bool test_only, bool list_filter = false)
{
  std::set<std::string> users;
  std::set<std::string> test_items;
  for (const auto& r : rows) {
    users.insert(r.user);
    if (r.test) {
      test_items.insert(r.item);
    }
  }
  long double sum = 0;
  int counted = 0;
  for (const auto& u : users) {
    std::set<std::string> rel;
    for (const auto& r : rows) {
      if (r.user == u && r.label == 1 && (!test_only || test_items.count(r.item))) {
        rel.insert(r.item);
      }
    }
    if (rel.empty()) {
      continue;
    }
    ++counted;
    const auto it = lists.find(u);
    if (it == lists.end()) {
      continue;
    }
    std::vector<std::string> ranked;
    for (const auto& item : it->second) {
      if (!list_filter || test_items.count(item)) {
        ranked.push_back(item);
      }
    }
    sum += oracle_ap(ranked, rel, k);
  }
  return counted == 0 ? 0 : sum / counted;
}

struct RankingFixture {
  std::vector<RawInteraction> rows;
  std::map<std::string, std::vector<std::string>> lists;
  int k = 10;
};

// <= max_users users, <= max_items items; some users have no positives,
// some are left out of the submission.
inline RankingFixture random_ranking_fixture(std::mt19937_64& rng, int k, int max_users = 20, int max_items = 50)
{
  RankingFixture f;
  f.k = k;
  std::uniform_int_distribution<int> n_users(1, max_users);
  std::uniform_int_distribution<int> n_items(1, max_items);
  const int users = n_users(rng);
  const int items = n_items(rng);
  std::bernoulli_distribution coin(0.5);
  std::bernoulli_distribution sparse(0.15);
  for (int u = 0; u < users; ++u) {
    const auto user = "u" + std::to_string(u);
    for (int i = 0; i < items; ++i) {
      if (sparse(rng)) {
        f.rows.push_back({user, "i" + std::to_string(i), coin(rng) ? 1 : 0, coin(rng)});
      }
    }
    if (f.rows.empty() || f.rows.back().user != user) {
      // every user must occur in the ground truth
      f.rows.push_back({user, "i" + std::to_string(rng() % items), static_cast<int>(rng() % 2), coin(rng)});
    }
    if (std::bernoulli_distribution(0.85)(rng)) {
      std::vector<std::string> pool;
      for (int i = 0; i < items; ++i) {
        pool.push_back("i" + std::to_string(i));
      }
      std::shuffle(pool.begin(), pool.end(), rng);
      pool.resize(std::uniform_int_distribution<std::size_t>(0, std::min<std::size_t>(pool.size(), k))(rng));
      if (!pool.empty()) {
        f.lists[user] = pool;
      }
    }
  }
  return f;
}

// ---- leaderboard oracle ---------------------------------------------------

struct OracleRecord {
  std::string team;
  std::string name;
  SubmissionId id;
  Timestamp received;
  std::optional<double> score; // nullopt: rejected
  Verification verification = Verification::verified;
  double runtime = 0;
};

// Best-mode ordering by exhaustive comparison: each team's best record is the
// minimum of its usable records under the full ranking key; teams are then
// sorted by the same key, score-less teams last by name.
inline std::vector<std::pair<std::string, std::optional<double>>> oracle_board(const std::vector<OracleRecord>& recs,
                                                                              bool use_runtime)
{
  auto key_less = [&](const OracleRecord& a, const OracleRecord& b) {
    if (*a.score != *b.score) return *a.score > *b.score;
    if (use_runtime && a.runtime != b.runtime) return a.runtime < b.runtime;
    if (a.received != b.received) return a.received < b.received;
    return a.id < b.id;
  };
  std::map<std::string, std::string> names;
  std::map<std::string, std::vector<OracleRecord>> usable;
  for (const auto& r : recs) {
    names[r.team] = r.name;
    if (r.score && r.verification != Verification::invalidated) {
      usable[r.team].push_back(r);
    }
  }
  std::vector<OracleRecord> bests;
  std::vector<std::string> unscored;
  for (const auto& [team, name] : names) {
    auto it = usable.find(team);
    if (it == usable.end()) {
      unscored.push_back(name);
      continue;
    }
    auto v = it->second;
    std::sort(v.begin(), v.end(), key_less);
    bests.push_back(v.front());
  }
  std::sort(bests.begin(), bests.end(), [&](const OracleRecord& a, const OracleRecord& b) {
    if (*a.score != *b.score) return *a.score > *b.score;
    if (use_runtime && a.runtime != b.runtime) return a.runtime < b.runtime;
    if (a.received != b.received) return a.received < b.received;
    return a.name < b.name;
  });
  std::sort(unscored.begin(), unscored.end());
  std::vector<std::pair<std::string, std::optional<double>>> out;
  for (const auto& b : bests) {
    out.emplace_back(b.name, b.score);
  }
  for (const auto& n : unscored) {
    out.emplace_back(n, std::nullopt);
  }
  return out;
}

} // namespace arena::test
