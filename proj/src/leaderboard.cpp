#include "arena/leaderboard.hpp"

#include "arena/csv.hpp"
#include "arena/digest.hpp"
#include "arena/error.hpp"
#include "arena/metrics.hpp"

#include <algorithm>
#include <cstdio>

namespace arena {

using nlohmann::json;

namespace {

struct TeamTally {
  std::string team_id;
  std::string display_name;
  int count = 0;
  std::optional<Timestamp> last;
  const ScoredSubmission* best = nullptr;
  bool any_invalidated = false;
};

bool usable(const ScoredSubmission& s)
{
  return s.record && !s.record->rejected() && s.record->verification != Verification::invalidated;
}

std::string join(const std::vector<std::string>& v, char sep)
{
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) {
      out.push_back(sep);
    }
    out += v[i];
  }
  return out;
}

} // namespace

std::vector<LeaderboardRow> compute_leaderboard(const LeaderboardInput& input)
{
  std::map<std::string, TeamTally> teams;
  const bool latest = input.mode == LeaderboardMode::latest;
  for (const auto& s : input.submissions) {
    if (s.record && s.record->evaluator_version != input.evaluator_version) {
      throw Error(ErrorKind::validation, "score record from evaluator version " +
                                           std::to_string(s.record->evaluator_version) +
                                           " in a version " + std::to_string(input.evaluator_version) +
                                           " leaderboard");
    }
    auto& t = teams[s.team_id];
    t.team_id = s.team_id;
    ++t.count;
    if (!t.last || *t.last < s.received_at) {
      t.last = s.received_at;
    }
    if (s.record && s.record->verification == Verification::invalidated) {
      t.any_invalidated = true;
    }
    if (!usable(s)) {
      continue;
    }
    if (!t.best) {
      t.best = &s;
      continue;
    }
    const auto& cur = *t.best;
    if (latest) {
      if (std::tie(cur.received_at, cur.submission_id) < std::tie(s.received_at, s.submission_id)) {
        t.best = &s;
      }
      continue;
    }
    const double a = *s.record->primary_score;
    const double b = *cur.record->primary_score;
    bool better = a > b;
    if (a == b) {
      if (input.metric == Metric::instance_log && s.record->total_runtime_s() != cur.record->total_runtime_s()) {
        better = s.record->total_runtime_s() < cur.record->total_runtime_s();
      } else {
        better = std::tie(s.received_at, s.submission_id) < std::tie(cur.received_at, cur.submission_id);
      }
    }
    if (better) {
      t.best = &s;
    }
  }

  std::vector<TeamTally> order;
  for (auto& [id, t] : teams) {
    t.display_name = input.display_name ? input.display_name(id) : id;
    order.push_back(std::move(t));
  }
  const bool by_runtime = input.metric == Metric::instance_log;
  std::sort(order.begin(), order.end(), [&](const TeamTally& x, const TeamTally& y) {
    if (!!x.best != !!y.best) {
      return !!x.best;
    }
    if (x.best) {
      const double sx = *x.best->record->primary_score;
      const double sy = *y.best->record->primary_score;
      if (sx != sy) {
        return sx > sy;
      }
      if (by_runtime) {
        const double rx = x.best->record->total_runtime_s();
        const double ry = y.best->record->total_runtime_s();
        if (rx != ry) {
          return rx < ry;
        }
      }
      if (x.best->received_at != y.best->received_at) {
        return x.best->received_at < y.best->received_at;
      }
    }
    return x.display_name < y.display_name;
  });

  std::vector<LeaderboardRow> rows;
  rows.reserve(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& t = order[i];
    LeaderboardRow row;
    row.rank = static_cast<int>(i + 1);
    row.display_name = t.display_name;
    row.submission_count = t.count;
    row.last_submission_at = t.last;
    if (const auto it = input.badges.find(t.team_id); it != input.badges.end()) {
      row.badges = it->second;
    }
    if (t.best) {
      row.best_score = t.best->record->primary_score;
      row.verification_flag = std::string(to_string(t.best->record->verification));
    } else {
      row.verification_flag = t.any_invalidated ? "invalidated" : "rejected";
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_score(double score)
{
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", round_score(score));
  return buf;
}

std::string render_csv(const LeaderboardSnapshot& snapshot)
{
  std::string out = "rank,team,score,submissions,last_submission_utc,badges,flags\n";
  for (const auto& r : snapshot.rows) {
    out += csv::join_row({std::to_string(r.rank), r.display_name,
                          r.best_score ? format_score(*r.best_score) : "", std::to_string(r.submission_count),
                          r.last_submission_at ? format_rfc3339(*r.last_submission_at) : "",
                          join(r.badges, ';'), r.verification_flag});
    out.push_back('\n');
  }
  return out;
}

json render_json(const LeaderboardSnapshot& s)
{
  json rows = json::array();
  for (const auto& r : s.rows) {
    rows.push_back({{"rank", r.rank},
                    {"display_name", r.display_name},
                    {"best_score", r.best_score ? json(round_score(*r.best_score)) : json()},
                    {"submission_count", r.submission_count},
                    {"last_submission_at", r.last_submission_at ? json(format_rfc3339(*r.last_submission_at)) : json()},
                    {"badges", r.badges},
                    {"verification_flag", r.verification_flag}});
  }
  json out = {{"snapshot_id", s.snapshot_id},
              {"created_at", format_rfc3339(s.created_at)},
              {"stage_id", s.stage_id},
              {"evaluator_version", s.evaluator_version},
              {"frozen", s.frozen},
              {"freeze_label", s.frozen ? json(s.freeze_label) : json()},
              {"rows", std::move(rows)}};
  if (s.frozen) {
    out["frozen_from"] = s.frozen_from;
  }
  return out;
}

namespace {

// Storage form keeps full precision so reloads compare equal.
json storage_json(const LeaderboardSnapshot& s)
{
  auto j = render_json(s);
  for (std::size_t i = 0; i < s.rows.size(); ++i) {
    const auto& r = s.rows[i];
    j["rows"][i]["best_score"] = r.best_score ? json(*r.best_score) : json();
  }
  return j;
}

} // namespace

LeaderboardSnapshot snapshot_from_json(const json& j)
{
  LeaderboardSnapshot s;
  s.snapshot_id = j.at("snapshot_id").get<std::uint64_t>();
  s.created_at = parse_rfc3339(j.at("created_at").get<std::string>());
  s.stage_id = j.at("stage_id").get<std::string>();
  s.evaluator_version = j.at("evaluator_version").get<int>();
  s.frozen = j.at("frozen").get<bool>();
  if (s.frozen) {
    s.freeze_label = j.at("freeze_label").get<std::string>();
    s.frozen_from = j.value("frozen_from", std::uint64_t{0});
  }
  for (const auto& rj : j.at("rows")) {
    LeaderboardRow r;
    r.rank = rj.at("rank").get<int>();
    r.display_name = rj.at("display_name").get<std::string>();
    if (!rj.at("best_score").is_null()) {
      r.best_score = rj.at("best_score").get<double>();
    }
    r.submission_count = rj.at("submission_count").get<int>();
    if (!rj.at("last_submission_at").is_null()) {
      r.last_submission_at = parse_rfc3339(rj.at("last_submission_at").get<std::string>());
    }
    r.badges = rj.at("badges").get<std::vector<std::string>>();
    r.verification_flag = rj.at("verification_flag").get<std::string>();
    s.rows.push_back(std::move(r));
  }
  return s;
}

std::string snapshot_bytes(const LeaderboardSnapshot& snapshot)
{
  return storage_json(snapshot).dump() + "\n";
}

std::string snapshot_digest(const LeaderboardSnapshot& snapshot)
{
  return sha256_hex(snapshot_bytes(snapshot));
}

} // namespace arena
