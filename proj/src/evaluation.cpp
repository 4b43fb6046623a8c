#include "arena/evaluation.hpp"

#include "arena/csv.hpp"
#include "arena/digest.hpp"
#include "arena/error.hpp"
#include "arena/metrics.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>

namespace arena {

std::string_view to_string(InstanceStatus s)
{
  switch (s) {
  case InstanceStatus::solved: return "solved";
  case InstanceStatus::infeasible: return "infeasible";
  case InstanceStatus::unsolved: return "unsolved";
  }
  return "unsolved";
}

std::string_view to_string(Verification v)
{
  switch (v) {
  case Verification::pending: return "pending";
  case Verification::verified: return "verified";
  case Verification::invalidated: return "invalidated";
  }
  return "pending";
}

Verification parse_verification(std::string_view s)
{
  for (auto v : {Verification::pending, Verification::verified, Verification::invalidated}) {
    if (to_string(v) == s) {
      return v;
    }
  }
  throw Error(ErrorKind::parse, "unknown verification status '" + std::string(s) + "'");
}

double ScoreRecord::total_runtime_s() const
{
  const auto it = aux.find("total_runtime_s");
  return it == aux.end() ? 0.0 : it->get<double>();
}

namespace {

[[noreturn]] void row_error(std::size_t line, const std::string& what)
{
  throw Error(ErrorKind::parse, "line " + std::to_string(line) + ": " + what);
}

std::optional<long long> parse_int(std::string_view s)
{
  long long v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) {
    return std::nullopt;
  }
  return v;
}

std::optional<double> parse_real(std::string_view s)
{
  double v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc{} || p != s.data() + s.size() || !std::isfinite(v)) {
    return std::nullopt;
  }
  return v;
}

std::string format_real(double v)
{
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

} // namespace

RankingSubmission parse_ranking_submission(std::string_view text, int k)
{
  const auto table = csv::parse_with_header(text, {"user_id", "item_id", "rank"});
  // user -> rank -> item
  std::map<std::string, std::map<long long, std::string>> by_user;
  std::map<std::string, std::set<std::string>> items;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    const auto line = table.lines[i];
    if (row[0].empty() || row[1].empty()) {
      row_error(line, "user_id and item_id must not be empty");
    }
    const auto rank = parse_int(row[2]);
    if (!rank || *rank < 1 || *rank > k) {
      row_error(line, "rank must be an integer in 1.." + std::to_string(k));
    }
    if (!by_user[row[0]].emplace(*rank, row[1]).second) {
      row_error(line, "duplicate rank " + row[2] + " for user " + row[0]);
    }
    if (!items[row[0]].insert(row[1]).second) {
      row_error(line, "duplicate item " + row[1] + " for user " + row[0]);
    }
  }
  RankingSubmission sub;
  for (auto& [user, ranks] : by_user) {
    auto& list = sub.lists[user];
    long long expected = 1;
    for (auto& [rank, item] : ranks) {
      if (rank != expected++) {
        throw Error(ErrorKind::parse, "ranks for user " + user + " must be contiguous from 1");
      }
      list.push_back(std::move(item));
    }
  }
  return sub;
}

GroundTruth GroundTruth::from_interactions(std::vector<Interaction> interactions)
{
  GroundTruth gt;
  for (const auto& x : interactions) {
    gt.users.insert(x.user_id);
    if (x.positive) {
      gt.relevant[x.user_id].insert(x.item_id);
    }
    if (x.split == Split::test) {
      gt.test_item_universe.insert(x.item_id);
    }
  }
  gt.interactions = std::move(interactions);
  return gt;
}

std::set<std::string> GroundTruth::effective_relevant(const std::string& user, RelevanceUniverse universe) const
{
  const auto it = relevant.find(user);
  if (it == relevant.end()) {
    return {};
  }
  if (universe == RelevanceUniverse::all_interactions) {
    return it->second;
  }
  std::set<std::string> out;
  for (const auto& item : it->second) {
    if (test_item_universe.count(item)) {
      out.insert(item);
    }
  }
  return out;
}

GroundTruth parse_ground_truth(std::string_view text)
{
  const auto table = csv::parse_with_header(text, {"user_id", "item_id", "label", "split"});
  std::vector<Interaction> interactions;
  interactions.reserve(table.rows.size());
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    Interaction x;
    x.user_id = row[0];
    x.item_id = row[1];
    if (x.user_id.empty() || x.item_id.empty()) {
      row_error(table.lines[i], "user_id and item_id must not be empty");
    }
    if (row[2] == "1") {
      x.positive = true;
    } else if (row[2] != "0") {
      row_error(table.lines[i], "label must be 0 or 1");
    }
    if (row[3] == "test") {
      x.split = Split::test;
    } else if (row[3] != "train") {
      row_error(table.lines[i], "split must be train or test");
    }
    interactions.push_back(std::move(x));
  }
  return GroundTruth::from_interactions(std::move(interactions));
}

InstanceLog parse_instance_log(std::string_view text)
{
  const auto table = csv::parse_with_header(text, {"instance", "status", "objective", "runtime_s"});
  InstanceLog log;
  std::set<std::string> names;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    const auto line = table.lines[i];
    InstanceResult r;
    r.instance = row[0];
    if (r.instance.empty()) {
      row_error(line, "instance must not be empty");
    }
    if (!names.insert(r.instance).second) {
      row_error(line, "duplicate instance " + r.instance);
    }
    if (row[1] == "solved") {
      r.status = InstanceStatus::solved;
    } else if (row[1] == "infeasible") {
      r.status = InstanceStatus::infeasible;
    } else if (row[1] == "unsolved") {
      r.status = InstanceStatus::unsolved;
    } else {
      row_error(line, "status must be solved, infeasible or unsolved");
    }
    if (r.status == InstanceStatus::solved) {
      r.objective = parse_real(row[2]);
      if (!r.objective) {
        row_error(line, "solved rows need a finite objective");
      }
    } else if (!row[2].empty()) {
      row_error(line, "objective must be empty unless solved");
    }
    const auto runtime = parse_real(row[3]);
    if (!runtime) {
      row_error(line, "runtime_s must be a finite number");
    }
    if (*runtime < 0) {
      row_error(line, "runtime_s must be non-negative");
    }
    r.runtime_s = *runtime;
    log.rows.push_back(std::move(r));
  }
  return log;
}

std::string write_instance_log(const InstanceLog& log)
{
  std::string out = "instance,status,objective,runtime_s\n";
  for (const auto& r : log.rows) {
    out += csv::join_row({r.instance, std::string(to_string(r.status)),
                          r.objective ? format_real(*r.objective) : "", format_real(r.runtime_s)});
    out.push_back('\n');
  }
  return out;
}

ScoreRecord evaluate_map(const RankingSubmission& sub, const GroundTruth& gt, const EvaluatorSpec& spec)
{
  if (spec.metric != Metric::map_at_k) {
    throw Error(ErrorKind::unprocessable, "evaluator is not map_at_k");
  }
  for (const auto& [user, _] : sub.lists) {
    if (!gt.users.count(user)) {
      throw Error(ErrorKind::unprocessable, "submission references unknown user '" + user + "'");
    }
  }
  std::vector<double> per_user;
  std::string ap_trace;
  for (const auto& user : gt.users) {
    const auto relevant = gt.effective_relevant(user, spec.relevance_universe);
    if (relevant.empty()) {
      continue;
    }
    std::vector<std::string> ranked;
    if (const auto it = sub.lists.find(user); it != sub.lists.end()) {
      ranked = it->second;
    }
    if (spec.list_filter) {
      std::erase_if(ranked, [&](const std::string& item) { return !gt.test_item_universe.count(item); });
    }
    const double ap = ranked.empty()
                        ? 0.0
                        : average_precision<std::string, std::set<std::string>>(
                            ranked, relevant, static_cast<std::size_t>(spec.k));
    per_user.push_back(ap);
    ap_trace += user + "=" + format_real(ap) + "\n";
  }
  ScoreRecord rec;
  rec.evaluator_version = spec.version;
  rec.primary_score = compensated_mean(per_user);
  rec.aux = {{"evaluated_users", per_user.size()},
             {"k", spec.k},
             {"relevance_universe", to_string(spec.relevance_universe)},
             {"ap_digest", sha256_hex(ap_trace)}};
  return rec;
}

double instance_quality(double objective, std::optional<double> best_known, ObjectiveSense sense)
{
  if (!best_known || objective == *best_known) {
    return 1.0;
  }
  // Ratios only make sense for positive objectives; otherwise anything short
  // of the best gets the floor.
  if (!(objective > 0 && *best_known > 0)) {
    const bool better = sense == ObjectiveSense::min ? objective < *best_known : objective > *best_known;
    return better ? 1.0 : kMinQuality;
  }
  const double ratio = sense == ObjectiveSense::min ? *best_known / objective : objective / *best_known;
  if (!std::isfinite(ratio)) {
    return kMinQuality;
  }
  return std::clamp(ratio, kMinQuality, 1.0);
}

ScoreRecord evaluate_instance_log(const InstanceLog& log, const EvaluatorSpec& spec,
                                  const std::map<std::string, double>& best_known)
{
  if (spec.metric != Metric::instance_log) {
    throw Error(ErrorKind::unprocessable, "evaluator is not instance_log");
  }
  std::vector<double> qualities;
  CompensatedSum runtime;
  for (const auto& row : log.rows) {
    const auto* inst = spec.find_instance(row.instance);
    if (!inst) {
      throw Error(ErrorKind::unprocessable, "unknown instance '" + row.instance + "'");
    }
    if (row.runtime_s < 0) {
      throw Error(ErrorKind::unprocessable, "negative runtime for " + row.instance);
    }
    runtime.add(row.runtime_s);
    if (row.status != InstanceStatus::solved) {
      continue;
    }
    if (!row.objective) {
      throw Error(ErrorKind::unprocessable, "solved instance " + row.instance + " has no objective");
    }
    std::optional<double> best;
    if (const auto it = best_known.find(row.instance); it != best_known.end()) {
      best = it->second;
    }
    qualities.push_back(instance_quality(*row.objective, best, inst->sense));
  }
  const double mean_quality = compensated_mean(qualities);
  ScoreRecord rec;
  rec.evaluator_version = spec.version;
  rec.primary_score = static_cast<double>(qualities.size()) + mean_quality;
  rec.aux = {{"solved_count", qualities.size()},
             {"mean_quality", mean_quality},
             {"total_runtime_s", runtime.value()}};
  return rec;
}

void merge_best_known(std::map<std::string, double>& best, const InstanceLog& log, const EvaluatorSpec& spec)
{
  for (const auto& row : log.rows) {
    if (row.status != InstanceStatus::solved || !row.objective) {
      continue;
    }
    const auto* inst = spec.find_instance(row.instance);
    if (!inst) {
      continue;
    }
    auto [it, inserted] = best.emplace(row.instance, *row.objective);
    if (!inserted) {
      const bool better = inst->sense == ObjectiveSense::min ? *row.objective < it->second
                                                             : *row.objective > it->second;
      if (better) {
        it->second = *row.objective;
      }
    }
  }
}

void validate_payload(std::string_view payload, const EvaluatorSpec& spec)
{
  try {
    if (spec.metric == Metric::map_at_k) {
      parse_ranking_submission(payload, spec.k);
    } else {
      const auto log = parse_instance_log(payload);
      for (const auto& row : log.rows) {
        if (!spec.find_instance(row.instance)) {
          throw Error(ErrorKind::parse, "unknown instance '" + row.instance + "'");
        }
      }
    }
  } catch (const Error& e) {
    throw Error(ErrorKind::unprocessable, e.what());
  }
}

ScoreRecord evaluate(std::string_view payload, const EvaluatorSpec& spec, const EvaluationContext& ctx)
{
  ScoreRecord rec;
  try {
    if (spec.metric == Metric::map_at_k) {
      if (!ctx.ground_truth) {
        throw Error(ErrorKind::unprocessable, "no ground truth loaded");
      }
      rec = evaluate_map(parse_ranking_submission(payload, spec.k), *ctx.ground_truth, spec);
    } else {
      static const std::map<std::string, double> none;
      rec = evaluate_instance_log(parse_instance_log(payload), spec, ctx.best_known ? *ctx.best_known : none);
    }
    rec.verification = spec.requires_verification ? Verification::pending : Verification::verified;
  } catch (const Error& e) {
    rec = ScoreRecord{};
    rec.format_error = e.what();
    rec.verification = Verification::verified;
  }
  rec.submission_id = ctx.submission_id;
  rec.evaluator_version = spec.version;
  rec.evaluated_at = ctx.now;
  return rec;
}

} // namespace arena
