#include "arena/config.hpp"

#include "arena/digest.hpp"
#include "arena/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <set>

namespace arena {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(StageKind v)
{
  return v == StageKind::ranking_task ? "ranking_task" : "instance_task";
}
std::string_view to_string(Metric v)
{
  return v == Metric::map_at_k ? "map_at_k" : "instance_log";
}
std::string_view to_string(RelevanceUniverse v)
{
  return v == RelevanceUniverse::all_interactions ? "all_interactions" : "test_only";
}
std::string_view to_string(ObjectiveSense v)
{
  return v == ObjectiveSense::min ? "min" : "max";
}
std::string_view to_string(Visibility v)
{
  return v == Visibility::open ? "public" : "registered";
}
std::string_view to_string(BadgeTrigger v)
{
  switch (v) {
  case BadgeTrigger::first_submission: return "first_submission";
  case BadgeTrigger::first_past_baseline: return "first_past_baseline";
  case BadgeTrigger::custom: return "custom";
  }
  return "custom";
}
std::string_view to_string(LeaderboardMode v)
{
  return v == LeaderboardMode::best ? "best" : "latest";
}

bool is_identifier(std::string_view text)
{
  if (text.empty() || text.size() > 64) {
    return false;
  }
  auto alnum = [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
  };
  if (!alnum(text.front())) {
    return false;
  }
  return std::all_of(text.begin(), text.end(),
                     [&](char c) { return alnum(c) || c == '-' || c == '_' || c == '.'; });
}

const BenchmarkInstance* EvaluatorSpec::find_instance(std::string_view name) const
{
  for (const auto& inst : instances) {
    if (inst.name == name) {
      return &inst;
    }
  }
  return nullptr;
}

const EvaluatorSpec& StageConfig::evaluator(int version) const
{
  for (const auto& spec : evaluator_versions) {
    if (spec.version == version) {
      return spec;
    }
  }
  throw Error(ErrorKind::not_found,
              "stage " + stage_id + " has no evaluator version " + std::to_string(version));
}

const StageConfig* CompetitionConfig::find_stage(std::string_view id) const
{
  for (const auto& s : stages) {
    if (s.stage_id == id) {
      return &s;
    }
  }
  return nullptr;
}

const StageConfig& CompetitionConfig::stage(std::string_view id) const
{
  if (const auto* s = find_stage(id)) {
    return *s;
  }
  throw Error(ErrorKind::not_found, "unknown stage '" + std::string(id) + "'");
}

const ManifestEntry* CompetitionConfig::find_manifest(std::string_view file) const
{
  for (const auto& e : data_manifest) {
    if (e.file == file) {
      return &e;
    }
  }
  return nullptr;
}

namespace {

// Walks a JSON object while tracking the field path for error messages and
// rejecting keys nobody consumed.
class Node {
public:
  Node(const json& value, std::string path) : value_(value), path_(std::move(path)) {}

  [[noreturn]] void fail(const std::string& message) const
  {
    throw Error(ErrorKind::validation, (path_.empty() ? std::string("<root>") : path_) + ": " + message);
  }

  const std::string& path() const { return path_; }
  const json& raw() const { return value_; }

  Node field(const std::string& key) const
  {
    expect_object();
    const auto it = value_.find(key);
    if (it == value_.end()) {
      Node(value_, join(key)).fail("required field missing");
    }
    seen_.insert(key);
    return Node(*it, join(key));
  }

  std::optional<Node> optional_field(const std::string& key) const
  {
    expect_object();
    const auto it = value_.find(key);
    seen_.insert(key);
    if (it == value_.end() || it->is_null()) {
      return std::nullopt;
    }
    return Node(*it, join(key));
  }

  void reject_unknown_keys() const
  {
    for (const auto& [key, _] : value_.items()) {
      if (!seen_.count(key)) {
        Node(value_, join(key)).fail("unknown field");
      }
    }
  }

  std::vector<Node> elements() const
  {
    if (!value_.is_array()) {
      fail("expected an array");
    }
    std::vector<Node> out;
    for (std::size_t i = 0; i < value_.size(); ++i) {
      out.emplace_back(value_[i], path_ + "[" + std::to_string(i) + "]");
    }
    return out;
  }

  std::string str() const
  {
    if (!value_.is_string()) {
      fail("expected a string");
    }
    return value_.get<std::string>();
  }

  std::string identifier() const
  {
    auto s = str();
    if (!is_identifier(s)) {
      fail("'" + s + "' is not a valid identifier ([A-Za-z0-9][A-Za-z0-9._-]{0,63})");
    }
    return s;
  }

  std::int64_t integer() const
  {
    if (!value_.is_number_integer()) {
      fail("expected an integer");
    }
    return value_.get<std::int64_t>();
  }

  double number() const
  {
    if (!value_.is_number()) {
      fail("expected a number");
    }
    return value_.get<double>();
  }

  bool boolean() const
  {
    if (!value_.is_boolean()) {
      fail("expected a boolean");
    }
    return value_.get<bool>();
  }

  Timestamp timestamp() const
  {
    const auto s = str();
    try {
      return parse_rfc3339(s);
    } catch (const Error& e) {
      fail(e.what());
    }
  }

  template <class Enum, std::size_t N>
  Enum choice(const std::array<Enum, N>& options) const
  {
    const auto s = str();
    for (auto opt : options) {
      if (to_string(opt) == s) {
        return opt;
      }
    }
    std::string allowed;
    for (auto opt : options) {
      allowed += (allowed.empty() ? "" : "|") + std::string(to_string(opt));
    }
    fail("'" + s + "' is not one of " + allowed);
  }

private:
  void expect_object() const
  {
    if (!value_.is_object()) {
      fail("expected an object");
    }
  }

  std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json& value_;
  std::string path_;
  mutable std::set<std::string> seen_;
};

EvaluatorSpec parse_evaluator(const Node& node, StageKind kind)
{
  EvaluatorSpec spec;
  spec.version = static_cast<int>(node.field("version").integer());
  spec.metric = node.field("metric").choice(std::array{Metric::map_at_k, Metric::instance_log});
  const auto expected =
    kind == StageKind::ranking_task ? Metric::map_at_k : Metric::instance_log;
  if (spec.metric != expected) {
    node.fail("metric " + std::string(to_string(spec.metric)) + " does not fit a " +
              std::string(to_string(kind)) + " stage");
  }
  if (auto v = node.optional_field("requires_verification")) {
    spec.requires_verification = v->boolean();
  }
  const auto params = node.field("parameters");
  if (spec.metric == Metric::map_at_k) {
    const auto k = params.field("k");
    if (k.integer() < 1) {
      k.fail("k must be >= 1");
    }
    spec.k = static_cast<int>(k.integer());
    if (auto v = params.optional_field("relevance_universe")) {
      spec.relevance_universe =
        v->choice(std::array{RelevanceUniverse::all_interactions, RelevanceUniverse::test_only});
    }
    if (auto v = params.optional_field("list_filter")) {
      spec.list_filter = v->boolean();
    }
    spec.ground_truth = params.field("ground_truth").str();
  } else {
    if (auto v = params.optional_field("benchmark_manifest")) {
      spec.benchmark_manifest = v->str();
    }
    std::set<std::string> names;
    for (const auto& inst_node : params.field("instances").elements()) {
      BenchmarkInstance inst;
      inst.name = inst_node.field("name").str();
      if (inst.name.empty()) {
        inst_node.fail("instance name must not be empty");
      }
      inst.sense = inst_node.field("sense").choice(std::array{ObjectiveSense::min, ObjectiveSense::max});
      if (auto f = inst_node.optional_field("file")) {
        inst.file = f->str();
      }
      inst_node.reject_unknown_keys();
      if (!names.insert(inst.name).second) {
        inst_node.fail("duplicate instance '" + inst.name + "'");
      }
      spec.instances.push_back(std::move(inst));
    }
    if (spec.instances.empty()) {
      params.fail("instances must not be empty");
    }
  }
  params.reject_unknown_keys();
  node.reject_unknown_keys();
  return spec;
}

StageConfig parse_stage(const Node& node)
{
  StageConfig s;
  s.stage_id = node.field("stage_id").identifier();
  s.kind = node.field("kind").choice(std::array{StageKind::ranking_task, StageKind::instance_task});
  s.open = node.field("open").timestamp();
  s.close = node.field("close").timestamp();
  if (!(s.open < s.close)) {
    node.field("close").fail("close must be after open");
  }
  if (auto d = node.optional_field("preliminary_deadline")) {
    s.preliminary_deadline = d->timestamp();
    if (!(s.open < *s.preliminary_deadline && *s.preliminary_deadline < s.close)) {
      d->fail("preliminary_deadline must lie strictly between open and close");
    }
  }
  const auto limit = node.field("daily_submission_limit");
  if (limit.integer() < 1) {
    limit.fail("daily_submission_limit must be >= 1");
  }
  s.daily_submission_limit = static_cast<int>(limit.integer());
  const auto cadence = node.field("aggregation_cadence_s");
  if (cadence.integer() < 1) {
    cadence.fail("aggregation_cadence_s must be >= 1");
  }
  s.aggregation_cadence = Seconds{cadence.integer()};
  if (auto b = node.optional_field("baseline_score")) {
    s.baseline_score = b->number();
  }
  if (auto e = node.optional_field("artifact_extension")) {
    s.artifact_extension = e->str();
  }
  const auto versions = node.field("evaluator_versions");
  for (const auto& ev : versions.elements()) {
    auto spec = parse_evaluator(ev, s.kind);
    if (spec.version != static_cast<int>(s.evaluator_versions.size()) + 1) {
      ev.field("version").fail("evaluator versions must increase by one starting from 1");
    }
    s.evaluator_versions.push_back(std::move(spec));
  }
  if (s.evaluator_versions.empty()) {
    versions.fail("at least one evaluator version is required");
  }
  node.reject_unknown_keys();
  return s;
}

bool is_plain_file_name(std::string_view name)
{
  return !name.empty() && name.find('/') == std::string_view::npos &&
         name.find('\\') == std::string_view::npos && name != "." && name != "..";
}

CompetitionConfig parse_root(const Node& root)
{
  CompetitionConfig c;
  c.competition_id = root.field("competition_id").identifier();
  c.title = root.field("title").str();
  {
    const auto tz = root.field("official_time_zone");
    c.official_time_zone = tz.str();
    if (!is_known_zone(c.official_time_zone)) {
      tz.fail("unknown time zone '" + c.official_time_zone + "'");
    }
  }
  {
    const auto win = root.field("registration_window");
    c.registration_open = win.field("open").timestamp();
    c.registration_close = win.field("close").timestamp();
    if (!(c.registration_open < c.registration_close)) {
      win.field("close").fail("close must be after open");
    }
    win.reject_unknown_keys();
  }
  if (auto url = root.optional_field("discussion_url")) {
    const auto s = url->str();
    if (s.rfind("http://", 0) != 0 && s.rfind("https://", 0) != 0) {
      url->fail("discussion_url must be an http(s) URL");
    }
    c.discussion_url = s;
  }
  if (auto m = root.optional_field("leaderboard_mode")) {
    c.leaderboard_mode = m->choice(std::array{LeaderboardMode::best, LeaderboardMode::latest});
  }
  if (auto cap = root.optional_field("payload_size_cap")) {
    if (cap->integer() < 1) {
      cap->fail("payload_size_cap must be positive");
    }
    c.payload_size_cap = static_cast<std::size_t>(cap->integer());
  }
  if (auto f = root.optional_field("frozen_boards_public")) {
    c.frozen_boards_public = f->boolean();
  }
  if (auto v = root.optional_field("verification")) {
    auto& p = c.verification;
    if (auto x = v->optional_field("map_tolerance")) p.map_tolerance = x->number();
    if (auto x = v->optional_field("objective_tolerance")) p.objective_tolerance = x->number();
    if (auto x = v->optional_field("batch_size")) {
      if (x->integer() < 1) x->fail("batch_size must be >= 1");
      p.batch_size = static_cast<std::size_t>(x->integer());
    }
    if (auto x = v->optional_field("alert_after_failures")) {
      if (x->integer() < 1) x->fail("alert_after_failures must be >= 1");
      p.alert_after_failures = static_cast<int>(x->integer());
    }
    if (auto x = v->optional_field("initial_backoff_s")) p.initial_backoff = Seconds{x->integer()};
    if (auto x = v->optional_field("max_backoff_s")) p.max_backoff = Seconds{x->integer()};
    if (p.map_tolerance < 0 || p.objective_tolerance < 0) {
      v->fail("tolerances must be non-negative");
    }
    if (p.initial_backoff.count() < 0 || p.max_backoff < p.initial_backoff) {
      v->fail("backoff must satisfy 0 <= initial_backoff_s <= max_backoff_s");
    }
    v->reject_unknown_keys();
  }

  const auto stages = root.field("stages");
  for (const auto& sn : stages.elements()) {
    c.stages.push_back(parse_stage(sn));
  }
  if (c.stages.empty()) {
    stages.fail("at least one stage is required");
  }
  for (std::size_t i = 0; i < c.stages.size(); ++i) {
    for (std::size_t j = i + 1; j < c.stages.size(); ++j) {
      const auto& a = c.stages[i];
      const auto& b = c.stages[j];
      if (a.stage_id == b.stage_id) {
        stages.fail("duplicate stage id '" + a.stage_id + "'");
      }
      if (a.open < b.close && b.open < a.close) {
        stages.fail("stages '" + a.stage_id + "' and '" + b.stage_id + "' overlap in time");
      }
    }
  }
  for (std::size_t i = 1; i < c.stages.size(); ++i) {
    if (c.stages[i].open < c.stages[i - 1].open) {
      stages.fail("stages must be ordered by start ('" + c.stages[i].stage_id + "' starts before '" +
                  c.stages[i - 1].stage_id + "')");
    }
  }

  if (auto manifest = root.optional_field("data_manifest")) {
    std::set<std::string> files;
    for (const auto& en : manifest->elements()) {
      ManifestEntry e;
      e.file = en.field("file").str();
      if (!is_plain_file_name(e.file)) {
        en.field("file").fail("file must be a plain file name");
      }
      const auto digest = en.field("sha256");
      e.sha256 = digest.str();
      if (!is_sha256_hex(e.sha256)) {
        digest.fail("not a lowercase hex SHA-256 digest");
      }
      e.visibility = en.field("visibility").choice(std::array{Visibility::open, Visibility::registered});
      en.reject_unknown_keys();
      if (!files.insert(e.file).second) {
        en.fail("duplicate file '" + e.file + "'");
      }
      c.data_manifest.push_back(std::move(e));
    }
  }
  // Holdout data must never be distributable.
  for (std::size_t i = 0; i < c.stages.size(); ++i) {
    for (const auto& ev : c.stages[i].evaluator_versions) {
      if (!ev.ground_truth.empty() && c.find_manifest(ev.ground_truth)) {
        stages.fail("stages[" + std::to_string(i) + "] ground truth '" + ev.ground_truth +
                    "' must not be listed in data_manifest");
      }
    }
  }

  if (auto rules = root.optional_field("badge_rules")) {
    std::set<std::pair<std::string, std::string>> ids;
    for (const auto& rn : rules->elements()) {
      BadgeRule r;
      r.badge_id = rn.field("badge_id").identifier();
      r.trigger = rn.field("trigger").choice(std::array{
        BadgeTrigger::first_submission, BadgeTrigger::first_past_baseline, BadgeTrigger::custom});
      if (auto p = rn.optional_field("predicate")) {
        r.predicate = p->str();
      }
      if (r.trigger == BadgeTrigger::custom && r.predicate.empty()) {
        rn.fail("custom badge rules need a predicate name");
      }
      if (auto st = rn.optional_field("stage_id")) {
        r.stage_id = st->str();
        if (!c.find_stage(r.stage_id)) {
          st->fail("unknown stage '" + r.stage_id + "'");
        }
      }
      rn.reject_unknown_keys();
      if (!ids.insert({r.badge_id, r.stage_id}).second) {
        rn.fail("duplicate badge rule '" + r.badge_id + "'");
      }
      c.badge_rules.push_back(std::move(r));
    }
  }
  root.reject_unknown_keys();
  return c;
}

json evaluator_to_json(const EvaluatorSpec& spec)
{
  json params = json::object();
  if (spec.metric == Metric::map_at_k) {
    params["k"] = spec.k;
    params["relevance_universe"] = to_string(spec.relevance_universe);
    params["list_filter"] = spec.list_filter;
    params["ground_truth"] = spec.ground_truth;
  } else {
    if (!spec.benchmark_manifest.empty()) {
      params["benchmark_manifest"] = spec.benchmark_manifest;
    }
    json insts = json::array();
    for (const auto& i : spec.instances) {
      json j = {{"name", i.name}, {"sense", to_string(i.sense)}};
      if (!i.file.empty()) {
        j["file"] = i.file;
      }
      insts.push_back(std::move(j));
    }
    params["instances"] = std::move(insts);
  }
  return {{"version", spec.version},
          {"metric", to_string(spec.metric)},
          {"requires_verification", spec.requires_verification},
          {"parameters", std::move(params)}};
}

} // namespace

CompetitionConfig load_config(std::string_view source)
{
  json doc;
  try {
    doc = json::parse(source.begin(), source.end());
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::parse, std::string("config is not valid JSON: ") + e.what());
  }
  return parse_root(Node(doc, ""));
}

CompetitionConfig load_config_file(const fs::path& path)
{
  return load_config(read_file(path));
}

std::string serialize_config(const CompetitionConfig& c)
{
  json stages = json::array();
  for (const auto& s : c.stages) {
    json j = {{"stage_id", s.stage_id},
              {"kind", to_string(s.kind)},
              {"open", format_rfc3339(s.open)},
              {"close", format_rfc3339(s.close)},
              {"daily_submission_limit", s.daily_submission_limit},
              {"aggregation_cadence_s", s.aggregation_cadence.count()},
              {"artifact_extension", s.artifact_extension}};
    if (s.preliminary_deadline) {
      j["preliminary_deadline"] = format_rfc3339(*s.preliminary_deadline);
    }
    if (s.baseline_score) {
      j["baseline_score"] = *s.baseline_score;
    }
    json evs = json::array();
    for (const auto& ev : s.evaluator_versions) {
      evs.push_back(evaluator_to_json(ev));
    }
    j["evaluator_versions"] = std::move(evs);
    stages.push_back(std::move(j));
  }
  json manifest = json::array();
  for (const auto& e : c.data_manifest) {
    manifest.push_back({{"file", e.file}, {"sha256", e.sha256}, {"visibility", to_string(e.visibility)}});
  }
  json badges = json::array();
  for (const auto& r : c.badge_rules) {
    json j = {{"badge_id", r.badge_id}, {"trigger", to_string(r.trigger)}};
    if (!r.predicate.empty()) {
      j["predicate"] = r.predicate;
    }
    if (!r.stage_id.empty()) {
      j["stage_id"] = r.stage_id;
    }
    badges.push_back(std::move(j));
  }
  const auto& v = c.verification;
  json doc = {
    {"competition_id", c.competition_id},
    {"title", c.title},
    {"official_time_zone", c.official_time_zone},
    {"registration_window",
     {{"open", format_rfc3339(c.registration_open)}, {"close", format_rfc3339(c.registration_close)}}},
    {"leaderboard_mode", to_string(c.leaderboard_mode)},
    {"payload_size_cap", c.payload_size_cap},
    {"frozen_boards_public", c.frozen_boards_public},
    {"verification",
     {{"map_tolerance", v.map_tolerance},
      {"objective_tolerance", v.objective_tolerance},
      {"batch_size", v.batch_size},
      {"alert_after_failures", v.alert_after_failures},
      {"initial_backoff_s", v.initial_backoff.count()},
      {"max_backoff_s", v.max_backoff.count()}}},
    {"stages", std::move(stages)},
    {"data_manifest", std::move(manifest)},
    {"badge_rules", std::move(badges)},
  };
  if (c.discussion_url) {
    doc["discussion_url"] = *c.discussion_url;
  }
  return doc.dump(2) + "\n";
}

std::optional<std::string> active_stage(const CompetitionConfig& config, Timestamp now)
{
  for (const auto& s : config.stages) {
    if (s.contains(now)) {
      return s.stage_id;
    }
  }
  return std::nullopt;
}

void check_data_storage(const CompetitionConfig& config, const fs::path& data_root)
{
  for (const auto& s : config.stages) {
    for (const auto& ev : s.evaluator_versions) {
      std::vector<std::string> files;
      if (!ev.ground_truth.empty()) {
        files.push_back(ev.ground_truth);
      }
      if (!ev.benchmark_manifest.empty()) {
        files.push_back(ev.benchmark_manifest);
      }
      for (const auto& inst : ev.instances) {
        if (!inst.file.empty()) {
          files.push_back(inst.file);
        }
      }
      for (const auto& f : files) {
        if (!fs::is_regular_file(data_root / f)) {
          throw Error(ErrorKind::validation, "stages." + s.stage_id + ".evaluator_versions[" +
                                               std::to_string(ev.version - 1) + "]: '" + f +
                                               "' not found in data storage");
        }
      }
    }
  }
  for (const auto& e : config.data_manifest) {
    if (!fs::is_regular_file(data_root / e.file)) {
      throw Error(ErrorKind::validation, "data_manifest: '" + e.file + "' not found in data storage");
    }
  }
}

} // namespace arena
