#include "arena/aggregator.hpp"
#include "arena/error.hpp"
#include "world.hpp"

#include <gtest/gtest.h>

#include <thread>

using namespace arena;
using namespace arena::test;
using namespace std::chrono_literals;

namespace {

std::vector<std::string> order(const LeaderboardSnapshot& s)
{
  std::vector<std::string> out;
  for (const auto& r : s.rows) out.push_back(r.display_name);
  return out;
}

nlohmann::json no_verification_config()
{
  auto j = base_config();
  for (auto& v : j["stages"][0]["evaluator_versions"]) v["requires_verification"] = false;
  return j;
}

} // namespace

TEST(Aggregator, QuiescentCyclePublishesNothing)
{
  World w;
  const auto r = w.aggregator->run_cycle();
  EXPECT_TRUE(r.published.empty());
  EXPECT_EQ(w.aggregator->latest("stage1"), nullptr);
  w.team("Owls");
  w.submit(w.registry->team_for_token("stage1", "Owls").value(), generalizer_payload());
  EXPECT_EQ(w.aggregator->run_cycle().published.size(), 1u);
  EXPECT_TRUE(w.aggregator->run_cycle().published.empty());
}

TEST(Aggregator, NewBestUpdatesBoard)
{
  World w;
  const auto a = w.team("Owls");
  const auto b = w.team("Lynx");
  w.submit(a, generalizer_payload());
  w.submit(b, memorizer_payload());
  w.aggregator->run_cycle();
  auto snap = w.aggregator->latest("stage1");
  EXPECT_EQ(order(*snap), (std::vector<std::string>{"Lynx", "Owls"}));
  const double v1_best = *snap->rows[0].best_score;
  EXPECT_NEAR(v1_best, static_cast<double>(oracle_map(twist_holdout(),
                                                      {{"u1", {"old", "new"}}, {"u2", {"old", "x", "y", "fresh"}}}, 10, false)),
              1e-12);
  // Owls submit a perfect list.
  w.clock.advance(1s);
  w.submit(a, ranking_csv({{"u1", {"old", "new"}}, {"u2", {"old", "fresh"}}}));
  const auto r = w.aggregator->run_cycle();
  ASSERT_EQ(r.published.size(), 1u);
  snap = w.aggregator->latest("stage1");
  EXPECT_EQ(order(*snap), (std::vector<std::string>{"Owls", "Lynx"}));
  EXPECT_EQ(*snap->rows[0].best_score, 1.0);
  EXPECT_EQ(snap->rows[0].submission_count, 2);
}

TEST(Aggregator, FormatErrorsCountButDoNotScore)
{
  World w;
  const auto a = w.team("Owls");
  w.submit(a, "user_id,item_id,rank\nghost,a,1\n");
  w.aggregator->run_cycle();
  const auto snap = w.aggregator->latest("stage1");
  ASSERT_EQ(snap->rows.size(), 1u);
  EXPECT_EQ(snap->rows[0].verification_flag, "rejected");
  EXPECT_EQ(snap->rows[0].submission_count, 1);
  EXPECT_FALSE(w.aggregator->record(1)->format_error.empty());
}

TEST(Aggregator, BadgesOncePerStage)
{
  World w;
  const auto a = w.team("Owls");
  const auto b = w.team("Lynx");
  w.submit(b, ranking_csv({{"u1", {"zzz"}}}));  // first, scores 0 < baseline
  w.clock.advance(1s);
  w.submit(a, generalizer_payload());           // past baseline, later
  w.clock.advance(1s);
  w.submit(b, memorizer_payload());             // past baseline, latest
  const auto r = w.aggregator->run_cycle();
  ASSERT_EQ(r.awards.size(), 2u);
  std::map<std::string, std::string> who;
  for (const auto& aw : r.awards) who[aw.badge_id] = aw.display_name;
  EXPECT_EQ(who["first-submission"], "Lynx");
  EXPECT_EQ(who["past-baseline"], "Owls");
  w.clock.advance(1s);
  w.submit(a, memorizer_payload());
  EXPECT_TRUE(w.aggregator->run_cycle().awards.empty());
  const auto snap = w.aggregator->latest("stage1");
  for (const auto& row : snap->rows) {
    EXPECT_EQ(row.badges.size(), 1u) << row.display_name;
  }
}

TEST(Aggregator, NoBaselineNoBadge)
{
  auto j = base_config();
  j["stages"][0].erase("baseline_score");
  World w(j);
  w.submit(w.team("Owls"), memorizer_payload());
  const auto r = w.aggregator->run_cycle();
  ASSERT_EQ(r.awards.size(), 1u);
  EXPECT_EQ(r.awards[0].badge_id, "first-submission");
}

TEST(Aggregator, CustomAndGrantedBadges)
{
  auto j = base_config();
  j["badge_rules"].push_back({{"badge_id", "creative-name"}, {"trigger", "custom"}, {"predicate", "long_name"}});
  World w(j);
  w.aggregator->register_badge_predicate("long_name", [](const BadgeContext& ctx) {
    std::vector<std::string> out;
    for (const auto& s : ctx.submissions) {
      if (ctx.registry.resolve_display_name(s.team_id, ctx.stage.stage_id).size() > 6) out.push_back(s.team_id);
    }
    return out;
  });
  w.submit(w.team("Owls"), memorizer_payload());
  w.submit(w.team("Wanderers"), generalizer_payload());
  const auto r = w.aggregator->run_cycle();
  int creative = 0;
  for (const auto& a : r.awards) creative += a.badge_id == "creative-name" && a.display_name == "Wanderers";
  EXPECT_EQ(creative, 1);
  EXPECT_TRUE(w.aggregator->run_cycle().awards.empty());

  EXPECT_EQ(w.aggregator->grant_badge("stage1", "mvp", "owls").display_name, "Owls");
  EXPECT_THROW(w.aggregator->grant_badge("stage1", "mvp", "Owls"), Error);
  EXPECT_THROW(w.aggregator->grant_badge("stage1", "mvp", "Nobody"), Error);
  w.aggregator->run_cycle();
  const auto snap = w.aggregator->latest("stage1");
  bool found = false;
  for (const auto& row : snap->rows) {
    if (row.display_name == "Owls") found = std::count(row.badges.begin(), row.badges.end(), "mvp") == 1;
  }
  EXPECT_TRUE(found);
}

TEST(Aggregator, FreezeIsImmutableAndUnique)
{
  World w;
  EXPECT_THROW(w.aggregator->freeze("stage1", "part-1"), Error);  // nothing live yet
  const auto a = w.team("Owls");
  w.submit(a, generalizer_payload());
  w.aggregator->run_cycle();
  const auto id = w.aggregator->freeze("stage1", "part-1");
  const auto bytes = snapshot_bytes(*w.aggregator->frozen("part-1"));
  EXPECT_EQ(w.aggregator->snapshot(id)->freeze_label, "part-1");
  try {
    w.aggregator->freeze("stage1", "part-1");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::conflict);
  }
  EXPECT_THROW(w.aggregator->freeze("stage1", "bad label"), Error);
  for (int i = 0; i < 100; ++i) {
    w.clock.advance(1s);
    if (i % 20 == 0) w.submit(a, memorizer_payload() + "\n" + std::string(static_cast<std::size_t>(i), '\n'));
    w.aggregator->run_cycle();
  }
  EXPECT_EQ(snapshot_bytes(*w.aggregator->frozen("part-1")), bytes);
  EXPECT_EQ(snapshot_bytes(*w.aggregator->snapshot(id)), bytes);
}

TEST(Aggregator, TwistFlipsBoardAndFreezesOldOne)
{
  World w;
  const auto mem = w.team("Memo");
  const auto gen = w.team("Gene");
  w.submit(mem, memorizer_payload());
  w.submit(gen, generalizer_payload());
  w.aggregator->run_cycle();
  EXPECT_EQ(order(*w.aggregator->latest("stage1")), (std::vector<std::string>{"Memo", "Gene"}));

  EXPECT_THROW(w.aggregator->apply_twist("stage1", 3), Error);
  const auto r = w.aggregator->apply_twist("stage1", 2);
  EXPECT_EQ(r.freeze_label, "stage1-v1");
  EXPECT_EQ(r.rescored, 2u);
  EXPECT_EQ(w.aggregator->current_version("stage1"), 2);
  EXPECT_THROW(w.aggregator->apply_twist("stage1", 3), Error);  // no v3 configured

  w.aggregator->run_cycle();
  const auto live = w.aggregator->latest("stage1");
  EXPECT_EQ(live->evaluator_version, 2);
  EXPECT_EQ(order(*live), (std::vector<std::string>{"Gene", "Memo"}));
  const auto frozen = w.aggregator->frozen("stage1-v1");
  EXPECT_EQ(frozen->evaluator_version, 1);
  EXPECT_EQ(order(*frozen), (std::vector<std::string>{"Memo", "Gene"}));
  EXPECT_EQ(w.aggregator->record(1)->evaluator_version, 2);
  EXPECT_EQ(w.aggregator->record(1, 1)->evaluator_version, 1);
}

TEST(Aggregator, TwistWithNothingCached)
{
  World w;
  const auto r = w.aggregator->apply_twist("stage1", 2);
  EXPECT_FALSE(r.frozen_snapshot_id);
  EXPECT_EQ(r.rescored, 0u);
  const auto c = w.aggregator->run_cycle();
  ASSERT_EQ(c.published.size(), 1u);
  EXPECT_TRUE(c.published[0]->rows.empty());
  EXPECT_EQ(c.published[0]->evaluator_version, 2);
}

TEST(Aggregator, VerificationInvalidatesAndFallsBack)
{
  World w;
  const auto a = w.team("Owls");
  w.submit(a, generalizer_payload());
  w.clock.advance(1s);
  w.submit(a, memorizer_payload());
  w.aggregator->run_cycle();
  const auto before = w.aggregator->latest("stage1");
  EXPECT_EQ(before->rows[0].verification_flag, "pending");
  const double best = *before->rows[0].best_score;

  // The verifier disagrees with the memorizer submission only.
  auto hook = [](const Submission& s, const EvaluatorSpec&) {
    VerifierResult r;
    r.ok = true;
    r.score = s.submission_id == 2 ? 0.0 : std::optional<double>();
    return r;
  };
  RecomputeVerifier honest([&](const std::string& f) -> const GroundTruth& { return w.aggregator->ground_truth(f); });
  auto mixed = [&](const Submission& s, const EvaluatorSpec& spec) {
    return s.submission_id == 2 ? hook(s, spec) : honest(s, spec);
  };
  EXPECT_EQ(w.aggregator->verify_drain("stage1", mixed), 2u);
  EXPECT_EQ(w.aggregator->verify_drain("stage1", mixed), 0u);  // in flight
  w.aggregator->run_cycle();
  const auto after = w.aggregator->latest("stage1");
  EXPECT_EQ(w.aggregator->record(2)->verification, Verification::invalidated);
  EXPECT_EQ(w.aggregator->record(1)->verification, Verification::verified);
  EXPECT_LT(*after->rows[0].best_score, best);
  EXPECT_EQ(*after->rows[0].best_score, *w.aggregator->record(1)->primary_score);
  EXPECT_EQ(after->rows[0].verification_flag, "verified");
}

TEST(Aggregator, VerificationRetriesWithBackoffAndAlerts)
{
  World w;
  const auto a = w.team("Owls");
  w.submit(a, generalizer_payload());
  w.aggregator->run_cycle();
  int calls = 0;
  RecomputeVerifier honest([&](const std::string& f) -> const GroundTruth& { return w.aggregator->ground_truth(f); });
  auto flaky = [&](const Submission& s, const EvaluatorSpec& spec) {
    return ++calls <= 2 ? VerifierResult::failure("verifier timed out") : honest(s, spec);
  };
  EXPECT_EQ(w.aggregator->verify_drain("stage1", flaky), 1u);
  w.aggregator->run_cycle();
  EXPECT_EQ(w.aggregator->verification_state(1).failures, 1);
  EXPECT_EQ(w.aggregator->verify_drain("stage1", flaky), 0u);  // backing off 60 s
  w.clock.advance(60s);
  EXPECT_EQ(w.aggregator->verify_drain("stage1", flaky), 1u);
  w.aggregator->run_cycle();
  EXPECT_EQ(w.aggregator->verification_state(1).failures, 2);
  w.clock.advance(119s);
  EXPECT_EQ(w.aggregator->verify_drain("stage1", flaky), 0u);  // second backoff is 120 s
  w.clock.advance(1s);
  EXPECT_EQ(w.aggregator->verify_drain("stage1", flaky), 1u);
  w.aggregator->run_cycle();
  EXPECT_EQ(w.aggregator->record(1)->verification, Verification::verified);
  EXPECT_EQ(calls, 3);
  EXPECT_TRUE(w.aggregator->alerts().empty());
}

TEST(Aggregator, AlertAfterThreeFailures)
{
  World w;
  w.submit(w.team("Owls"), generalizer_payload());
  w.aggregator->run_cycle();
  auto broken = [](const Submission&, const EvaluatorSpec&) -> VerifierResult { throw std::runtime_error("crash"); };
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(w.aggregator->verify_drain("stage1", broken), 1u);
    w.aggregator->run_cycle();
    w.clock.advance(3600s);
  }
  EXPECT_EQ(w.aggregator->alerts().size(), 1u);
  EXPECT_EQ(w.aggregator->record(1)->verification, Verification::pending);
}

TEST(Aggregator, InstanceBestKnownIsRelative)
{
  World w;
  w.clock.set(at("2026-03-02T12:00:00Z"));
  const auto a = w.team("Alpha");
  const auto b = w.team("Beta");
  const std::string head = "instance,status,objective,runtime_s\n";
  w.submit(a, head + "inst-a,solved,50,1\n", "stage2");
  w.aggregator->run_cycle();
  EXPECT_EQ(*w.aggregator->record(1)->primary_score, 2.0);  // alone: quality 1
  w.submit(b, head + "inst-a,solved,40,1\n", "stage2");
  w.aggregator->run_cycle();
  EXPECT_DOUBLE_EQ(*w.aggregator->record(1)->primary_score, 1.8);
  EXPECT_EQ(*w.aggregator->record(2)->primary_score, 2.0);
  const auto snap = w.aggregator->latest("stage2");
  EXPECT_EQ(order(*snap), (std::vector<std::string>{"Beta-2", "Alpha-2"}));
}

TEST(Aggregator, InvalidatedClaimLeavesBestKnown)
{
  World w;
  w.clock.set(at("2026-03-02T12:00:00Z"));
  const auto a = w.team("Alpha");
  const auto b = w.team("Beta");
  const std::string head = "instance,status,objective,runtime_s\n";
  w.submit(a, head + "inst-a,solved,50,1\n", "stage2");
  w.submit(b, head + "inst-a,solved,40,1\n", "stage2");
  w.aggregator->run_cycle();
  // Beta's re-run only reaches 50.
  auto rerun = [](const Submission& s, const EvaluatorSpec&) {
    VerifierResult r;
    r.ok = true;
    r.log = InstanceLog{{{"inst-a", InstanceStatus::solved, 50.0, 1.0}}};
    (void)s;
    return r;
  };
  w.aggregator->verify_drain("stage2", rerun);
  w.aggregator->run_cycle();
  EXPECT_EQ(w.aggregator->record(2)->verification, Verification::invalidated);
  EXPECT_EQ(w.aggregator->record(1)->verification, Verification::verified);
  EXPECT_EQ(*w.aggregator->record(1)->primary_score, 2.0);
  const auto snap = w.aggregator->latest("stage2");
  EXPECT_EQ(order(*snap), (std::vector<std::string>{"Alpha-2", "Beta-2"}));
  EXPECT_EQ(snap->rows[1].verification_flag, "invalidated");
}

TEST(Aggregator, PublishesCsvFiles)
{
  TempDir dir;
  World w(base_config(), dir.path());
  const auto a = w.team("Owls");
  w.submit(a, generalizer_payload());
  w.aggregator->run_cycle();
  const auto csv = *w.aggregator->published_csv("stage1");
  EXPECT_EQ(read_file(dir / "public/stage1/leaderboard.csv"), csv);
  EXPECT_EQ(read_file(dir / "public/leaderboard.csv"), csv);
  w.aggregator->freeze("stage1", "part-1");
  EXPECT_EQ(read_file(dir / "public/frozen/part-1.csv"), csv);
}

TEST(Aggregator, SurvivesRestart)
{
  TempDir dir;
  World w(base_config(), dir.path());
  const auto a = w.team("Owls");
  const auto b = w.team("Lynx");
  w.submit(a, generalizer_payload());
  w.submit(b, memorizer_payload());
  w.aggregator->run_cycle();
  RecomputeVerifier honest([&](const std::string& f) -> const GroundTruth& { return w.aggregator->ground_truth(f); });
  w.aggregator->verify_drain("stage1", honest);
  w.aggregator->run_cycle();
  w.aggregator->freeze("stage1", "part-1");
  w.aggregator->apply_twist("stage1", 2);
  w.aggregator->run_cycle();
  const auto live = snapshot_bytes(*w.aggregator->latest("stage1"));
  const auto frozen = snapshot_bytes(*w.aggregator->frozen("part-1"));
  const auto auto_frozen = snapshot_bytes(*w.aggregator->frozen("stage1-v1"));
  const auto badges = w.aggregator->badges("stage1");

  w.rebuild();
  EXPECT_EQ(w.aggregator->current_version("stage1"), 2);
  EXPECT_EQ(snapshot_bytes(*w.aggregator->latest("stage1")), live);
  EXPECT_EQ(snapshot_bytes(*w.aggregator->frozen("part-1")), frozen);
  EXPECT_EQ(snapshot_bytes(*w.aggregator->frozen("stage1-v1")), auto_frozen);
  EXPECT_EQ(w.aggregator->badges("stage1"), badges);
  EXPECT_TRUE(w.aggregator->run_cycle().published.empty());
  EXPECT_TRUE(w.aggregator->run_cycle().awards.empty());
  EXPECT_THROW(w.aggregator->freeze("stage1", "part-1"), Error);
}

TEST(Aggregator, VerificationStatusSurvivesRestart)
{
  TempDir dir;
  World w(base_config(), dir.path());
  w.submit(w.team("Owls"), generalizer_payload());
  w.aggregator->run_cycle();
  RecomputeVerifier honest([&](const std::string& f) -> const GroundTruth& { return w.aggregator->ground_truth(f); });
  w.aggregator->verify_drain("stage1", honest);
  w.aggregator->run_cycle();
  w.rebuild();
  EXPECT_EQ(w.aggregator->record(1)->verification, Verification::verified);
}

TEST(Aggregator, ScansInboxEachCycle)
{
  TempDir dir;
  auto j = no_verification_config();
  World w(j);
  AggregatorOptions o;
  o.scan_root = dir / "inbox";
  o.ground_truth["holdout.csv"] = std::make_shared<const GroundTruth>(parse_ground_truth(ground_truth_csv(twist_holdout())));
  Aggregator agg(w.config, *w.registry, *w.ingestor, w.clock, o);
  w.team("Owls");
  write_file_atomic(dir / "inbox/stage1/Owls/run.csv", generalizer_payload());
  const auto r = agg.run_cycle();
  EXPECT_EQ(r.evaluated.size(), 1u);
  EXPECT_EQ(agg.latest("stage1")->rows[0].verification_flag, "verified");
  EXPECT_TRUE(agg.run_cycle().evaluated.empty());
}

TEST(Aggregator, ReadersNeverSeeTornSnapshots)
{
  World w;
  std::vector<std::string> teams;
  for (int i = 0; i < 5; ++i) teams.push_back(w.team("Team" + std::to_string(i)));
  std::atomic<bool> done{false};
  std::atomic<int> bad{0};
  std::thread reader([&] {
    std::uint64_t last = 0;
    while (!done) {
      const auto s = w.aggregator->latest("stage1");
      if (!s) continue;
      if (s->snapshot_id < last) ++bad;
      last = s->snapshot_id;
      for (std::size_t i = 0; i < s->rows.size(); ++i) {
        if (s->rows[i].rank != static_cast<int>(i + 1)) ++bad;
      }
    }
  });
  for (int i = 0; i < 200; ++i) {
    w.clock.advance(1h);
    w.submit(teams[static_cast<std::size_t>(i) % teams.size()], ranking_csv({{"u1", {"old", "x" + std::to_string(i), "new"}}}));
    w.aggregator->run_cycle();
  }
  done = true;
  reader.join();
  EXPECT_EQ(bad.load(), 0);
}
