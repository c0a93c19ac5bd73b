#include <gtest/gtest.h>

#include "amt/campaign.hpp"
#include "test_helpers.hpp"

namespace {

using namespace amt;
using amt::testing::TempDir;
using amt::testing::slurp;
using amt::testing::spit;
using amt::testing::average_oracle;
using amt::testing::write_campaign;

CampaignResult run_config(const std::filesystem::path& cfg) { return Campaign(CampaignConfig::load(cfg)).run(); }

TEST(Config, Validation) {
  TempDir dir;
  const auto base = write_campaign(dir.path(), average_oracle());
  auto j = nlohmann::json::parse(slurp(base));

  auto bad = j;
  bad["iterations"] = 0;
  EXPECT_THROW(CampaignConfig::from_json(bad, dir.path()).validate(), ConfigError);
  bad = j;
  bad["mode"] = "boundary";
  bad["boundary_mr"] = "Blur";
  EXPECT_THROW(CampaignConfig::from_json(bad, dir.path()).validate(), ConfigError);
  bad.erase("boundary_mr");
  EXPECT_THROW(CampaignConfig::from_json(bad, dir.path()).validate(), ConfigError);
  bad = j;
  bad["colour"] = "blue";
  EXPECT_THROW(CampaignConfig::from_json(bad, dir.path()), ConfigError);
  bad = j;
  bad["exploration"] = {{"epsilon", 1.5}};
  EXPECT_THROW(CampaignConfig::from_json(bad, dir.path()).validate(), ConfigError);
  bad = j;
  bad["sut"] = {{"kind", "magic"}};
  EXPECT_THROW(CampaignConfig::from_json(bad, dir.path()), ConfigError);
  EXPECT_THROW(CampaignConfig::load(dir / "nope.json"), ConfigError);
}

TEST(Config, InvalidBoundaryWritesNothing) {
  TempDir dir;
  const auto cfg = write_campaign(dir.path(), average_oracle(), {{"mode", "boundary"}, {"boundary_mr", "Blur"}});
  EXPECT_THROW(Campaign{CampaignConfig::load(cfg)}, ConfigError);
  EXPECT_FALSE(std::filesystem::exists(dir / "out"));
}

TEST(Manifest, Errors) {
  TempDir dir;
  spit(dir / "m.csv", "id,path,label\na,x.ppm,1\n");
  EXPECT_THROW(load_manifest(dir / "m.csv", Task::classification), ConfigError);
  spit(dir / "m.csv", "id,image,target\na,x.ppm,1\na,y.ppm,2\n");
  EXPECT_THROW(load_manifest(dir / "m.csv", Task::classification), ConfigError);
  spit(dir / "m.csv", "id,image,target\na,x.ppm,cat\n");
  EXPECT_THROW(load_manifest(dir / "m.csv", Task::classification), ConfigError);
  spit(dir / "m.csv", "id,image,target\n");
  EXPECT_THROW(load_manifest(dir / "m.csv", Task::classification), ConfigError);
  spit(dir / "m.csv", "id,image,target\na,x.ppm,missing.json\n");
  EXPECT_THROW(load_manifest(dir / "m.csv", Task::detection), ConfigError);
}

TEST(Amt, SingleIteration) {
  TempDir dir;
  const auto result = run_config(write_campaign(dir.path(), average_oracle(), {{"iterations", 1}}));
  ASSERT_EQ(result.log.size(), 1u);
  EXPECT_EQ(read_log(dir / "out/log.jsonl").size(), 1u);
  EXPECT_TRUE(std::filesystem::exists(dir / "out/snapshot.json"));
}

TEST(Amt, ReplayIsByteIdentical) {
  TempDir a, b;
  nlohmann::json o{{"iterations", 500}, {"exploration", {{"strategy", "cover"}}}};
  run_config(write_campaign(a.path(), average_oracle(), o));
  run_config(write_campaign(b.path(), average_oracle(), o));
  EXPECT_EQ(slurp(a / "out/log.jsonl"), slurp(b / "out/log.jsonl"));
  EXPECT_EQ(slurp(a / "out/snapshot.json"), slurp(b / "out/snapshot.json"));
}

TEST(Amt, RecordsAreWellFormed) {
  TempDir dir;
  const auto result = run_config(write_campaign(dir.path(), average_oracle(), {{"iterations", 300}}));
  const auto log = read_log(dir / "out/log.jsonl");
  ASSERT_EQ(log.size(), 300u);
  std::uint64_t violations = 0, evaluated = 0;
  for (std::size_t i = 0; i < log.size(); ++i) {
    const auto& r = log[i];
    EXPECT_EQ(r.iteration, i);
    EXPECT_EQ(r.param.has_value(), is_parameterized(r.mr));
    EXPECT_EQ(r.param_propensity.has_value(), is_parameterized(r.mr));
    EXPECT_GT(r.main_propensity, 0.0);
    EXPECT_EQ(r.registry, registry_digest());
    ASSERT_FALSE(r.failed());
    ++evaluated;
    if (*r.verdict == Verdict::violated) ++violations;
    EXPECT_EQ(*r.main_reward, main_reward(*r.verdict));
    if (r.param) EXPECT_EQ(*r.param_reward, param_reward(*r.param, *r.verdict));
    EXPECT_EQ(r.cumulative_violation_rate, double(violations) / double(evaluated));
  }
  EXPECT_EQ(result.violations, violations);
}

TEST(Amt, SnapshotResumeEqualsUninterrupted) {
  for (const char* strategy : {"epsilon-greedy", "cover"}) {
    TempDir straight, split;
    nlohmann::json o{{"iterations", 400}, {"exploration", {{"strategy", strategy}}}};
    run_config(write_campaign(straight.path(), average_oracle(), o));

    o["iterations"] = 200;
    o["out_dir"] = "first";
    run_config(write_campaign(split.path(), average_oracle(), o));
    auto cfg = CampaignConfig::load(split / "config.json");
    cfg.snapshot_in = split / "first/snapshot.json";
    cfg.out_dir = split / "second";
    Campaign(cfg).run();

    EXPECT_EQ(slurp(straight / "out/log.jsonl"), slurp(split / "first/log.jsonl") + slurp(split / "second/log.jsonl"))
        << strategy;
    EXPECT_EQ(slurp(straight / "out/snapshot.json"), slurp(split / "second/snapshot.json")) << strategy;
  }
}

TEST(Amt, PlainHierarchySnapshotAccepted) {
  TempDir dir;
  const auto cfg_path = write_campaign(dir.path(), average_oracle(), {{"iterations", 10}});
  Hierarchy h({kBuiltinFeatureDimension, {}, {}, 5});
  spit(dir / "h.json", h.snapshot());
  auto cfg = CampaignConfig::load(cfg_path);
  cfg.snapshot_in = dir / "h.json";
  EXPECT_NO_THROW(Campaign(cfg).run());

  Hierarchy wrong({3, {}, {}, 5});
  spit(dir / "wrong.json", wrong.snapshot());
  cfg.snapshot_in = dir / "wrong.json";
  EXPECT_THROW(Campaign{cfg}, ConfigError);
  spit(dir / "corrupt.json", "{\"schema\": \"amt-campaign\"");
  cfg.snapshot_in = dir / "corrupt.json";
  EXPECT_THROW(Campaign{cfg}, ConfigError);
}

TEST(Random, UniformPropensitiesAndRate) {
  TempDir dir;
  const auto result =
      run_config(write_campaign(dir.path(), average_oracle(), {{"mode", "random"}, {"iterations", 10000}}));
  for (const auto& r : result.log) {
    EXPECT_DOUBLE_EQ(r.main_propensity, 1.0 / 7);
    if (r.mr == Relation::rotation) EXPECT_DOUBLE_EQ(*r.param_propensity, 1.0 / 36);
    if (r.mr == Relation::shear) EXPECT_DOUBLE_EQ(*r.param_propensity, 1.0 / 18);
  }
  EXPECT_NEAR(result.violation_rate(), 0.2631, 0.015);
  EXPECT_FALSE(std::filesystem::exists(dir / "out/snapshot.json"));
}

TEST(Random, NeverTouchesBanditState) {
  TempDir dir;
  write_campaign(dir.path(), average_oracle(), {{"iterations", 50}});
  run_config(dir / "config.json");
  const std::string before = slurp(dir / "out/snapshot.json");
  auto cfg = CampaignConfig::load(dir / "config.json");
  cfg.mode = Mode::random;
  cfg.snapshot_in = dir / "out/snapshot.json";
  cfg.out_dir = dir / "out";
  cfg.log = "random.jsonl";
  Campaign(cfg).run();
  EXPECT_EQ(slurp(dir / "out/snapshot.json"), before);
}

TEST(Boundary, OnlyTheNamedRelation) {
  TempDir dir;
  const auto result = run_config(write_campaign(dir.path(), amt::testing::ramp_oracle(),
                                                {{"mode", "boundary"}, {"boundary_mr", "Shear"}, {"iterations", 500}}));
  for (const auto& r : result.log) {
    EXPECT_EQ(r.mr, Relation::shear);
    EXPECT_EQ(r.main_propensity, 1.0);
    EXPECT_TRUE(shear_grid().contains(*r.param));
  }
  ASSERT_TRUE(result.state.has_value());
  EXPECT_EQ(result.state->main().updates(), 0u);
  EXPECT_EQ(result.state->param_bandit(Relation::rotation).updates(), 0u);
  EXPECT_EQ(result.state->param_bandit(Relation::shear).updates(), 500u);
}

TEST(Baseline, AllArmsForEverySource) {
  TempDir dir;
  const auto result = run_config(write_campaign(dir.path(), average_oracle("deterministic-hash"),
                                                {{"mode", "baseline"}}, {7, 3, 8, 8, Task::classification, 1}));
  EXPECT_EQ(result.log.size(), 7u * 59u);
  ASSERT_TRUE(result.table.has_value());
  const auto rates = result.table->rates();
  EXPECT_EQ(rates.rows.size(), 59u);
  EXPECT_EQ(rates.classes.size(), 10u);
  EXPECT_EQ(result.table->executions(Relation::shear, -45, 0), 3u);
  EXPECT_EQ(result.table->executions(Relation::shear, -45, 9), 0u);
  EXPECT_TRUE(std::isnan(rates.find(Relation::blur, std::nullopt)->rates[9]));
  EXPECT_EQ(RateTable::load(dir / "out/baseline.csv"), rates);
}

TEST(Baseline, HashModeIsBitReproducible) {
  TempDir a, b;
  run_config(write_campaign(a.path(), average_oracle("deterministic-hash"), {{"mode", "baseline"}}));
  run_config(write_campaign(b.path(), average_oracle("deterministic-hash"), {{"mode", "baseline"}}));
  EXPECT_EQ(slurp(a / "out/baseline.csv"), slurp(b / "out/baseline.csv"));
  EXPECT_EQ(slurp(a / "out/log.jsonl"), slurp(b / "out/log.jsonl"));
}

TEST(Baseline, BernoulliCellWithinBinomialBound) {
  TempDir dir;
  auto oracle = average_oracle();
  std::vector<double> flip{0.149, 0.746, 0.378, 0.3313, 0.591, 0.539, 0.293, 0.924, 0.722, 0.433};
  oracle["table"]["FlipUD"] = flip;
  const auto result =
      run_config(write_campaign(dir.path(), oracle, {{"mode", "baseline"}}, {1000, 10, 4, 4, Task::classification, 2}));
  const double n = double(result.table->executions(Relation::flip_ud, std::nullopt, 1));
  ASSERT_EQ(n, 100.0);
  const double rate = result.table->rates().find(Relation::flip_ud, std::nullopt)->rates[1];
  EXPECT_NEAR(rate, 0.746, 3 * std::sqrt(0.746 * 0.254 / n));
}

TEST(Detection, CampaignRunsOnAnnotations) {
  TempDir dir;
  const auto result = run_config(write_campaign(dir.path(), average_oracle(), {{"iterations", 300}},
                                                {20, 3, 24, 24, Task::detection, 4}));
  int violated = 0;
  for (const auto& r : result.log) {
    ASSERT_FALSE(r.failed());
    EXPECT_EQ(*r.source_output, 1.0);
    if (*r.verdict == Verdict::violated) {
      ++violated;
      EXPECT_EQ(*r.followup_output, 0.0);
    }
  }
  EXPECT_GT(violated, 0);
}

TEST(Sources, SequentialOrderCycles) {
  TempDir dir;
  const auto result =
      run_config(write_campaign(dir.path(), average_oracle(), {{"source_order", "sequential"}, {"iterations", 45}}));
  const auto sources = load_manifest(dir / "suite/manifest.csv", Task::classification);
  for (std::size_t i = 0; i < result.log.size(); ++i) EXPECT_EQ(result.log[i].source_id, sources[i % 20].id);
}

TEST(Features, SidecarCampaign) {
  TempDir dir;
  const auto cfg_path = write_campaign(dir.path(), average_oracle(),
                                       {{"features", {{"source", "sidecar"}, {"path", "f.csv"}}}, {"iterations", 50}});
  std::string text = "id,n=3\n";
  for (const auto& s : load_manifest(dir / "suite/manifest.csv", Task::classification)) text += s.id + ",0.1,0.2,0.3\n";
  spit(dir / "f.csv", text);
  Campaign c(CampaignConfig::load(cfg_path));
  EXPECT_EQ(c.dimension(), 3u);
  EXPECT_EQ(c.run().log.size(), 50u);

  spit(dir / "f.csv", "id,n=3\nsrc_00000,0.1,0.2,0.3\n");
  EXPECT_THROW(Campaign{CampaignConfig::load(cfg_path)}, ConfigError);
}

TEST(Failures, LoggedAndSkipped) {
  TempDir dir;
  const std::string script = R"(
import json, sys
for line in sys.stdin:
    req = json.loads(line)
    if req["id"].endswith("3"):
        print("oops", flush=True)
    else:
        print(json.dumps({"label": 0}), flush=True)
)";
  nlohmann::json sut{{"kind", "external"}, {"command", {"python3", "-u", "-c", script}}, {"timeout_s", 10}};
  const auto result = run_config(write_campaign(dir.path(), average_oracle(), {{"sut", sut}, {"iterations", 60}}));
  std::uint64_t failed = 0;
  for (const auto& r : result.log) {
    EXPECT_EQ(r.failed(), r.source_id.back() == '3');
    if (r.failed()) {
      ++failed;
      EXPECT_FALSE(r.error.empty());
      EXPECT_FALSE(r.main_reward.has_value());
    } else {
      EXPECT_EQ(*r.verdict, Verdict::pass);
    }
  }
  EXPECT_GT(failed, 0u);
  EXPECT_EQ(result.state->main().updates(), 60 - failed);
  EXPECT_EQ(result.evaluated, 60 - failed);
}

TEST(Failures, SpawnFailureIsAConfigError) {
  TempDir dir;
  nlohmann::json sut{{"kind", "external"}, {"command", {"/no/such/sut"}}};
  const auto cfg = write_campaign(dir.path(), average_oracle(), {{"sut", sut}});
  EXPECT_THROW(Campaign{CampaignConfig::load(cfg)}, ConfigError);
  EXPECT_FALSE(std::filesystem::exists(dir / "out"));
}

TEST(RateTable, CsvRoundTrip) {
  RngStream rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    RateTable t;
    const std::size_t classes = 1 + rng.below(5);
    for (std::size_t c = 0; c < classes; ++c) t.classes.push_back(c == 0 ? "a,b \"q\"" : "c" + std::to_string(c));
    for (Relation r : kRelations) {
      RateTable::Row row{r, is_parameterized(r) ? std::optional<int>(grid_for(r)[rng.below(grid_for(r).size())])
                                                : std::nullopt,
                         {}};
      for (std::size_t c = 0; c <= classes; ++c) row.rates.push_back(rng.below(4) == 0 ? std::nan("") : rng.uniform());
      t.rows.push_back(row);
    }
    EXPECT_EQ(RateTable::from_csv(t.to_csv()), t);
  }
  EXPECT_THROW(RateTable::from_csv("mr,param,all\nSharpen,,0.5\n"), LoadError);
  EXPECT_THROW(RateTable::from_csv("x,y\n"), LoadError);
}

TEST(LogRecord, JsonRoundTrip) {
  TempDir dir;
  const auto result = run_config(write_campaign(dir.path(), average_oracle(), {{"iterations", 40}}));
  for (const auto& r : result.log) EXPECT_EQ(LogRecord::from_json(nlohmann::json::parse(r.to_line())).to_line(), r.to_line());
  spit(dir / "bad.jsonl", "{\"iteration\": 0}\n");
  EXPECT_THROW(read_log(dir / "bad.jsonl"), LoadError);
}

}  // namespace
