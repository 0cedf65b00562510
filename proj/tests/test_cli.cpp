#include <gtest/gtest.h>

#include "cli_support.hpp"
#include "damo/checkpoint.hpp"
#include "json.hpp"

using namespace damo;
using namespace damo::testing;
namespace fs = std::filesystem;

namespace {

fs::path base() {
  static const fs::path b = [] {
    const fs::path p = fs::path(::testing::TempDir()) / "damo_cli";
    fs::create_directories(p);
    write_file(p / "small.json", small_config_json());
    return p;
  }();
  return b;
}

std::string cfg() { return (base() / "small.json").string(); }

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run({}).code, kExitUsage);
  EXPECT_EQ(run({"frobnicate"}).code, kExitUsage);
  const CliRun r = run({"train", "--stage", "5", "--out", (base() / "x").string()});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
  EXPECT_EQ(run({"gen-data", "--set", "bogus=1", "--out", (base() / "x").string()}).code, kExitUsage);
  EXPECT_EQ(run({"gen-data", "--set", "model.n_frames=7", "--out", (base() / "x").string()}).code, kExitUsage);
  EXPECT_EQ(run({"gen-data", "--config", (base() / "missing.json").string(), "--out", (base() / "x").string()}).code,
            kExitUsage);
  EXPECT_EQ(run({"train", "--stage", "2", "--config", cfg(), "--set", "stage.lr=-", "--out", (base() / "x").string()}).code,
            kExitUsage);
}

TEST(Cli, OverridesParseJsonValues) {
  nlohmann::json doc = nlohmann::json::object();
  apply_override(doc, "stage.lr=0.001");
  apply_override(doc, "data.train_count=16");
  apply_override(doc, "stage.data_source=dialogue");
  EXPECT_EQ(doc["stage"]["lr"], 0.001);
  EXPECT_EQ(doc["data"]["train_count"], 16);
  EXPECT_EQ(doc["stage"]["data_source"], "dialogue");
  EXPECT_THROW(apply_override(doc, "no_equals_sign"), UsageError);
  EXPECT_NE(train_data_seed(1), eval_data_seed(1));
  EXPECT_NE(train_data_seed(1), model_init_seed(1));
}

TEST(Cli, GenDataIsDeterministic) {
  const fs::path a = fresh_dir(base(), "gen_a"), b = fresh_dir(base(), "gen_b");
  ASSERT_EQ(run({"gen-data", "--config", cfg(), "--out", a.string()}).code, kExitOk);
  ASSERT_EQ(run({"gen-data", "--config", cfg(), "--out", b.string()}).code, kExitOk);
  const auto sa = snapshot(a);
  EXPECT_EQ(sa, snapshot(b));
  EXPECT_TRUE(sa.contains("train.jsonl"));
  EXPECT_TRUE(sa.contains("effective_config.json"));
  EXPECT_EQ(std::count(sa.at("train.jsonl").begin(), sa.at("train.jsonl").end(), '\n'), 8);
  const fs::path c = fresh_dir(base(), "gen_c");
  ASSERT_EQ(run({"gen-data", "--config", cfg(), "--seed", "12", "--out", c.string()}).code, kExitOk);
  EXPECT_NE(snapshot(c).at("train.jsonl"), sa.at("train.jsonl"));
}

TEST(Cli, TrainWritesArtifactsDeterministically) {
  const fs::path a = fresh_dir(base(), "train_a"), b = fresh_dir(base(), "train_b");
  const CliRun ra = run({"train", "--stage", "3", "--config", cfg(), "--out", a.string()});
  ASSERT_EQ(ra.code, kExitOk) << ra.err;
  ASSERT_EQ(run({"train", "--stage", "3", "--config", cfg(), "--out", b.string()}).code, kExitOk);
  const auto sa = snapshot(a);
  EXPECT_EQ(sa, snapshot(b));
  for (const char* f : {"effective_config.json", "train_report.json", "predictions.jsonl", "ground_truth.jsonl",
                        "checkpoint/manifest.json"})
    EXPECT_TRUE(sa.contains(f)) << f;
  const auto report = nlohmann::json::parse(sa.at("train_report.json"));
  EXPECT_EQ(report["steps"], 2);
  EXPECT_FALSE(report.contains("wall_seconds"));

  // Training from data files produced by gen-data, continuing from a checkpoint.
  const fs::path gen = fresh_dir(base(), "train_gen");
  ASSERT_EQ(run({"gen-data", "--config", cfg(), "--out", gen.string()}).code, kExitOk);
  const fs::path c = fresh_dir(base(), "train_c");
  const CliRun rc = run({"train", "--stage", "4", "--config", cfg(), "--init", (a / "checkpoint").string(), "--data",
                         (gen / "train.jsonl").string(), "--eval-data", (gen / "eval.jsonl").string(), "--out",
                         c.string()});
  ASSERT_EQ(rc.code, kExitOk) << rc.err;
  EXPECT_EQ(read_file(c / "ground_truth.jsonl"), read_file(gen / "eval_ground_truth.jsonl"));

  const CliRun bad = run({"train", "--stage", "2", "--config", cfg(), "--init", (base() / "nope").string(), "--out",
                          fresh_dir(base(), "train_d").string()});
  EXPECT_EQ(bad.code, kExitData);
}

TEST(Cli, EvalGroundingPrintsMetrics) {
  const fs::path d = fresh_dir(base(), "eval");
  write_file(d / "p.jsonl",
             "{\"id\": \"a\", \"prediction_text\": \"There are 1 relevant segments: [[0.0, 10.0]]\"}\n"
             "{\"id\": \"b\", \"prediction_text\": \"There are 1 relevant segments: [[5.0, 15.0]]\"}\n"
             "{\"id\": \"c\", \"prediction_text\": \"no idea\"}\n");
  write_file(d / "g.jsonl",
             "{\"id\": \"a\", \"segment\": [0.0, 10.0]}\n{\"id\": \"b\", \"segment\": [0.0, 10.0]}\n"
             "{\"id\": \"c\", \"segment\": [1.0, 2.0]}\n");
  const CliRun r = run({"eval-grounding", "--pred", (d / "p.jsonl").string(), "--gt", (d / "g.jsonl").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto m = nlohmann::json::parse(r.out);
  EXPECT_EQ(m["n"], 3);
  EXPECT_NEAR(m["miou"].get<double>(), (1.0 + 1.0 / 3.0) / 3.0, 1e-12);
  EXPECT_NEAR(m["recall_at"]["0.3"].get<double>(), 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(m["recall_at"]["0.5"].get<double>(), 1.0 / 3.0, 1e-12);
  EXPECT_EQ(m["parse_failures"], 1);

  const CliRun t = run({"eval-grounding", "--pred", (d / "p.jsonl").string(), "--gt", (d / "g.jsonl").string(),
                        "--thresholds", "0.25", "--out", d.string()});
  ASSERT_EQ(t.code, kExitOk);
  EXPECT_EQ(nlohmann::json::parse(t.out)["recall_at"].size(), 1u);
  EXPECT_EQ(nlohmann::json::parse(read_file(d / "metrics.json")), nlohmann::json::parse(t.out));

  write_file(d / "g2.jsonl", "{\"id\": \"zzz\", \"segment\": [0.0, 1.0]}\n");
  EXPECT_EQ(run({"eval-grounding", "--pred", (d / "p.jsonl").string(), "--gt", (d / "g2.jsonl").string()}).code,
            kExitData);
  write_file(d / "g3.jsonl", "{not json\n");
  EXPECT_EQ(run({"eval-grounding", "--pred", (d / "p.jsonl").string(), "--gt", (d / "g3.jsonl").string()}).code,
            kExitData);
  EXPECT_EQ(run({"eval-grounding", "--pred", (d / "p.jsonl").string(), "--gt", (d / "g.jsonl").string(),
                 "--thresholds", "abc"})
                .code,
            kExitUsage);
}

TEST(Cli, EvalOfTrainOutputsMatchesItsOwnGroundTruth) {
  const fs::path a = fresh_dir(base(), "train_eval");
  ASSERT_EQ(run({"train", "--stage", "2", "--config", cfg(), "--out", a.string()}).code, kExitOk);
  const CliRun r = run({"eval-grounding", "--pred", (a / "predictions.jsonl").string(), "--gt",
                        (a / "ground_truth.jsonl").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(nlohmann::json::parse(r.out)["n"], 4);
  EXPECT_EQ(nlohmann::json::parse(r.out)["parse_failures"], 0);
}

TEST(Cli, AugmentQaBothModes) {
  const fs::path d = fresh_dir(base(), "augment");
  write_file(d / "ann.jsonl",
             "{\"video_id\": \"v1\", \"duration\": 60.0, \"segments\": [{\"start\": 12.4, \"end\": 25.0, "
             "\"description\": \"person opens door\"}, {\"start\": 30, \"end\": 31, \"description\": \"\"}]}\n");
  const fs::path o1 = fresh_dir(base(), "augment_o1"), o2 = fresh_dir(base(), "augment_o2");
  const CliRun r = run({"augment-qa", "--input", (d / "ann.jsonl").string(), "--out", o1.string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  ASSERT_EQ(run({"augment-qa", "--input", (d / "ann.jsonl").string(), "--out", o2.string()}).code, kExitOk);
  EXPECT_EQ(snapshot(o1), snapshot(o2));
  const auto qa = nlohmann::json::parse(read_file(o1 / "qa.jsonl"));
  EXPECT_NE(qa["answer"].get<std::string>().find("from 12.4s to 25.0s"), std::string::npos);
  const auto report = nlohmann::json::parse(read_file(o1 / "augment_report.json"));
  EXPECT_EQ(report["warnings"].size(), 1u);

  write_file(d / "dlg.jsonl",
             "{\"video_id\": \"v1\", \"turns\": [{\"role\": \"user\", \"text\": \"What happens?\"}, "
             "{\"role\": \"assistant\", \"text\": \"She sits down.\", \"segment\": [3.0, 7.5]}]}\n");
  const fs::path o3 = fresh_dir(base(), "augment_o3");
  ASSERT_EQ(run({"augment-qa", "--mode", "dialogue", "--input", (d / "dlg.jsonl").string(), "--out", o3.string()}).code,
            kExitOk);
  const auto dlg = nlohmann::json::parse(read_file(o3 / "dialogues.jsonl"));
  EXPECT_EQ(dlg["turns"][1]["text"], "She sits down. (from 3.0s to 7.5s)");

  write_file(d / "bad.jsonl", "{\"video_id\": \"v1\", \"duration\": 10.0, \"segments\": [{\"start\": 5, \"end\": 50}]}\n");
  EXPECT_EQ(run({"augment-qa", "--input", (d / "bad.jsonl").string(), "--out", o3.string()}).code, kExitData);
  EXPECT_EQ(run({"augment-qa", "--mode", "poem", "--input", (d / "ann.jsonl").string(), "--out", o3.string()}).code,
            kExitUsage);
}

TEST(Cli, InspectCountsMatchManifest) {
  const fs::path a = fresh_dir(base(), "inspect");
  ASSERT_EQ(run({"train", "--stage", "1", "--config", cfg(), "--set", "stage.max_steps=1", "--out", a.string()}).code,
            kExitOk);
  const CliRun r = run({"inspect", "--checkpoint", (a / "checkpoint").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto info = nlohmann::json::parse(r.out);
  const auto manifest = nlohmann::json::parse(read_file(a / "checkpoint" / "manifest.json"));
  std::map<std::string, std::size_t> counts, tensors;
  std::size_t total = 0;
  for (const auto& p : manifest["parameters"]) {
    std::size_t n = 1;
    for (auto d : p["shape"]) n *= d.get<std::size_t>();
    counts[p["group"]] += n;
    tensors[p["group"]] += 1;
    total += n;
  }
  EXPECT_EQ(info["total_parameters"], total);
  for (const auto& [grp, n] : counts) {
    EXPECT_EQ(info["groups"][grp]["parameters"], n) << grp;
    EXPECT_EQ(info["groups"][grp]["tensors"], tensors[grp]) << grp;
  }
  EXPECT_EQ(run({"inspect", "--checkpoint", (base() / "nowhere").string()}).code, kExitData);
}
