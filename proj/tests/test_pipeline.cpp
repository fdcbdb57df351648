#include <gtest/gtest.h>

#include <filesystem>

#include "bcl/pipeline.hpp"

using namespace bcl;
namespace fs = std::filesystem;

namespace {

RunConfig quick_config(std::uint64_t seed = 1) {
  RunConfig c = reference_config();
  c.seed = seed;
  c.data.num_classes = 6;
  c.data.samples_per_class = 20;
  c.train_old.epochs_stage1 = 5;
  c.train_new.epochs_stage1 = 4;
  c.train_new.epochs_stage2 = 2;
  return c;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("bcl_pipeline_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(RunExperiment, MetricsAreSchemaComplete) {
  for (TrainMode m : {TrainMode::nccl, TrainMode::independent, TrainMode::l2_regression}) {
    RunConfig c = quick_config();
    c.train_new.mode = m;
    const RunResult r = run_experiment(c);
    const auto problems = validate_metrics(r.metrics);
    EXPECT_TRUE(problems.empty()) << (problems.empty() ? "" : problems.front());
  }
}

TEST(RunExperiment, IndependentHistoryHasNoCompatibilityTerms) {
  RunConfig c = quick_config();
  c.train_new.mode = TrainMode::independent;
  const RunResult r = run_experiment(c);
  for (const json& e : r.metrics["loss_history"]["new"]) {
    EXPECT_EQ(e["l1"].get<double>(), 0.0);
    EXPECT_EQ(e["l2"].get<double>(), 0.0);
  }
}

TEST(RunExperiment, ValidatorCatchesMissingAndMistypedFields) {
  const RunResult r = run_experiment(quick_config());
  json m = r.metrics;
  m["retrieval"]["cross"].erase("mAP");
  EXPECT_FALSE(validate_metrics(m).empty());
  m = r.metrics;
  m["filter_report"]["removed_total"] = "many";
  EXPECT_FALSE(validate_metrics(m).empty());
  m = r.metrics;
  m["status"] = "incomplete";
  EXPECT_FALSE(validate_metrics(m).empty());
}

TEST(RunExperiment, RerunIdenticalModuloTimestamps) {
  const fs::path a = fresh_dir("a"), b = fresh_dir("b");
  RunConfig c = quick_config(3);
  c.output_dir = a.string();
  run_experiment(c);
  c.output_dir = b.string();
  run_experiment(c);
  for (const char* f : {"old_model.json", "new_model.json", "config.json", "dataset.jsonl",
                        "embeddings/query_new.jsonl", "embeddings/gallery_old.jsonl"})
    EXPECT_EQ(io::read_text(a / f), io::read_text(b / f)) << f;
  EXPECT_EQ(without_timestamps(io::read_json(a / "metrics.json")).dump(),
            without_timestamps(io::read_json(b / "metrics.json")).dump());
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(RunExperiment, ConfigHashMatchesRecomputationFromFile) {
  const fs::path dir = fresh_dir("hash");
  RunConfig c = quick_config();
  c.output_dir = dir.string();
  run_experiment(c);
  const json metrics = io::read_json(dir / "metrics.json");
  const RunConfig back = run_config_from_json(io::read_json(dir / "config.json"));
  EXPECT_EQ(metrics["meta"]["config_hash"].get<std::string>(), config_hash(back));
  RunConfig tampered = back;
  tampered.train_new.alpha *= 2;
  EXPECT_NE(metrics["meta"]["config_hash"].get<std::string>(), config_hash(tampered));
  fs::remove_all(dir);
}

TEST(RunExperiment, NoOverlapNeverReadsOldClassifier) {
  RunConfig c = quick_config(2);
  c.data.num_classes = 8;
  c.protocol.overlap = false;
  c.protocol.old_fraction = 0.25;
  const RunResult r = run_experiment(c);
  EXPECT_EQ(r.metrics["instrumentation"]["old_classifier_reads"].get<std::size_t>(), 0u);
  EXPECT_EQ(r.metrics["data"]["k_old"].get<std::size_t>(), 2u);
  EXPECT_EQ(r.metrics["data"]["k_new"].get<std::size_t>(), 6u);
  EXPECT_TRUE(validate_metrics(r.metrics).empty());
}

TEST(RunExperiment, FailureWritesIncompleteMetrics) {
  const fs::path dir = fresh_dir("fail");
  RunConfig c = quick_config();
  c.output_dir = dir.string();
  c.train_new.learning_rate = 1e300;
  c.train_new.mode = TrainMode::l2_regression;
  try {
    run_experiment(c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numeric);
  }
  const json m = io::read_json(dir / "metrics.json");
  EXPECT_EQ(m["status"], "incomplete");
  EXPECT_EQ(m["error"]["kind"], "numeric error");
  fs::remove_all(dir);
}

TEST(Config, RoundTripsThroughJson) {
  RunConfig c = quick_config(9);
  c.train_new.negative_cap = 17;
  c.eval.metric = Distance::euclidean;
  const RunConfig back = run_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back).dump(), to_json(c).dump());
}

TEST(Config, UnknownKeyNamesThePath) {
  json j = to_json(reference_config());
  j["train_new"]["alpah"] = 0.1;
  try {
    run_config_from_json(j);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::parameter);
    EXPECT_NE(std::string(e.what()).find("train_new.alpah"), std::string::npos) << e.what();
  }
}

TEST(Config, WrongTypeIsParameterError) {
  json j = to_json(reference_config());
  j["seed"] = "one";
  EXPECT_THROW(run_config_from_json(j), Error);
}

TEST(Config, InvalidValuesFailValidation) {
  RunConfig c = reference_config();
  c.protocol.old_fraction = 1.0;
  EXPECT_THROW(c.validate(), Error);
  c = reference_config();
  c.data.split.train = 0.9;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Overrides, DottedPathsSetValues) {
  json j = to_json(reference_config());
  apply_override(j, "train_new.alpha=0.02");
  apply_override(j, "protocol.overlap=false");
  apply_override(j, "run_name=abc");
  apply_override(j, "eval.distance=euclidean");
  const RunConfig c = run_config_from_json(j);
  EXPECT_EQ(c.train_new.alpha, 0.02);
  EXPECT_FALSE(c.protocol.overlap);
  EXPECT_EQ(c.run_name, "abc");
  EXPECT_EQ(c.eval.metric, Distance::euclidean);
}

TEST(Overrides, MalformedAssignments) {
  json j = to_json(reference_config());
  EXPECT_THROW(apply_override(j, "train_new.alpha"), Error);
  EXPECT_THROW(apply_override(j, "=3"), Error);
  EXPECT_THROW(apply_override(j, "train_new..alpha=1"), Error);
  EXPECT_THROW(apply_override(j, "seed.x=1"), Error);
  apply_override(j, "train_new.nonsense=1");
  EXPECT_THROW(run_config_from_json(j), Error);
}

TEST(Sweep, GridCardinalityAndCsv) {
  const fs::path dir = fresh_dir("sweep");
  RunConfig c = quick_config();
  c.train_new.epochs_stage1 = 2;
  c.train_new.epochs_stage2 = 1;
  c.output_dir = dir.string();
  const auto pts = run_sweep(c, {0.005, 0.01, 0.015}, {0.2, 0.5, 1.0});
  ASSERT_EQ(pts.size(), 9u);
  std::size_t metrics_files = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.path().filename() == "metrics.json") ++metrics_files;
  EXPECT_EQ(metrics_files, 9u);
  const std::string csv = sweep_csv(pts);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 10);
  for (const auto& p : pts) EXPECT_EQ(p.status, "complete");
  fs::remove_all(dir);
}

TEST(Sweep, SinglePointMatchesRun) {
  RunConfig c = quick_config(4);
  const auto pts = run_sweep(c, {c.train_new.alpha}, {c.train_new.u_factor});
  ASSERT_EQ(pts.size(), 1u);
  const RunResult r = run_experiment(c);
  EXPECT_EQ(*pts[0].cross_map, r.metrics["retrieval"]["cross"]["mAP"].get<double>());
  EXPECT_EQ(*pts[0].self_new_map, r.metrics["retrieval"]["self_new"]["mAP"].get<double>());
}

TEST(Sweep, FailedPointsAreRecordedAndSkipped) {
  RunConfig c = quick_config();
  const auto pts = run_sweep(c, {0.01}, {0.5, 1.5});
  ASSERT_EQ(pts.size(), 2u);
  EXPECT_EQ(pts[0].status, "complete");
  EXPECT_EQ(pts[1].status, "failed");
  EXPECT_FALSE(pts[1].cross_map.has_value());
  EXPECT_THROW(run_sweep(c, {}, {0.5}), Error);
}
