#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "bcl/serialization.hpp"

using namespace bcl;

TEST(Generate, DefaultShape) {
  const Dataset ds = generate(DataSpec{});
  EXPECT_EQ(ds.samples.size(), 12u * 40u);
  EXPECT_EQ(ds.planted_outlier_ids.size(), 12u * 2u);
  std::map<std::pair<int, Split>, std::size_t> counts;
  for (const LabeledSample& s : ds.samples) {
    ++counts[{s.label, s.split}];
    EXPECT_EQ(s.x.size(), 16u);
  }
  for (int k = 0; k < 12; ++k) {
    EXPECT_EQ((counts[{k, Split::train}]), 20u);
    EXPECT_EQ((counts[{k, Split::query}]), 8u);
    EXPECT_EQ((counts[{k, Split::gallery}]), 12u);
  }
  for (std::int64_t id : ds.planted_outlier_ids)
    EXPECT_TRUE(std::any_of(ds.samples.begin(), ds.samples.end(), [&](const LabeledSample& s) { return s.id == id; }));
}

TEST(Generate, NoOutliersWhenFractionZero) {
  DataSpec spec;
  spec.outlier_fraction = 0.0;
  EXPECT_TRUE(generate(spec).planted_outlier_ids.empty());
}

TEST(Generate, DegenerateClusterIsConstant) {
  DataSpec spec;
  spec.subclusters_per_class = 1;
  spec.noise_sigma = 0.0;
  spec.outlier_fraction = 0.0;
  const Dataset ds = generate(spec);
  for (const LabeledSample& s : ds.samples) EXPECT_EQ(s.x, ds.samples[static_cast<std::size_t>(s.label) * spec.samples_per_class].x);
}

TEST(Generate, SameSeedIsBitIdentical) {
  DataSpec spec;
  spec.seed = 77;
  const Dataset a = generate(spec), b = generate(spec);
  EXPECT_EQ(dataset_jsonl(a), dataset_jsonl(b));
  spec.seed = 78;
  EXPECT_NE(dataset_jsonl(a), dataset_jsonl(generate(spec)));
}

TEST(Generate, InfeasibleSpecsNameTheField) {
  auto expect_field = [](DataSpec s, const std::string& field) {
    try {
      generate(s);
      FAIL() << field;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::parameter);
      EXPECT_NE(std::string(e.what()).find(field), std::string::npos) << e.what();
    }
  };
  DataSpec s;
  s.split.train = 0.6;
  expect_field(s, "data.split");
  s = {};
  s.outlier_fraction = 0.5;
  expect_field(s, "data.outlier_fraction");
  s = {};
  s.samples_per_class = 1;
  expect_field(s, "data.samples_per_class");
  s = {};
  s.num_classes = 1;
  expect_field(s, "data.num_classes");
}

TEST(IdSplit, OverlapSupersetContract) {
  DataSpec spec;
  spec.num_classes = 8;
  const Dataset ds = generate(spec);
  const IdSplit sp = id_split(ds, 0.5, true, 5);
  EXPECT_EQ(sp.old_labels.size(), 4u);
  EXPECT_EQ(sp.new_labels.size(), 8u);
  std::set<std::int64_t> new_ids;
  for (const LabeledSample& s : sp.new_train) new_ids.insert(s.id);
  for (const LabeledSample& s : sp.old_train) EXPECT_TRUE(new_ids.count(s.id));
  for (const LabeledSample& s : sp.old_train) {
    EXPECT_GE(s.label, 0);
    EXPECT_LT(s.label, 4);
    EXPECT_EQ(s.split, Split::train);
  }
}

TEST(IdSplit, LabelMapsRoundTrip) {
  const Dataset ds = generate(DataSpec{});
  const IdSplit sp = id_split(ds, 0.25, false, 9);
  std::map<std::int64_t, int> global;
  for (const LabeledSample& s : ds.samples) global[s.id] = s.label;
  for (const LabeledSample& s : sp.old_train) EXPECT_EQ(sp.old_labels.to_global.at(static_cast<std::size_t>(s.label)), global[s.id]);
  for (const LabeledSample& s : sp.new_train) EXPECT_EQ(sp.new_labels.to_global.at(static_cast<std::size_t>(s.label)), global[s.id]);
  for (std::size_t i = 0; i < sp.new_labels.size(); ++i) EXPECT_EQ(sp.new_labels.to_local.at(sp.new_labels.to_global[i]), static_cast<int>(i));
}

TEST(IdSplit, NoOverlapIsDisjoint) {
  const Dataset ds = generate(DataSpec{});
  const IdSplit sp = id_split(ds, 0.25, false, 3);
  EXPECT_EQ(sp.old_labels.size(), 3u);
  EXPECT_EQ(sp.new_labels.size(), 9u);
  std::set<std::int64_t> old_ids;
  for (const LabeledSample& s : sp.old_train) old_ids.insert(s.id);
  for (const LabeledSample& s : sp.new_train) EXPECT_FALSE(old_ids.count(s.id));
}

TEST(IdSplit, Deterministic) {
  const Dataset ds = generate(DataSpec{});
  EXPECT_EQ(id_split(ds, 0.5, true, 4).old_labels.to_global, id_split(ds, 0.5, true, 4).old_labels.to_global);
}

TEST(IdSplit, EmptySideIsParameterError) {
  DataSpec spec;
  spec.num_classes = 4;
  const Dataset ds = generate(spec);
  for (double f : {0.0, 1.0, 0.05, 0.95}) {
    try {
      id_split(ds, f, true, 1);
      FAIL() << f;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::parameter);
    }
  }
}

TEST(Stratification, EveryClassInEverySplitAcrossSeeds) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    DataSpec spec;
    spec.seed = seed;
    const Dataset ds = generate(spec);
    for (Split sp : {Split::train, Split::query, Split::gallery}) {
      std::set<int> labels;
      for (const LabeledSample& s : ds.split(sp)) labels.insert(s.label);
      EXPECT_EQ(labels.size(), spec.num_classes);
    }
  }
}

TEST(DatasetFiles, RoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "bcl_test_dataset";
  std::filesystem::remove_all(dir);
  DataSpec spec;
  spec.num_classes = 3;
  spec.samples_per_class = 10;
  const Dataset ds = generate(spec);
  write_dataset(ds, dir / "data.jsonl");
  EXPECT_TRUE(std::filesystem::exists(dir / "data.header.json"));
  const Dataset back = read_dataset(dir / "data.jsonl");
  ASSERT_EQ(back.samples.size(), ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    EXPECT_EQ(back.samples[i].x, ds.samples[i].x);
    EXPECT_EQ(back.samples[i].split, ds.samples[i].split);
  }
  EXPECT_EQ(back.planted_outlier_ids, ds.planted_outlier_ids);
  EXPECT_EQ(dataset_jsonl(back), dataset_jsonl(ds));
  std::filesystem::remove_all(dir);
}
