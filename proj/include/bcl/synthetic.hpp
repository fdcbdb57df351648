#pragma once

// Labeled vector datasets whose classes are mixtures of Gaussian
// sub-clusters, with a planted fraction of uniform-box outliers, and the
// old/new identity split used to train the two model generations.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "bcl/model.hpp"

namespace bcl {

struct SplitFractions {
  double train = 0.5;
  double query = 0.2;
  double gallery = 0.3;
};

struct DataSpec {
  std::size_t num_classes = 12;
  std::size_t subclusters_per_class = 2;
  std::size_t samples_per_class = 40;
  std::size_t d_in = 16;
  double class_spread = 1.0;
  double subcluster_spread = 0.5;
  double noise_sigma = 0.2;
  double outlier_fraction = 0.05;
  SplitFractions split;
  std::uint64_t seed = 1;

  void validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
      throw Error(ErrorKind::parameter, "data." + field + ": " + why);
    };
    if (num_classes < 2) fail("num_classes", "must be >= 2");
    if (d_in < 1) fail("d_in", "must be >= 1");
    if (subclusters_per_class < 1) fail("subclusters_per_class", "must be >= 1");
    if (samples_per_class < subclusters_per_class) fail("samples_per_class", "must be >= subclusters_per_class");
    if (!(outlier_fraction >= 0.0 && outlier_fraction < 0.5)) fail("outlier_fraction", "must lie in [0, 0.5)");
    if (!(class_spread >= 0.0)) fail("class_spread", "must be >= 0");
    if (!(subcluster_spread >= 0.0)) fail("subcluster_spread", "must be >= 0");
    if (!(noise_sigma >= 0.0)) fail("noise_sigma", "must be >= 0");
    if (split.train < 0.0 || split.query < 0.0 || split.gallery < 0.0) fail("split", "fractions must be >= 0");
    if (std::abs(split.train + split.query + split.gallery - 1.0) > 1e-9)
      fail("split", "fractions must sum to 1 (got " + std::to_string(split.train + split.query + split.gallery) + ")");
  }
};

struct Dataset {
  std::vector<LabeledSample> samples;  // ordered by id
  DataSpec spec;
  std::set<std::int64_t> planted_outlier_ids;

  std::vector<LabeledSample> split(Split which) const {
    std::vector<LabeledSample> out;
    for (const LabeledSample& s : samples)
      if (s.split == which) out.push_back(s);
    return out;
  }
};

inline Dataset generate(const DataSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::size_t K = spec.num_classes;
  const std::size_t n = spec.samples_per_class;
  const std::size_t d = spec.d_in;

  std::vector<Vec> class_centers(K, Vec(d));
  for (Vec& c : class_centers)
    for (double& v : c) v = rng.normal(0.0, spec.class_spread);

  std::vector<std::vector<Vec>> sub_centers(K);
  for (std::size_t k = 0; k < K; ++k) {
    sub_centers[k].assign(spec.subclusters_per_class, Vec(d));
    for (Vec& c : sub_centers[k])
      for (std::size_t j = 0; j < d; ++j) c[j] = class_centers[k][j] + rng.normal(0.0, spec.subcluster_spread);
  }

  Dataset ds;
  ds.spec = spec;
  ds.samples.reserve(K * n);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      LabeledSample s;
      s.id = static_cast<std::int64_t>(k * n + i);
      s.label = static_cast<int>(k);
      const Vec& center = sub_centers[k][i % spec.subclusters_per_class];
      s.x.resize(d);
      for (std::size_t j = 0; j < d; ++j) s.x[j] = center[j] + rng.normal(0.0, spec.noise_sigma);
      ds.samples.push_back(std::move(s));
    }
  }

  // Outliers: uniform draws over the inlier bounding box, label kept.
  const auto per_class = static_cast<std::size_t>(std::llround(spec.outlier_fraction * static_cast<double>(n)));
  if (per_class > 0) {
    Vec lo(d, std::numeric_limits<double>::infinity());
    Vec hi(d, -std::numeric_limits<double>::infinity());
    for (const LabeledSample& s : ds.samples)
      for (std::size_t j = 0; j < d; ++j) {
        lo[j] = std::min(lo[j], s.x[j]);
        hi[j] = std::max(hi[j], s.x[j]);
      }
    std::vector<std::size_t> within(n);
    for (std::size_t i = 0; i < n; ++i) within[i] = i;
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t i : rng.sample(within, per_class)) {
        LabeledSample& s = ds.samples[k * n + i];
        for (std::size_t j = 0; j < d; ++j) s.x[j] = rng.uniform(lo[j], hi[j]);
        ds.planted_outlier_ids.insert(s.id);
      }
    }
  }

  // Stratified split assignment.
  const auto n_train = static_cast<std::size_t>(std::llround(spec.split.train * static_cast<double>(n)));
  const auto n_query =
      std::min(n - std::min(n, n_train), static_cast<std::size_t>(std::llround(spec.split.query * static_cast<double>(n))));
  for (std::size_t k = 0; k < K; ++k) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    for (std::size_t r = 0; r < n; ++r) {
      Split s = Split::gallery;
      if (r < n_train)
        s = Split::train;
      else if (r < n_train + n_query)
        s = Split::query;
      ds.samples[k * n + order[r]].split = s;
    }
  }
  return ds;
}

/// Bidirectional mapping between global class ids and a contiguous local label space.
struct LabelMap {
  std::vector<int> to_global;
  std::map<int, int> to_local;

  std::size_t size() const noexcept { return to_global.size(); }
};

struct IdSplit {
  std::vector<LabeledSample> old_train;  // labels local to old_labels
  std::vector<LabeledSample> new_train;  // labels local to new_labels
  LabelMap old_labels;
  LabelMap new_labels;
};

namespace detail {

inline LabelMap make_label_map(std::vector<int> globals) {
  std::sort(globals.begin(), globals.end());
  LabelMap m;
  m.to_global = globals;
  for (std::size_t i = 0; i < globals.size(); ++i) m.to_local[globals[i]] = static_cast<int>(i);
  return m;
}

inline std::vector<LabeledSample> relabel_train(const Dataset& ds, const LabelMap& map) {
  std::vector<LabeledSample> out;
  for (const LabeledSample& s : ds.samples) {
    if (s.split != Split::train) continue;
    const auto it = map.to_local.find(s.label);
    if (it == map.to_local.end()) continue;
    LabeledSample c = s;
    c.label = it->second;
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace detail

/// overlap = true: old gets a seeded `old_fraction` subset of class ids and
/// new gets every class. overlap = false: new gets the complementary ids.
inline IdSplit id_split(const Dataset& ds, double old_fraction, bool overlap, std::uint64_t seed) {
  detail::require(old_fraction > 0.0 && old_fraction < 1.0, ErrorKind::parameter,
                  "id_split: old_fraction must lie in (0, 1)");
  const std::size_t K = ds.spec.num_classes;
  const auto n_old = static_cast<std::size_t>(std::llround(old_fraction * static_cast<double>(K)));
  detail::require(n_old >= 1 && n_old < K, ErrorKind::parameter,
                  "id_split: old_fraction " + std::to_string(old_fraction) + " leaves one side empty for K=" +
                      std::to_string(K));
  std::vector<int> classes(K);
  for (std::size_t k = 0; k < K; ++k) classes[k] = static_cast<int>(k);
  Rng rng(seed);
  rng.shuffle(classes);

  std::vector<int> old_ids(classes.begin(), classes.begin() + static_cast<std::ptrdiff_t>(n_old));
  std::vector<int> new_ids = overlap ? std::vector<int>(classes)
                                     : std::vector<int>(classes.begin() + static_cast<std::ptrdiff_t>(n_old), classes.end());
  IdSplit out;
  out.old_labels = detail::make_label_map(std::move(old_ids));
  out.new_labels = detail::make_label_map(std::move(new_ids));
  out.old_train = detail::relabel_train(ds, out.old_labels);
  out.new_train = detail::relabel_train(ds, out.new_labels);
  return out;
}

}  // namespace bcl
