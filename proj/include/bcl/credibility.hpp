#pragma once

// Credible-sample detection over the old embedding bank: per-class centers,
// Gaussian-kernel soft assignments, their entropy, and thresholding.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "bcl/memory_bank.hpp"

namespace bcl {

inline constexpr double kVarianceFloor = 1e-6;

struct ClassStatistics {
  std::vector<Vec> centers;
  Vec variances;  // variance of each class's squared-distance set, floored
  std::vector<std::size_t> counts;

  std::size_t num_classes() const noexcept { return centers.size(); }
};

/// Centers and squared-distance variances over all bank entries of each
/// class (credibility flags are ignored: the statistics are one-shot).
inline ClassStatistics class_stats(const OldEmbeddingBank& bank, std::size_t num_classes,
                                   double variance_floor = kVarianceFloor) {
  detail::require(bank.size() > 0, ErrorKind::empty_set, "class_stats: empty bank");
  const std::size_t dim = bank.dim();
  ClassStatistics st;
  st.centers.assign(num_classes, Vec(dim, 0.0));
  st.counts.assign(num_classes, 0);
  st.variances.assign(num_classes, 0.0);

  for (const BankEntry& e : bank.entries()) {
    detail::require(e.label >= 0 && static_cast<std::size_t>(e.label) < num_classes, ErrorKind::index,
                    "class_stats: label " + std::to_string(e.label) + " outside [0, " +
                        std::to_string(num_classes) + ")");
    auto& c = st.centers[static_cast<std::size_t>(e.label)];
    for (std::size_t d = 0; d < dim; ++d) c[d] += e.embedding[d];
    ++st.counts[static_cast<std::size_t>(e.label)];
  }
  for (std::size_t k = 0; k < num_classes; ++k) {
    detail::require(st.counts[k] > 0, ErrorKind::protocol, "class_stats: class " + std::to_string(k) + " has no samples");
    for (double& v : st.centers[k]) v /= static_cast<double>(st.counts[k]);
  }

  // Two-pass variance of the squared distances.
  std::vector<Vec> sq(num_classes);
  for (const BankEntry& e : bank.entries()) {
    const auto k = static_cast<std::size_t>(e.label);
    sq[k].push_back(squared_distance(e.embedding, st.centers[k]));
  }
  for (std::size_t k = 0; k < num_classes; ++k) {
    double mean = 0.0;
    for (double v : sq[k]) mean += v;
    mean /= static_cast<double>(sq[k].size());
    double var = 0.0;
    for (double v : sq[k]) var += (v - mean) * (v - mean);
    var /= static_cast<double>(sq[k].size());
    st.variances[k] = std::max(var, variance_floor);
  }
  return st;
}

/// p_k proportional to exp(-||x - mu_k||^2 / sigma_k), normalized over classes.
inline Vec pseudo_assignment(const ClassStatistics& stats, VecView old_emb) {
  detail::require(stats.num_classes() > 0, ErrorKind::empty_set, "pseudo_assignment: no classes");
  Vec exponent(stats.num_classes());
  for (std::size_t k = 0; k < exponent.size(); ++k)
    exponent[k] = -squared_distance(old_emb, stats.centers[k]) / stats.variances[k];
  return softmax(exponent, 1.0);
}

/// Shannon entropy in nats, with 0 log 0 = 0.
inline double entropy(VecView p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return std::max(h, 0.0);
}

struct FilterReport {
  double threshold = 0.0;
  std::size_t removed_total = 0;
  std::vector<std::size_t> removed_per_class;
  double entropy_min = 0.0;
  double entropy_median = 0.0;
  double entropy_max = 0.0;
  /// Equal-width bins over [0, log K].
  std::vector<std::size_t> histogram;
  std::vector<double> entropies;  // per bank slot
  std::vector<std::string> warnings;
};

struct FilterResult {
  OldEmbeddingBank bank;
  FilterReport report;
};

inline double median_of(std::vector<double> v) {
  detail::require(!v.empty(), ErrorKind::empty_set, "median of empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Clears the credible flag of every entry whose assignment entropy exceeds `threshold`.
inline FilterResult apply_filter(const OldEmbeddingBank& bank, const ClassStatistics& stats, double threshold,
                                 std::size_t histogram_bins = 10) {
  detail::require(threshold >= 0.0 && std::isfinite(threshold), ErrorKind::parameter, "apply_filter: threshold must be >= 0");
  const std::size_t K = stats.num_classes();
  FilterReport rep;
  rep.threshold = threshold;
  rep.removed_per_class.assign(K, 0);
  rep.histogram.assign(histogram_bins, 0);
  rep.entropies.reserve(bank.size());

  std::vector<bool> credible(bank.size(), true);
  std::vector<std::size_t> remaining(K, 0);
  const double h_max = std::log(static_cast<double>(K));
  for (std::size_t s = 0; s < bank.size(); ++s) {
    const BankEntry& e = bank[s];
    const double h = entropy(pseudo_assignment(stats, e.embedding));
    rep.entropies.push_back(h);
    if (histogram_bins > 0) {
      const double frac = h_max > 0.0 ? h / h_max : 0.0;
      const auto bin = std::min(histogram_bins - 1, static_cast<std::size_t>(frac * static_cast<double>(histogram_bins)));
      ++rep.histogram[bin];
    }
    const auto k = static_cast<std::size_t>(e.label);
    if (h > threshold) {
      credible[s] = false;
      ++rep.removed_total;
      ++rep.removed_per_class[k];
    } else {
      ++remaining[k];
    }
  }
  for (std::size_t k = 0; k < K; ++k)
    if (remaining[k] == 0 && rep.removed_per_class[k] > 0)
      rep.warnings.push_back("class " + std::to_string(k) + " has no credible samples left");

  rep.entropy_min = *std::min_element(rep.entropies.begin(), rep.entropies.end());
  rep.entropy_max = *std::max_element(rep.entropies.begin(), rep.entropies.end());
  rep.entropy_median = median_of(rep.entropies);
  return {bank.with_credibility(credible), std::move(rep)};
}

}  // namespace bcl
