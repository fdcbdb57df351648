#pragma once

// Retrieval metrics (mAP, CMC top-k), self/cross-test protocols and the two
// compatibility criteria: the pairwise one (new-to-old distances bounded by
// old-to-old distances) and the triplet one (new anchor closer to old
// same-class samples than to old other-class samples).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "bcl/model.hpp"

namespace bcl {

enum class Distance { cosine, euclidean };

inline Distance distance_from_string(std::string_view s) {
  if (s == "cosine") return Distance::cosine;
  if (s == "euclidean") return Distance::euclidean;
  throw Error(ErrorKind::parameter, "unknown distance '" + std::string(s) + "'");
}

inline std::string_view to_string(Distance d) { return d == Distance::cosine ? "cosine" : "euclidean"; }

inline double distance(VecView a, VecView b, Distance metric) {
  if (metric == Distance::euclidean) return std::sqrt(squared_distance(a, b));
  return 1.0 - cosine_similarity(a, b);
}

struct EmbeddedSample {
  std::int64_t id = 0;
  int label = 0;
  Vec v;
};

struct RetrievalTask {
  std::vector<EmbeddedSample> query;
  std::vector<EmbeddedSample> gallery;
  Distance metric = Distance::cosine;
};

inline constexpr std::array<std::size_t, 3> kCmcRanks = {1, 5, 10};

struct RetrievalMetrics {
  double mAP = 0.0;
  std::map<std::size_t, double> cmc;
};

/// Zero-pads an old embedding to width d2 (d2 >= its width).
inline Vec align_dims(VecView old_emb, std::size_t d2) { return zero_pad(old_emb, d2); }

/// Mean over positives of precision at each positive's rank.
inline double average_precision(std::span<const int> ranked_labels, int query_label) {
  double hits = 0.0;
  double sum = 0.0;
  for (std::size_t r = 0; r < ranked_labels.size(); ++r) {
    if (ranked_labels[r] != query_label) continue;
    hits += 1.0;
    sum += hits / static_cast<double>(r + 1);
  }
  detail::require(hits > 0.0, ErrorKind::undefined_query,
                  "average_precision: no gallery item with label " + std::to_string(query_label));
  return sum / hits;
}

/// Gallery labels ordered by ascending distance, ties by ascending gallery id.
inline std::vector<int> ranked_gallery_labels(const EmbeddedSample& query, std::span<const EmbeddedSample> gallery,
                                              Distance metric) {
  struct Scored {
    double d;
    std::int64_t id;
    int label;
  };
  std::vector<Scored> scored;
  scored.reserve(gallery.size());
  for (const EmbeddedSample& g : gallery) scored.push_back({distance(query.v, g.v, metric), g.id, g.label});
  std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
    if (a.d != b.d) return a.d < b.d;
    return a.id < b.id;
  });
  std::vector<int> labels;
  labels.reserve(scored.size());
  for (const Scored& s : scored) labels.push_back(s.label);
  return labels;
}

inline RetrievalMetrics evaluate(const RetrievalTask& task) {
  detail::require(!task.query.empty(), ErrorKind::empty_set, "evaluate: empty query set");
  detail::require(!task.gallery.empty(), ErrorKind::empty_set, "evaluate: empty gallery");
  std::set<std::int64_t> gallery_ids;
  for (const EmbeddedSample& g : task.gallery) gallery_ids.insert(g.id);
  for (const EmbeddedSample& q : task.query)
    detail::require(!gallery_ids.count(q.id), ErrorKind::protocol,
                    "evaluate: id " + std::to_string(q.id) + " is in both query and gallery");

  RetrievalMetrics m;
  for (std::size_t k : kCmcRanks) m.cmc[k] = 0.0;
  for (const EmbeddedSample& q : task.query) {
    const std::vector<int> ranked = ranked_gallery_labels(q, task.gallery, task.metric);
    m.mAP += average_precision(ranked, q.label);
    const auto first = std::find(ranked.begin(), ranked.end(), q.label);
    const auto rank = static_cast<std::size_t>(first - ranked.begin()) + 1;
    for (std::size_t k : kCmcRanks)
      if (rank <= k) m.cmc[k] += 1.0;
  }
  const auto nq = static_cast<double>(task.query.size());
  m.mAP /= nq;
  for (auto& [k, v] : m.cmc) v /= nq;
  return m;
}

inline std::vector<EmbeddedSample> embed(const EncoderParams& enc, std::span<const LabeledSample> samples,
                                         std::size_t width = 0) {
  std::vector<EmbeddedSample> out;
  out.reserve(samples.size());
  for (const LabeledSample& s : samples) {
    Vec v = encode(enc, s.x);
    if (width > v.size()) v = align_dims(v, width);
    out.push_back({s.id, s.label, std::move(v)});
  }
  return out;
}

inline RetrievalMetrics self_test(const EncoderParams& enc, std::span<const LabeledSample> query,
                                  std::span<const LabeledSample> gallery, Distance metric = Distance::cosine) {
  return evaluate({embed(enc, query), embed(enc, gallery), metric});
}

/// Query through the new encoder, gallery through the old one; the narrower side is zero-padded.
inline RetrievalMetrics cross_test(const EncoderParams& new_enc, const EncoderParams& old_enc,
                                   std::span<const LabeledSample> query, std::span<const LabeledSample> gallery,
                                   Distance metric = Distance::cosine) {
  const std::size_t width = std::max(new_enc.d_emb(), old_enc.d_emb());
  return evaluate({embed(new_enc, query, width), embed(old_enc, gallery, width), metric});
}

struct CriterionReport {
  std::optional<double> triplet_rate;   // triplet criterion; empty when no triplet exists
  std::optional<double> pair_rate;  // pairwise criterion; empty when no pair exists
  std::uint64_t triplet_count = 0;  // size of the full triplet set
  std::uint64_t pair_count = 0;
  std::uint64_t triplets_checked = 0;
  std::uint64_t pairs_checked = 0;
  bool sampled = false;
};

/// Rates over all (i, j, k) with y_i = y_j != y_k, i != j, and all ordered
/// pairs i != j. Sets larger than `max_checks` are replaced by a uniform
/// sample (with replacement) of `max_checks` draws from `rng`.
///
/// Pairwise criterion: d(new_i, old_j) >= d(old_i, old_j) when labels differ,
/// <= when they agree. Triplet criterion: d(new_i, old_j) < d(new_i, old_k).
inline CriterionReport criterion_report(std::span<const Vec> new_embs, std::span<const Vec> old_embs,
                                        std::span<const int> labels, std::uint64_t max_checks, Rng& rng,
                                        Distance metric = Distance::cosine) {
  const std::size_t n = labels.size();
  detail::require(new_embs.size() == n && old_embs.size() == n, ErrorKind::dimension,
                  "criterion_report: new/old/labels length mismatch");
  detail::require(std::set<int>(labels.begin(), labels.end()).size() >= 2, ErrorKind::protocol,
                  "criterion_report: at least two labels are required");
  detail::require(max_checks > 0, ErrorKind::parameter, "criterion_report: max_checks must be > 0");

  std::vector<double> cross(n * n), old_old(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      cross[i * n + j] = distance(new_embs[i], old_embs[j], metric);
      old_old[i * n + j] = distance(old_embs[i], old_embs[j], metric);
    }

  std::map<int, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < n; ++i) members[labels[i]].push_back(i);
  std::vector<std::uint64_t> triplets_at(n);
  CriterionReport rep;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t same = members[labels[i]].size();
    triplets_at[i] = static_cast<std::uint64_t>(same - 1) * (n - same);
    rep.triplet_count += triplets_at[i];
  }
  rep.pair_count = static_cast<std::uint64_t>(n) * (n - 1);

  auto pair_ok = [&](std::size_t i, std::size_t j) {
    const double dn = cross[i * n + j];
    const double dold = old_old[i * n + j];
    return labels[i] == labels[j] ? dn <= dold : dn >= dold;
  };
  auto triplet_ok = [&](std::size_t i, std::size_t j, std::size_t k) { return cross[i * n + j] < cross[i * n + k]; };

  // Pairs.
  std::uint64_t pair_hits = 0;
  if (rep.pair_count <= max_checks) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j && pair_ok(i, j)) ++pair_hits;
    rep.pairs_checked = rep.pair_count;
  } else {
    rep.sampled = true;
    for (std::uint64_t t = 0; t < max_checks; ++t) {
      const auto i = static_cast<std::size_t>(rng.index(n));
      auto j = static_cast<std::size_t>(rng.index(n - 1));
      if (j >= i) ++j;
      if (pair_ok(i, j)) ++pair_hits;
    }
    rep.pairs_checked = max_checks;
  }
  if (rep.pairs_checked > 0) rep.pair_rate = static_cast<double>(pair_hits) / static_cast<double>(rep.pairs_checked);

  // Triplets.
  std::uint64_t triplet_hits = 0;
  if (rep.triplet_count <= max_checks) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j : members[labels[i]]) {
        if (j == i) continue;
        for (std::size_t k = 0; k < n; ++k)
          if (labels[k] != labels[i] && triplet_ok(i, j, k)) ++triplet_hits;
      }
    rep.triplets_checked = rep.triplet_count;
  } else {
    rep.sampled = true;
    // Anchor drawn proportionally to its triplet count, then j and k uniformly.
    std::map<int, std::vector<std::size_t>> outside;
    for (const auto& [label, idx] : members)
      for (std::size_t k = 0; k < n; ++k)
        if (labels[k] != label) outside[label].push_back(k);
    std::vector<std::uint64_t> cumulative(n);
    std::uint64_t acc = 0;
    for (std::size_t i = 0; i < n; ++i) cumulative[i] = (acc += triplets_at[i]);
    for (std::uint64_t t = 0; t < max_checks; ++t) {
      const std::uint64_t r = rng.index(rep.triplet_count);
      const auto i = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), r) - cumulative.begin());
      const auto& same = members[labels[i]];
      std::size_t j = same[static_cast<std::size_t>(rng.index(same.size() - 1))];
      if (j == i) j = same.back();
      const auto& other = outside[labels[i]];
      const std::size_t k = other[static_cast<std::size_t>(rng.index(other.size()))];
      if (triplet_ok(i, j, k)) ++triplet_hits;
    }
    rep.triplets_checked = max_checks;
  }
  if (rep.triplets_checked > 0)
    rep.triplet_rate = static_cast<double>(triplet_hits) / static_cast<double>(rep.triplets_checked);
  return rep;
}

}  // namespace bcl
