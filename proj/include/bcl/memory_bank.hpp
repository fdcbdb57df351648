#pragma once

// Frozen store of old-model embeddings with label indexing and credibility
// flags, plus the logit store built once the new classifier head is frozen.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "bcl/model.hpp"

namespace bcl {

struct BankEntry {
  std::int64_t id = 0;
  int label = 0;
  Vec embedding;
  bool credible = true;
};

/// Entries are addressed by slot (position in construction order). All
/// retrieval results are ascending slot lists.
class OldEmbeddingBank {
 public:
  OldEmbeddingBank() = default;

  explicit OldEmbeddingBank(std::vector<BankEntry> entries) : entries_(std::move(entries)) {
    detail::require(!entries_.empty(), ErrorKind::empty_set, "bank: no entries");
    for (std::size_t s = 0; s < entries_.size(); ++s) {
      const auto [it, inserted] = slot_of_.emplace(entries_[s].id, s);
      detail::require(inserted, ErrorKind::parameter, "bank: duplicate id " + std::to_string(entries_[s].id));
      detail::require(all_finite(entries_[s].embedding), ErrorKind::numeric,
                      "bank: non-finite embedding for id " + std::to_string(entries_[s].id));
      by_label_[entries_[s].label].push_back(s);
    }
  }

  const std::vector<BankEntry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  const BankEntry& operator[](std::size_t slot) const { return entries_.at(slot); }
  std::size_t dim() const noexcept { return entries_.empty() ? 0 : entries_.front().embedding.size(); }
  bool filtered() const noexcept { return filtered_; }

  std::optional<std::size_t> slot_of(std::int64_t id) const {
    const auto it = slot_of_.find(id);
    if (it == slot_of_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t credible_count() const {
    return static_cast<std::size_t>(
        std::count_if(entries_.begin(), entries_.end(), [](const BankEntry& e) { return e.credible; }));
  }

  /// Copy with credibility flags replaced. Flags may be set only once.
  OldEmbeddingBank with_credibility(const std::vector<bool>& credible) const {
    detail::require(!filtered_, ErrorKind::protocol, "bank: credibility flags already set");
    detail::require(credible.size() == entries_.size(), ErrorKind::dimension, "bank: flag count mismatch");
    OldEmbeddingBank out = *this;
    for (std::size_t s = 0; s < entries_.size(); ++s) out.entries_[s].credible = credible[s];
    out.filtered_ = true;
    return out;
  }

  /// P(i): credible entries sharing the anchor label, excluding the anchor's own entry.
  std::vector<std::size_t> positives(std::int64_t anchor_id, int anchor_label) const {
    std::vector<std::size_t> out;
    const auto it = by_label_.find(anchor_label);
    if (it == by_label_.end()) return out;
    for (std::size_t s : it->second)
      if (entries_[s].credible && entries_[s].id != anchor_id) out.push_back(s);
    return out;
  }

  /// A(i): every credible entry except the anchor's own. With a cap, all
  /// positives plus at most `negative_cap` negatives drawn uniformly from `rng`.
  std::vector<std::size_t> candidates(std::int64_t anchor_id, int anchor_label,
                                      std::optional<std::size_t> negative_cap, Rng& rng) const {
    std::vector<std::size_t> out;
    if (!negative_cap) {
      out.reserve(entries_.size());
      for (std::size_t s = 0; s < entries_.size(); ++s)
        if (entries_[s].credible && entries_[s].id != anchor_id) out.push_back(s);
      return out;
    }
    std::vector<std::size_t> negatives;
    for (std::size_t s = 0; s < entries_.size(); ++s) {
      const BankEntry& e = entries_[s];
      if (!e.credible || e.id == anchor_id) continue;
      if (e.label == anchor_label)
        out.push_back(s);
      else
        negatives.push_back(s);
    }
    if (*negative_cap < negatives.size()) negatives = rng.sample(std::move(negatives), *negative_cap);
    out.insert(out.end(), negatives.begin(), negatives.end());
    std::sort(out.begin(), out.end());
    return out;
  }

  std::vector<std::int64_t> ids_of(std::span<const std::size_t> slots) const {
    std::vector<std::int64_t> ids;
    ids.reserve(slots.size());
    for (std::size_t s : slots) ids.push_back(entries_.at(s).id);
    return ids;
  }

 private:
  std::vector<BankEntry> entries_;
  std::unordered_map<std::int64_t, std::size_t> slot_of_;
  std::map<int, std::vector<std::size_t>> by_label_;
  bool filtered_ = false;
};

/// One entry per training sample: embedding = encode(old_encoder, x), all credible.
inline OldEmbeddingBank build_bank(const EncoderParams& old_encoder, std::span<const LabeledSample> samples) {
  detail::require(!samples.empty(), ErrorKind::empty_set, "build_bank: empty dataset");
  std::vector<BankEntry> entries;
  entries.reserve(samples.size());
  for (const LabeledSample& s : samples) entries.push_back({s.id, s.label, encode(old_encoder, s.x), true});
  return OldEmbeddingBank(std::move(entries));
}

/// Same entries with unit-length embeddings.
inline OldEmbeddingBank normalized_copy(const OldEmbeddingBank& bank) {
  std::vector<BankEntry> entries(bank.entries().begin(), bank.entries().end());
  for (BankEntry& e : entries) e.embedding = l2_normalize(e.embedding);
  return OldEmbeddingBank(std::move(entries));
}

/// Logits of old embeddings under the frozen new classifier, one per credible bank entry.
class DiscriminativeBank {
 public:
  DiscriminativeBank() = default;

  std::size_t size() const noexcept { return ids_.size(); }
  std::uint64_t classifier_fingerprint() const noexcept { return fingerprint_; }

  /// Logits for a bank slot, or nullptr when the slot is not credible.
  const Vec* logits(std::size_t slot) const {
    if (slot >= index_.size() || index_[slot] < 0) return nullptr;
    return &logits_[static_cast<std::size_t>(index_[slot])];
  }

  const std::vector<std::int64_t>& ids() const noexcept { return ids_; }

  friend DiscriminativeBank build_discriminative_bank(const OldEmbeddingBank&, const ClassifierParams&,
                                                      std::size_t);

 private:
  std::vector<std::int64_t> ids_;
  std::vector<Vec> logits_;
  std::vector<long> index_;  // slot -> position in logits_, -1 when absent
  std::uint64_t fingerprint_ = 0;
};

/// Old embeddings are zero-padded to `d_emb` (the classifier's input width) first.
inline DiscriminativeBank build_discriminative_bank(const OldEmbeddingBank& bank, const ClassifierParams& frozen,
                                                    std::size_t d_emb) {
  detail::require(frozen.frozen, ErrorKind::protocol, "build_discriminative_bank: classifier is not frozen");
  detail::require(frozen.d_emb() == d_emb, ErrorKind::dimension, "build_discriminative_bank: width mismatch");
  DiscriminativeBank out;
  out.fingerprint_ = fingerprint(frozen);
  out.index_.assign(bank.size(), -1);
  for (std::size_t s = 0; s < bank.size(); ++s) {
    const BankEntry& e = bank[s];
    if (!e.credible) continue;
    out.index_[s] = static_cast<long>(out.logits_.size());
    out.ids_.push_back(e.id);
    out.logits_.push_back(classify(frozen, zero_pad(e.embedding, d_emb)));
  }
  return out;
}

inline DiscriminativeBank build_discriminative_bank(const OldEmbeddingBank& bank, const ClassifierParams& frozen) {
  return build_discriminative_bank(bank, frozen, frozen.d_emb());
}

}  // namespace bcl
