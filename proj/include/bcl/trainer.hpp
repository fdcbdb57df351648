#pragma once

// Mini-batch SGD for the old model (plain cross-entropy) and the new model.
//
// Modes for the new model:
//   nccl          stage 1 minimizes L_new + alpha L1; the classifier head is
//                 then frozen, the logit bank is built and stage 2 minimizes
//                 L_new + alpha L1 + beta L2.
//   independent   plain cross-entropy, identical to the old-model trainer.
//   l2_regression L_new + alpha ||phi_new(x) - phi_old(x)||^2.

#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bcl/credibility.hpp"
#include "bcl/losses.hpp"
#include "bcl/memory_bank.hpp"
#include "bcl/model.hpp"

namespace bcl {

enum class TrainMode { nccl, independent, l2_regression };

inline std::string_view to_string(TrainMode m) {
  switch (m) {
    case TrainMode::nccl: return "nccl";
    case TrainMode::independent: return "independent";
    case TrainMode::l2_regression: return "l2_regression";
  }
  return "nccl";
}

inline TrainMode train_mode_from_string(std::string_view s) {
  if (s == "nccl") return TrainMode::nccl;
  if (s == "independent") return TrainMode::independent;
  if (s == "l2_regression") return TrainMode::l2_regression;
  throw Error(ErrorKind::parameter, "unknown mode '" + std::string(s) + "'");
}

struct TrainingConfig {
  TrainMode mode = TrainMode::nccl;
  double alpha = 0.01;
  double beta = 0.01;
  double tau = 1.0;
  double u_factor = 0.5;  // credibility threshold = u_factor * log K_new
  double learning_rate = 0.1;
  int epochs_stage1 = 45;
  int epochs_stage2 = 15;
  std::size_t batch_size = 16;
  std::uint64_t seed = 1;
  bool normalize_embeddings = true;
  std::optional<std::size_t> negative_cap;
  std::size_t hidden = 32;
  std::size_t d_emb = 8;

  int total_epochs() const noexcept { return epochs_stage1 + epochs_stage2; }

  void validate(const std::string& prefix = "train") const {
    auto fail = [&](const std::string& field, const std::string& why) {
      throw Error(ErrorKind::parameter, prefix + "." + field + ": " + why);
    };
    if (!(alpha >= 0.0)) fail("alpha", "must be >= 0");
    if (!(beta >= 0.0)) fail("beta", "must be >= 0");
    if (!(tau > 0.0)) fail("tau", "must be > 0");
    if (!(u_factor > 0.0 && u_factor <= 1.0)) fail("u_factor", "must lie in (0, 1]");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) fail("learning_rate", "must be finite and >= 0");
    if (epochs_stage1 < 0) fail("epochs_stage1", "must be >= 0");
    if (epochs_stage2 < 0) fail("epochs_stage2", "must be >= 0");
    if (batch_size < 1) fail("batch_size", "must be >= 1");
    if (hidden < 1) fail("hidden", "must be >= 1");
    if (d_emb < 2) fail("d_emb", "must be >= 2");
  }
};

struct EpochRecord {
  int epoch = 0;
  int stage = 1;
  double l_new = 0.0;
  double l1 = 0.0;
  double l2 = 0.0;
  double total = 0.0;
  std::size_t skipped_anchors = 0;
};

struct TrainingState {
  EncoderParams encoder;
  ClassifierParams classifier;
  bool classifier_frozen = false;
  int epoch = 0;
  std::vector<EpochRecord> loss_history;
  std::optional<ClassifierParams> classifier_at_freeze;
  /// Bank entries without the credible flag that reached a P(i)/A(i); stays 0.
  std::size_t noncredible_accesses = 0;
};

/// Old model as seen by the new-model pipeline. Reads of the classifier head are counted.
class OldModel {
 public:
  OldModel(EncoderParams encoder, ClassifierParams classifier, std::vector<EpochRecord> history = {})
      : encoder_(std::move(encoder)), classifier_(std::move(classifier)), history_(std::move(history)) {}

  OldModel(const OldModel& o) : encoder_(o.encoder_), classifier_(o.classifier_), history_(o.history_) {}

  const EncoderParams& encoder() const noexcept { return encoder_; }
  const ClassifierParams& classifier() const {
    classifier_reads_.fetch_add(1, std::memory_order_relaxed);
    return classifier_;
  }
  const std::vector<EpochRecord>& history() const noexcept { return history_; }
  std::size_t classifier_reads() const noexcept { return classifier_reads_.load(); }

 private:
  EncoderParams encoder_;
  ClassifierParams classifier_;
  std::vector<EpochRecord> history_;
  mutable std::atomic<std::size_t> classifier_reads_{0};
};

/// p <- p - lr g.
inline void sgd_step(std::span<double> params, std::span<const double> grads, double learning_rate) {
  detail::require(params.size() == grads.size(), ErrorKind::dimension, "sgd_step: size mismatch");
  detail::require(all_finite(grads), ErrorKind::numeric, "sgd_step: non-finite gradient");
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= learning_rate * grads[i];
}

inline void sgd_step(EncoderParams& p, const EncoderGrads& g, double lr) {
  sgd_step(p.W1.data(), g.W1.data(), lr);
  sgd_step(p.b1, g.b1, lr);
  sgd_step(p.W2.data(), g.W2.data(), lr);
  sgd_step(p.b2, g.b2, lr);
}

/// A frozen head is left untouched.
inline void sgd_step(ClassifierParams& c, const ClassifierGrads& g, double lr) {
  if (c.frozen) return;
  sgd_step(c.W.data(), g.W.data(), lr);
  sgd_step(c.b, g.b, lr);
}

namespace detail {

struct StepTerms {
  double l_new = 0.0;
  double l1 = 0.0;
  double l2 = 0.0;
  bool skipped = false;
};

/// Old-bank quantities the new-model loss needs, prepared once.
class BankView {
 public:
  BankView(const OldEmbeddingBank& bank, std::size_t d_new, bool normalize) : bank_(&bank) {
    require(bank.dim() <= d_new, ErrorKind::dimension,
            "old embedding width " + std::to_string(bank.dim()) + " exceeds new width " + std::to_string(d_new));
    raw_.reserve(bank.size());
    contrast_.reserve(bank.size());
    for (const BankEntry& e : bank.entries()) {
      Vec padded = zero_pad(e.embedding, d_new);
      contrast_.push_back(normalize ? l2_normalize(padded) : padded);
      raw_.push_back(std::move(padded));
    }
  }

  const OldEmbeddingBank& bank() const noexcept { return *bank_; }
  const Vec& raw(std::size_t slot) const { return raw_[slot]; }
  const Vec& contrast(std::size_t slot) const { return contrast_[slot]; }

 private:
  const OldEmbeddingBank* bank_;
  std::vector<Vec> raw_;       // zero-padded old embeddings
  std::vector<Vec> contrast_;  // what L1 contrasts against
};

struct AnchorSets {
  std::vector<std::size_t> candidates;  // bank slots
  std::vector<std::size_t> positives;   // positions within candidates
  std::vector<double> weights;
  std::size_t noncredible = 0;
};

inline AnchorSets anchor_sets(const BankView& view, const LabeledSample& s, std::optional<std::size_t> cap, Rng& rng) {
  const OldEmbeddingBank& bank = view.bank();
  const auto own = bank.slot_of(s.id);
  require(own.has_value(), ErrorKind::protocol, "anchor id " + std::to_string(s.id) + " has no old bank entry");
  AnchorSets out;
  const std::vector<std::size_t> pos = bank.positives(s.id, s.label);
  if (pos.empty()) return out;
  out.candidates = bank.candidates(s.id, s.label, cap, rng);
  std::size_t c = 0;
  for (std::size_t p : pos) {
    while (out.candidates[c] != p) ++c;
    out.positives.push_back(c);
    out.weights.push_back(consensus_weight(bank[*own].embedding, bank[p].embedding));
  }
  for (std::size_t slot : out.candidates)
    if (!bank[slot].credible) ++out.noncredible;
  return out;
}

}  // namespace detail

/// Runs the loss terms for one anchor and accumulates its parameter gradients.
/// `enc_grads`/`cls_grads` may be null for a value-only pass.
struct StepContext {
  const TrainingConfig& cfg;
  const detail::BankView* bank = nullptr;
  const DiscriminativeBank* logits_bank = nullptr;
  bool stage2 = false;
};

inline detail::StepTerms anchor_step(const StepContext& ctx, const EncoderParams& enc, const ClassifierParams& cls,
                                     const LabeledSample& s, Rng& rng, EncoderGrads* enc_grads,
                                     ClassifierGrads* cls_grads, std::size_t* noncredible) {
  const TrainingConfig& cfg = ctx.cfg;
  detail::StepTerms t;
  const EncoderTrace trace = encode_traced(enc, s.x);
  const Vec& z = trace.output;
  const Vec logits = classify(cls, z);
  detail::require(s.label >= 0, ErrorKind::index, "negative label");
  const LossWithGrad ce = loss_classification(logits, static_cast<std::size_t>(s.label));
  t.l_new = ce.value;
  Vec g_logits = ce.grad;
  Vec gz(z.size(), 0.0);

  if (cfg.mode == TrainMode::nccl && (cfg.alpha > 0.0 || (ctx.stage2 && cfg.beta > 0.0))) {
    detail::AnchorSets sets = detail::anchor_sets(*ctx.bank, s, cfg.negative_cap, rng);
    if (noncredible != nullptr) *noncredible += sets.noncredible;
    if (sets.positives.empty()) {
      t.skipped = true;
    } else {
      if (cfg.alpha > 0.0) {
        ContrastiveView v{{}, sets.positives, sets.weights};
        v.candidates.reserve(sets.candidates.size());
        for (std::size_t slot : sets.candidates) v.candidates.emplace_back(ctx.bank->contrast(slot));
        const Vec anchor = cfg.normalize_embeddings ? l2_normalize(z) : z;
        const LossWithGrad l1 = loss_l1(anchor, v, cfg.tau);
        t.l1 = l1.value;
        const Vec g = cfg.normalize_embeddings ? l2_normalize_backward(z, l1.grad) : l1.grad;
        for (std::size_t d = 0; d < gz.size(); ++d) gz[d] += cfg.alpha * g[d];
      }
      if (ctx.stage2 && cfg.beta > 0.0) {
        detail::require(ctx.logits_bank != nullptr, ErrorKind::protocol, "stage 2 without a logit bank");
        ContrastiveView v{{}, sets.positives, sets.weights};
        v.candidates.reserve(sets.candidates.size());
        for (std::size_t slot : sets.candidates) {
          const Vec* l = ctx.logits_bank->logits(slot);
          detail::require(l != nullptr, ErrorKind::protocol, "logit bank is missing a credible slot");
          v.candidates.emplace_back(*l);
        }
        const LossWithGrad l2 = loss_l2_discriminative(logits, v, cfg.tau);
        t.l2 = l2.value;
        for (std::size_t k = 0; k < g_logits.size(); ++k) g_logits[k] += cfg.beta * l2.grad[k];
      }
    }
  } else if (cfg.mode == TrainMode::l2_regression && cfg.alpha > 0.0) {
    const auto own = ctx.bank->bank().slot_of(s.id);
    detail::require(own.has_value(), ErrorKind::protocol,
                    "anchor id " + std::to_string(s.id) + " has no old bank entry");
    const LossWithGrad reg = loss_l2_regression(z, ctx.bank->raw(*own));
    t.l1 = reg.value;
    for (std::size_t d = 0; d < gz.size(); ++d) gz[d] += cfg.alpha * reg.grad[d];
  }

  if (enc_grads != nullptr) {
    const Vec dz = classify_backward(cls, z, g_logits, cls.frozen ? nullptr : cls_grads);
    for (std::size_t d = 0; d < gz.size(); ++d) gz[d] += dz[d];
    encode_backward(enc, s.x, trace, gz, *enc_grads);
  }
  return t;
}

namespace detail {

inline void check_labels(std::span<const LabeledSample> data, std::size_t num_classes) {
  for (const LabeledSample& s : data)
    require(s.label >= 0 && static_cast<std::size_t>(s.label) < num_classes, ErrorKind::index,
            "sample " + std::to_string(s.id) + " label " + std::to_string(s.label) + " outside [0, " +
                std::to_string(num_classes) + ")");
}

/// Objective over the whole training set at fixed parameters.
inline EpochRecord objective(const StepContext& ctx, const EncoderParams& enc, const ClassifierParams& cls,
                             std::span<const LabeledSample> data, std::uint64_t seed) {
  Rng rng(seed);
  EpochRecord r;
  for (const LabeledSample& s : data) {
    const StepTerms t = anchor_step(ctx, enc, cls, s, rng, nullptr, nullptr, nullptr);
    r.l_new += t.l_new;
    r.l1 += t.l1;
    r.l2 += t.l2;
  }
  const auto n = static_cast<double>(data.size());
  r.l_new /= n;
  r.l1 /= n;
  r.l2 /= n;
  r.total = loss_total(r.l_new, r.l1, ctx.stage2 ? r.l2 : 0.0, ctx.cfg.alpha, ctx.stage2 ? ctx.cfg.beta : 0.0);
  return r;
}

inline void run_epoch(const StepContext& ctx, TrainingState& st, std::span<const LabeledSample> data, Rng& rng) {
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);

  std::size_t skipped = 0;
  for (std::size_t start = 0; start < order.size(); start += ctx.cfg.batch_size) {
    const std::size_t end = std::min(order.size(), start + ctx.cfg.batch_size);
    std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(end));
    std::sort(batch.begin(), batch.end(), [&](std::size_t a, std::size_t b) { return data[a].id < data[b].id; });

    EncoderGrads eg(st.encoder);
    ClassifierGrads cg(st.classifier);
    for (std::size_t idx : batch) {
      const StepTerms t = anchor_step(ctx, st.encoder, st.classifier, data[idx], rng, &eg, &cg, &st.noncredible_accesses);
      if (!std::isfinite(t.l_new) || !std::isfinite(t.l1) || !std::isfinite(t.l2))
        throw Error(ErrorKind::numeric, "loss diverged at epoch " + std::to_string(st.epoch + 1));
      if (t.skipped) ++skipped;
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    eg.scale(inv);
    cg.scale(inv);
    try {
      sgd_step(st.encoder, eg, ctx.cfg.learning_rate);
      sgd_step(st.classifier, cg, ctx.cfg.learning_rate);
    } catch (const Error& e) {
      throw Error(ErrorKind::numeric, "divergence at epoch " + std::to_string(st.epoch + 1) + " (" + e.what() + ")");
    }
  }
  ++st.epoch;
  EpochRecord rec = objective(ctx, st.encoder, st.classifier, data, ctx.cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  rec.epoch = st.epoch;
  rec.stage = ctx.stage2 ? 2 : 1;
  rec.skipped_anchors = skipped;
  if (!std::isfinite(rec.total))
    throw Error(ErrorKind::numeric, "loss diverged at epoch " + std::to_string(st.epoch));
  st.loss_history.push_back(rec);
}

inline TrainingState init_state(const TrainingConfig& cfg, std::size_t d_in, std::size_t num_classes, Rng& rng) {
  TrainingState st;
  st.encoder = init_encoder(d_in, cfg.hidden, cfg.d_emb, rng);
  st.classifier = init_classifier(num_classes, cfg.d_emb, rng);
  return st;
}

}  // namespace detail

/// Plain cross-entropy training over all epochs of `cfg` (mode is ignored).
inline TrainingState train_cross_entropy(const TrainingConfig& cfg, std::span<const LabeledSample> data,
                                         std::size_t num_classes) {
  cfg.validate();
  detail::require(!data.empty(), ErrorKind::empty_set, "train: empty training set");
  detail::check_labels(data, num_classes);
  TrainingConfig plain = cfg;
  plain.mode = TrainMode::independent;
  Rng rng(cfg.seed);
  TrainingState st = detail::init_state(plain, data.front().x.size(), num_classes, rng);
  const StepContext ctx{plain, nullptr, nullptr, false};
  for (int e = 0; e < plain.total_epochs(); ++e) detail::run_epoch(ctx, st, data, rng);
  return st;
}

inline OldModel train_old(const TrainingConfig& cfg, std::span<const LabeledSample> old_train, std::size_t num_classes) {
  TrainingState st = train_cross_entropy(cfg, old_train, num_classes);
  return OldModel(std::move(st.encoder), std::move(st.classifier), std::move(st.loss_history));
}

/// Trains the new model against the (already filtered) old embedding bank.
inline TrainingState train(const TrainingConfig& cfg, std::span<const LabeledSample> new_train, std::size_t num_classes,
                           const OldEmbeddingBank& bank) {
  if (cfg.mode == TrainMode::independent) return train_cross_entropy(cfg, new_train, num_classes);
  cfg.validate();
  detail::require(!new_train.empty(), ErrorKind::empty_set, "train: empty training set");
  detail::check_labels(new_train, num_classes);

  Rng rng(cfg.seed);
  TrainingState st = detail::init_state(cfg, new_train.front().x.size(), num_classes, rng);
  const detail::BankView view(bank, cfg.d_emb, cfg.normalize_embeddings && cfg.mode == TrainMode::nccl);

  const bool two_stage = cfg.mode == TrainMode::nccl;
  const int stage1 = two_stage ? cfg.epochs_stage1 : cfg.total_epochs();
  const StepContext ctx1{cfg, &view, nullptr, false};
  for (int e = 0; e < stage1; ++e) detail::run_epoch(ctx1, st, new_train, rng);

  if (two_stage && cfg.epochs_stage2 > 0) {
    st.classifier.frozen = true;
    st.classifier_frozen = true;
    st.classifier_at_freeze = st.classifier;
    const DiscriminativeBank logits_bank = build_discriminative_bank(bank, st.classifier, cfg.d_emb);
    const StepContext ctx2{cfg, &view, &logits_bank, true};
    for (int e = 0; e < cfg.epochs_stage2; ++e) detail::run_epoch(ctx2, st, new_train, rng);
  }
  return st;
}

}  // namespace bcl
