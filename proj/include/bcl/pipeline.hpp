#pragma once

// generate -> train old -> build + filter bank -> train new -> evaluate.

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bcl/serialization.hpp"

namespace bcl {

struct ProtocolOptions {
  double old_fraction = 0.5;
  bool overlap = true;
};

struct EvalOptions {
  Distance metric = Distance::cosine;
  std::uint64_t max_checks = 200000;
};

struct RunConfig {
  std::string run_name = "reference";
  std::string output_dir;
  std::uint64_t seed = 1;
  DataSpec data;
  ProtocolOptions protocol;
  TrainingConfig train_old;
  TrainingConfig train_new;
  EvalOptions eval;

  /// Sub-seeds derived from the top-level seed.
  std::uint64_t data_seed() const noexcept { return seed; }
  std::uint64_t split_seed() const noexcept { return seed + 1000; }
  std::uint64_t old_seed() const noexcept { return seed + 2000; }
  std::uint64_t new_seed() const noexcept { return seed + 3000; }
  std::uint64_t eval_seed() const noexcept { return seed + 4000; }

  /// Effective sub-configs with derived seeds applied.
  DataSpec effective_data() const {
    DataSpec d = data;
    d.seed = data_seed();
    return d;
  }
  TrainingConfig effective_old() const {
    TrainingConfig c = train_old;
    c.mode = TrainMode::independent;
    c.seed = old_seed();
    return c;
  }
  TrainingConfig effective_new() const {
    TrainingConfig c = train_new;
    c.seed = new_seed();
    return c;
  }

  void validate() const {
    effective_data().validate();
    train_old.validate("train_old");
    train_new.validate("train_new");
    if (!(protocol.old_fraction > 0.0 && protocol.old_fraction < 1.0))
      throw Error(ErrorKind::parameter, "protocol.old_fraction: must lie in (0, 1)");
    if (eval.max_checks == 0) throw Error(ErrorKind::parameter, "eval.max_checks: must be > 0");
  }
};

/// Defaults used by the acceptance suite and `bcl run` without a config.
inline RunConfig reference_config() {
  RunConfig c;
  c.train_old.mode = TrainMode::independent;
  c.train_old.hidden = 16;
  c.train_old.d_emb = 8;
  c.train_old.epochs_stage1 = 40;
  c.train_old.epochs_stage2 = 0;
  c.train_new.mode = TrainMode::nccl;
  c.train_new.hidden = 32;
  c.train_new.d_emb = 8;
  c.train_new.learning_rate = 0.05;
  c.train_new.normalize_embeddings = false;
  return c;
}

// ---- config (de)serialization --------------------------------------------------------

inline json to_json(const TrainingConfig& c) {
  return {{"mode", std::string(to_string(c.mode))},
          {"alpha", c.alpha},
          {"beta", c.beta},
          {"tau", c.tau},
          {"u_factor", c.u_factor},
          {"learning_rate", c.learning_rate},
          {"epochs_stage1", c.epochs_stage1},
          {"epochs_stage2", c.epochs_stage2},
          {"batch_size", c.batch_size},
          {"normalize_embeddings", c.normalize_embeddings},
          {"negative_cap", c.negative_cap ? json(*c.negative_cap) : json(nullptr)},
          {"hidden", c.hidden},
          {"d_emb", c.d_emb}};
}

inline json to_json(const RunConfig& c) {
  json data = to_json(c.data);
  data.erase("seed");
  return {{"run_name", c.run_name},
          {"seed", c.seed},
          {"data", data},
          {"protocol", {{"old_fraction", c.protocol.old_fraction}, {"overlap", c.protocol.overlap}}},
          {"train_old", to_json(c.train_old)},
          {"train_new", to_json(c.train_new)},
          {"eval", {{"distance", std::string(to_string(c.eval.metric))}, {"max_checks", c.eval.max_checks}}}};
}

namespace detail {

// Reads every key of `j` into the matching member; unknown keys are config errors.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw Error(ErrorKind::parameter, path_ + ": expected an object");
  }

  template <typename T>
  void read(const char* key, T& into) {
    seen_.push_back(key);
    if (!j_.contains(key)) return;
    try {
      into = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw Error(ErrorKind::parameter, name(key) + ": " + e.what());
    }
  }

  void read_optional(const char* key, std::optional<std::size_t>& into) {
    seen_.push_back(key);
    if (!j_.contains(key)) return;
    if (j_.at(key).is_null()) {
      into.reset();
      return;
    }
    std::size_t v = 0;
    read(key, v);
    into = v;
  }

  const json* child(const char* key) {
    seen_.push_back(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string name(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (std::find(seen_.begin(), seen_.end(), k) == seen_.end())
        throw Error(ErrorKind::parameter, (path_.empty() ? k : path_ + "." + k) + ": unknown config key");
  }

 private:
  const json& j_;
  std::string path_;
  std::vector<std::string> seen_;
};

inline void read_training(const json& j, const std::string& path, TrainingConfig& c) {
  ObjectReader r(j, path);
  std::string mode(to_string(c.mode));
  r.read("mode", mode);
  c.mode = train_mode_from_string(mode);
  r.read("alpha", c.alpha);
  r.read("beta", c.beta);
  r.read("tau", c.tau);
  r.read("u_factor", c.u_factor);
  r.read("learning_rate", c.learning_rate);
  r.read("epochs_stage1", c.epochs_stage1);
  r.read("epochs_stage2", c.epochs_stage2);
  r.read("batch_size", c.batch_size);
  r.read("normalize_embeddings", c.normalize_embeddings);
  r.read_optional("negative_cap", c.negative_cap);
  r.read("hidden", c.hidden);
  r.read("d_emb", c.d_emb);
  r.finish();
}

}  // namespace detail

/// Parses over `base`; keys absent from `j` keep their base values.
inline RunConfig run_config_from_json(const json& j, RunConfig base = reference_config()) {
  RunConfig c = std::move(base);
  detail::ObjectReader r(j, "");
  r.read("run_name", c.run_name);
  r.read("output_dir", c.output_dir);
  r.read("seed", c.seed);
  if (const json* d = r.child("data")) {
    detail::ObjectReader dr(*d, "data");
    dr.read("num_classes", c.data.num_classes);
    dr.read("subclusters_per_class", c.data.subclusters_per_class);
    dr.read("samples_per_class", c.data.samples_per_class);
    dr.read("d_in", c.data.d_in);
    dr.read("class_spread", c.data.class_spread);
    dr.read("subcluster_spread", c.data.subcluster_spread);
    dr.read("noise_sigma", c.data.noise_sigma);
    dr.read("outlier_fraction", c.data.outlier_fraction);
    if (const json* s = dr.child("split")) {
      detail::ObjectReader sr(*s, "data.split");
      sr.read("train", c.data.split.train);
      sr.read("query", c.data.split.query);
      sr.read("gallery", c.data.split.gallery);
      sr.finish();
    }
    dr.finish();
  }
  if (const json* p = r.child("protocol")) {
    detail::ObjectReader pr(*p, "protocol");
    pr.read("old_fraction", c.protocol.old_fraction);
    pr.read("overlap", c.protocol.overlap);
    pr.finish();
  }
  if (const json* t = r.child("train_old")) detail::read_training(*t, "train_old", c.train_old);
  if (const json* t = r.child("train_new")) detail::read_training(*t, "train_new", c.train_new);
  if (const json* e = r.child("eval")) {
    detail::ObjectReader er(*e, "eval");
    std::string metric(to_string(c.eval.metric));
    er.read("distance", metric);
    c.eval.metric = distance_from_string(metric);
    er.read("max_checks", c.eval.max_checks);
    er.finish();
  }
  r.finish();
  return c;
}

/// Applies `a.b.c=value` to a config document. The value is parsed as JSON
/// when possible and kept as a string otherwise.
inline void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw Error(ErrorKind::parameter, "override '" + assignment + "' is not of the form key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  json* node = &config;
  std::size_t start = 0;
  while (true) {
    const auto dot_pos = path.find('.', start);
    const std::string key = path.substr(start, dot_pos == std::string::npos ? std::string::npos : dot_pos - start);
    if (key.empty()) throw Error(ErrorKind::parameter, "override '" + path + "' has an empty path segment");
    if (dot_pos == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    json& next = (*node)[key];
    if (next.is_null()) next = json::object();
    if (!next.is_object()) throw Error(ErrorKind::parameter, "override '" + path + "': '" + key + "' is not a section");
    node = &next;
    start = dot_pos + 1;
  }
}

inline std::string config_hash(const RunConfig& c) { return hex64(fnv1a(to_json(c).dump())); }

// ---- run --------------------------------------------------------------------------------

struct RunResult {
  json metrics;
  Dataset dataset;
  IdSplit split;
  std::optional<OldModel> old_model;
  std::optional<TrainingState> new_state;
  std::optional<FilterResult> filter;
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream ss;
  ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return ss.str();
}

namespace detail {

inline std::vector<EmbeddedSample> embed_width(const EncoderParams& enc, std::span<const LabeledSample> s,
                                               std::size_t width) {
  return embed(enc, s, width);
}

struct FilterBreakdown {
  std::size_t outliers_in_bank = 0;
  std::size_t outliers_removed = 0;
  std::size_t inliers_in_bank = 0;
  std::size_t inliers_removed = 0;
};

inline FilterBreakdown filter_breakdown(const OldEmbeddingBank& filtered, const std::set<std::int64_t>& outliers) {
  FilterBreakdown b;
  for (const BankEntry& e : filtered.entries()) {
    const bool outlier = outliers.count(e.id) > 0;
    if (outlier) {
      ++b.outliers_in_bank;
      if (!e.credible) ++b.outliers_removed;
    } else {
      ++b.inliers_in_bank;
      if (!e.credible) ++b.inliers_removed;
    }
  }
  return b;
}

}  // namespace detail

/// Entropy filter at threshold u_factor * log K. Flags are computed on unit
/// vectors and applied to the raw bank.
inline FilterResult filter_bank(const OldEmbeddingBank& bank, std::size_t num_classes, double u_factor) {
  // the variance of squared distances makes a raw-space kernel width depend on the old embedding scale
  const OldEmbeddingBank scored = normalized_copy(bank);
  const ClassStatistics stats = class_stats(scored, num_classes);
  FilterResult fr = apply_filter(scored, stats, u_factor * std::log(static_cast<double>(num_classes)));
  std::vector<bool> flags;
  for (const BankEntry& e : fr.bank.entries()) flags.push_back(e.credible);
  return {bank.with_credibility(flags), std::move(fr.report)};
}

/// Runs the whole experiment. With a non-empty `cfg.output_dir`, writes
/// config.json, metrics.json, checkpoints, the dataset and embedding dumps.
/// On failure an incomplete metrics.json is written before rethrowing.
inline RunResult run_experiment(const RunConfig& cfg) {
  namespace fs = std::filesystem;
  const fs::path out = cfg.output_dir;
  const bool write = !cfg.output_dir.empty();
  const std::string hash = config_hash(cfg);

  RunResult res;
  json& m = res.metrics;
  m["schema_version"] = 1;
  m["status"] = "incomplete";
  m["meta"] = {{"run_name", cfg.run_name},
               {"config_hash", hash},
               {"seed", cfg.seed},
               {"timestamps", {{"started", utc_timestamp()}}}};
  m["config"] = to_json(cfg);

  try {
    cfg.validate();
    if (write) io::write_text(out / "config.json", to_json(cfg).dump(2) + "\n");

    res.dataset = generate(cfg.effective_data());
    res.split = id_split(res.dataset, cfg.protocol.old_fraction, cfg.protocol.overlap, cfg.split_seed());
    const std::size_t k_old = res.split.old_labels.size();
    const std::size_t k_new = res.split.new_labels.size();
    m["data"] = {{"num_samples", res.dataset.samples.size()},
                 {"num_classes", cfg.data.num_classes},
                 {"k_old", k_old},
                 {"k_new", k_new},
                 {"old_train_size", res.split.old_train.size()},
                 {"new_train_size", res.split.new_train.size()},
                 {"old_classes", res.split.old_labels.to_global},
                 {"new_classes", res.split.new_labels.to_global},
                 {"planted_outliers", res.dataset.planted_outlier_ids.size()}};
    if (write) write_dataset(res.dataset, out / "dataset.jsonl");

    const TrainingConfig old_cfg = cfg.effective_old();
    res.old_model.emplace(train_old(old_cfg, res.split.old_train, k_old));
    const EncoderParams& old_enc = res.old_model->encoder();

    const OldEmbeddingBank bank = build_bank(old_enc, res.split.new_train);
    const TrainingConfig new_cfg = cfg.effective_new();
    res.filter.emplace(filter_bank(bank, k_new, new_cfg.u_factor));
    json filter = to_json(res.filter->report);
    const auto br = detail::filter_breakdown(res.filter->bank, res.dataset.planted_outlier_ids);
    filter["planted_outliers_in_bank"] = br.outliers_in_bank;
    filter["planted_outliers_removed"] = br.outliers_removed;
    filter["inliers_in_bank"] = br.inliers_in_bank;
    filter["inliers_removed"] = br.inliers_removed;
    m["filter_report"] = filter;

    // Baselines train against the unfiltered bank; only nccl consumes credibility flags.
    const OldEmbeddingBank& train_bank = new_cfg.mode == TrainMode::nccl ? res.filter->bank : bank;
    res.new_state.emplace(train(new_cfg, res.split.new_train, k_new, train_bank));
    const TrainingState& ns = *res.new_state;

    m["loss_history"] = {{"old", to_json(res.old_model->history())}, {"new", to_json(ns.loss_history)}};
    m["classifier"] = {{"frozen", ns.classifier_frozen},
                       {"fingerprint_at_freeze",
                        ns.classifier_at_freeze ? json(hex64(fingerprint(*ns.classifier_at_freeze))) : json(nullptr)},
                       {"fingerprint_final", hex64(fingerprint(ns.classifier))}};

    const std::vector<LabeledSample> query = res.dataset.split(Split::query);
    const std::vector<LabeledSample> gallery = res.dataset.split(Split::gallery);
    const RetrievalMetrics self_old = self_test(old_enc, query, gallery, cfg.eval.metric);
    const RetrievalMetrics self_new = self_test(ns.encoder, query, gallery, cfg.eval.metric);
    const RetrievalMetrics cross = cross_test(ns.encoder, old_enc, query, gallery, cfg.eval.metric);
    m["retrieval"] = {{"self_old", to_json(self_old)}, {"self_new", to_json(self_new)}, {"cross", to_json(cross)}};

    // Criterion rates over every evaluation sample (query + gallery).
    std::vector<LabeledSample> eval_set = query;
    eval_set.insert(eval_set.end(), gallery.begin(), gallery.end());
    const std::size_t width = std::max(ns.encoder.d_emb(), old_enc.d_emb());
    const auto new_embs = detail::embed_width(ns.encoder, eval_set, width);
    const auto old_embs = detail::embed_width(old_enc, eval_set, width);
    std::vector<Vec> nv, ov;
    std::vector<int> labels;
    for (std::size_t i = 0; i < eval_set.size(); ++i) {
      nv.push_back(new_embs[i].v);
      ov.push_back(old_embs[i].v);
      labels.push_back(eval_set[i].label);
    }
    Rng crit_rng(cfg.eval_seed());
    m["criterion_report"] = to_json(criterion_report(nv, ov, labels, cfg.eval.max_checks, crit_rng, cfg.eval.metric));

    m["instrumentation"] = {{"old_classifier_reads", res.old_model->classifier_reads()},
                            {"noncredible_bank_accesses", ns.noncredible_accesses}};

    if (write) {
      io::write_text(out / "old_model.json",
                     checkpoint_json(old_enc, res.old_model->classifier(), cfg.old_seed(), hash).dump(2) + "\n");
      io::write_text(out / "new_model.json",
                     checkpoint_json(ns.encoder, ns.classifier, cfg.new_seed(), hash).dump(2) + "\n");
      io::write_text(out / "embeddings" / "query_new.jsonl", embeddings_jsonl(embed(ns.encoder, query)));
      io::write_text(out / "embeddings" / "query_old.jsonl", embeddings_jsonl(embed(old_enc, query)));
      io::write_text(out / "embeddings" / "gallery_new.jsonl", embeddings_jsonl(embed(ns.encoder, gallery)));
      io::write_text(out / "embeddings" / "gallery_old.jsonl", embeddings_jsonl(embed(old_enc, gallery)));
    }
    m["status"] = "complete";
  } catch (const Error& e) {
    m["error"] = {{"kind", std::string(to_string(e.kind()))}, {"message", e.what()}};
    m["meta"]["timestamps"]["finished"] = utc_timestamp();
    if (write) {
      try {
        io::write_text(out / "metrics.json", m.dump(2) + "\n");
      } catch (const Error&) {
      }
    }
    throw;
  }
  m["meta"]["timestamps"]["finished"] = utc_timestamp();
  if (write) io::write_text(out / "metrics.json", m.dump(2) + "\n");
  return res;
}

// ---- schema ---------------------------------------------------------------------------------

/// Problems found in a finished metrics document; empty when it conforms.
inline std::vector<std::string> validate_metrics(const json& m) {
  std::vector<std::string> problems;
  auto need = [&](const json& j, const std::string& path, const char* key, json::value_t type) {
    if (!j.is_object() || !j.contains(key)) {
      problems.push_back(path + "." + key + " missing");
      return;
    }
    const json& v = j.at(key);
    const bool number = type == json::value_t::number_float;
    const bool ok = number ? v.is_number() : (type == json::value_t::number_unsigned ? v.is_number_integer() : v.type() == type);
    if (!ok) problems.push_back(path + "." + key + " has the wrong type");
  };
  using vt = json::value_t;
  need(m, "$", "schema_version", vt::number_unsigned);
  need(m, "$", "status", vt::string);
  if (m.value("status", "") != "complete") problems.push_back("$.status is not 'complete'");
  for (const char* k : {"meta", "config", "data", "filter_report", "loss_history", "retrieval", "criterion_report",
                        "instrumentation", "classifier"})
    need(m, "$", k, vt::object);
  if (!problems.empty()) return problems;

  need(m["meta"], "$.meta", "run_name", vt::string);
  need(m["meta"], "$.meta", "config_hash", vt::string);
  need(m["meta"], "$.meta", "seed", vt::number_unsigned);
  need(m["meta"], "$.meta", "timestamps", vt::object);

  const json& f = m["filter_report"];
  for (const char* k : {"threshold", "entropy_min", "entropy_median", "entropy_max"}) need(f, "$.filter_report", k, vt::number_float);
  for (const char* k : {"removed_total", "planted_outliers_in_bank", "planted_outliers_removed", "inliers_in_bank",
                        "inliers_removed"})
    need(f, "$.filter_report", k, vt::number_unsigned);
  for (const char* k : {"removed_per_class", "entropy_histogram", "warnings"}) need(f, "$.filter_report", k, vt::array);

  for (const char* side : {"old", "new"}) {
    need(m["loss_history"], "$.loss_history", side, vt::array);
    if (!m["loss_history"].contains(side)) continue;
    for (const json& r : m["loss_history"][side]) {
      for (const char* k : {"l_new", "l1", "l2", "total"}) need(r, std::string("$.loss_history.") + side + "[]", k, vt::number_float);
      for (const char* k : {"epoch", "stage", "skipped_anchors"})
        need(r, std::string("$.loss_history.") + side + "[]", k, vt::number_unsigned);
    }
  }
  for (const char* which : {"self_old", "self_new", "cross"}) {
    need(m["retrieval"], "$.retrieval", which, vt::object);
    if (!m["retrieval"].contains(which)) continue;
    const json& r = m["retrieval"][which];
    const std::string path = std::string("$.retrieval.") + which;
    need(r, path, "mAP", vt::number_float);
    need(r, path, "cmc", vt::object);
    if (r.contains("cmc"))
      for (const char* k : {"1", "5", "10"}) need(r["cmc"], path + ".cmc", k, vt::number_float);
  }
  const json& c = m["criterion_report"];
  for (const char* k : {"triplet_rate", "pair_rate"})
    if (!c.contains(k) || !(c[k].is_number() || c[k].is_null())) problems.push_back(std::string("$.criterion_report.") + k + " missing");
  for (const char* k : {"triplet_count", "pair_count", "triplets_checked", "pairs_checked"})
    need(c, "$.criterion_report", k, vt::number_unsigned);
  need(c, "$.criterion_report", "sampled", vt::boolean);
  for (const char* k : {"old_classifier_reads", "noncredible_bank_accesses"})
    need(m["instrumentation"], "$.instrumentation", k, vt::number_unsigned);
  return problems;
}

/// Copy of a metrics document with the timestamp field removed.
inline json without_timestamps(json m) {
  if (m.contains("meta")) m["meta"].erase("timestamps");
  return m;
}

// ---- sweep --------------------------------------------------------------------------------------

struct SweepPoint {
  double alpha_beta = 0.0;
  double u_factor = 0.0;
  std::string status;
  std::string error;
  std::optional<double> self_old_map, self_new_map, cross_map, cross_r1;
};

/// One full run per (alpha = beta, u_factor) pair. Failed points are recorded and skipped.
inline std::vector<SweepPoint> run_sweep(const RunConfig& base, const std::vector<double>& alpha_beta,
                                         const std::vector<double>& u_factors) {
  detail::require(!alpha_beta.empty() && !u_factors.empty(), ErrorKind::parameter, "sweep: grid lists must be nonempty");
  namespace fs = std::filesystem;
  std::vector<SweepPoint> points;
  std::size_t index = 0;
  for (double ab : alpha_beta) {
    for (double u : u_factors) {
      RunConfig cfg = base;
      cfg.train_new.alpha = ab;
      cfg.train_new.beta = ab;
      cfg.train_new.u_factor = u;
      std::ostringstream name;
      name << "point_" << std::setw(3) << std::setfill('0') << index++;
      cfg.run_name = base.run_name + "/" + name.str();
      if (!base.output_dir.empty()) cfg.output_dir = (fs::path(base.output_dir) / name.str()).string();
      SweepPoint p{ab, u, "complete", "", {}, {}, {}, {}};
      try {
        const RunResult r = run_experiment(cfg);
        const json& ret = r.metrics["retrieval"];
        p.self_old_map = ret["self_old"]["mAP"].get<double>();
        p.self_new_map = ret["self_new"]["mAP"].get<double>();
        p.cross_map = ret["cross"]["mAP"].get<double>();
        p.cross_r1 = ret["cross"]["cmc"]["1"].get<double>();
      } catch (const Error& e) {
        p.status = "failed";
        p.error = e.what();
      }
      points.push_back(std::move(p));
    }
  }
  return points;
}

inline std::string sweep_csv(const std::vector<SweepPoint>& points) {
  std::ostringstream out;
  out << "index,alpha,beta,u_factor,status,self_old_map,self_new_map,cross_map,cross_r1\n";
  auto cell = [](const std::optional<double>& v) {
    if (!v) return std::string();
    std::ostringstream s;
    s << std::setprecision(17) << *v;
    return s.str();
  };
  for (std::size_t i = 0; i < points.size(); ++i) {
    const SweepPoint& p = points[i];
    out << i << ',' << cell(p.alpha_beta) << ',' << cell(p.alpha_beta) << ',' << cell(p.u_factor) << ',' << p.status
        << ',' << cell(p.self_old_map) << ',' << cell(p.self_new_map) << ',' << cell(p.cross_map) << ','
        << cell(p.cross_r1) << '\n';
  }
  return out.str();
}

}  // namespace bcl
