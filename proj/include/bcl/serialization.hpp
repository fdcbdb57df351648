#pragma once

// File formats:
//   checkpoint       one JSON document: shapes, row-major flat weights, seed, config hash
//   dataset          JSONL {"id","label","split","outlier","x"} plus a JSON header with the DataSpec
//   embeddings       JSONL {"id","label","v"}
// Doubles are written in shortest round-trip form, so a reload is bit-exact.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bcl/credibility.hpp"
#include "bcl/evaluation.hpp"
#include "bcl/synthetic.hpp"
#include "bcl/trainer.hpp"

namespace bcl {

using json = nlohmann::json;

namespace io {

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw Error(ErrorKind::io, "cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::io, "write failed for " + path.string());
}

inline json parse_json(const std::string& text, const std::string& origin) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::parameter, origin + ": " + e.what());
  }
}

inline json read_json(const std::filesystem::path& path) { return parse_json(read_text(path), path.string()); }

/// Non-empty lines of a JSONL file, each parsed.
inline std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  std::vector<json> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    out.push_back(parse_json(line, path.string() + ":" + std::to_string(n)));
  }
  return out;
}

}  // namespace io

// ---- parameters ------------------------------------------------------------

inline json to_json(const EncoderParams& p) {
  return {{"d_in", p.d_in()},     {"hidden", p.hidden()}, {"d_emb", p.d_emb()}, {"activation", "tanh"},
          {"W1", p.W1.data()},    {"b1", p.b1},           {"W2", p.W2.data()},  {"b2", p.b2}};
}

inline json to_json(const ClassifierParams& c) {
  return {{"num_classes", c.num_classes()}, {"d_emb", c.d_emb()}, {"frozen", c.frozen}, {"W", c.W.data()}, {"b", c.b}};
}

namespace detail {

template <typename T>
T field(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw Error(ErrorKind::parameter, where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::parameter, where + "." + key + ": " + e.what());
  }
}

}  // namespace detail

inline EncoderParams encoder_from_json(const json& j) {
  const auto d_in = detail::field<std::size_t>(j, "d_in", "encoder");
  const auto hidden = detail::field<std::size_t>(j, "hidden", "encoder");
  const auto d_emb = detail::field<std::size_t>(j, "d_emb", "encoder");
  EncoderParams p(d_in, hidden, d_emb);
  p.W1 = Mat(hidden, d_in, detail::field<Vec>(j, "W1", "encoder"));
  p.b1 = detail::field<Vec>(j, "b1", "encoder");
  p.W2 = Mat(d_emb, hidden, detail::field<Vec>(j, "W2", "encoder"));
  p.b2 = detail::field<Vec>(j, "b2", "encoder");
  p.validate();
  return p;
}

inline ClassifierParams classifier_from_json(const json& j) {
  const auto k = detail::field<std::size_t>(j, "num_classes", "classifier");
  const auto d = detail::field<std::size_t>(j, "d_emb", "classifier");
  ClassifierParams c(k, d);
  c.W = Mat(k, d, detail::field<Vec>(j, "W", "classifier"));
  c.b = detail::field<Vec>(j, "b", "classifier");
  detail::require(c.b.size() == k, ErrorKind::dimension, "classifier: bias length mismatch");
  c.frozen = j.value("frozen", false);
  return c;
}

inline json checkpoint_json(const EncoderParams& enc, const ClassifierParams& cls, std::uint64_t seed,
                            const std::string& config_hash) {
  return {{"format", "bcl-checkpoint"}, {"version", 1},          {"seed", seed},
          {"config_hash", config_hash}, {"encoder", to_json(enc)}, {"classifier", to_json(cls)}};
}

inline EncoderParams load_encoder(const std::filesystem::path& path) {
  const json j = io::read_json(path);
  return encoder_from_json(j.contains("encoder") ? j.at("encoder") : j);
}

// ---- datasets ----------------------------------------------------------------

inline json to_json(const DataSpec& s) {
  return {{"num_classes", s.num_classes},
          {"subclusters_per_class", s.subclusters_per_class},
          {"samples_per_class", s.samples_per_class},
          {"d_in", s.d_in},
          {"class_spread", s.class_spread},
          {"subcluster_spread", s.subcluster_spread},
          {"noise_sigma", s.noise_sigma},
          {"outlier_fraction", s.outlier_fraction},
          {"split", {{"train", s.split.train}, {"query", s.split.query}, {"gallery", s.split.gallery}}},
          {"seed", s.seed}};
}

inline DataSpec data_spec_from_json(const json& j) {
  DataSpec s;
  s.num_classes = j.value("num_classes", s.num_classes);
  s.subclusters_per_class = j.value("subclusters_per_class", s.subclusters_per_class);
  s.samples_per_class = j.value("samples_per_class", s.samples_per_class);
  s.d_in = j.value("d_in", s.d_in);
  s.class_spread = j.value("class_spread", s.class_spread);
  s.subcluster_spread = j.value("subcluster_spread", s.subcluster_spread);
  s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
  s.outlier_fraction = j.value("outlier_fraction", s.outlier_fraction);
  if (j.contains("split")) {
    const json& f = j.at("split");
    s.split.train = f.value("train", s.split.train);
    s.split.query = f.value("query", s.split.query);
    s.split.gallery = f.value("gallery", s.split.gallery);
  }
  s.seed = j.value("seed", s.seed);
  return s;
}

inline std::string dataset_jsonl(const Dataset& ds) {
  std::string out;
  for (const LabeledSample& s : ds.samples) {
    const json line = {{"id", s.id},
                       {"label", s.label},
                       {"split", std::string(to_string(s.split))},
                       {"outlier", ds.planted_outlier_ids.count(s.id) > 0},
                       {"x", s.x}};
    out += line.dump();
    out += '\n';
  }
  return out;
}

inline json dataset_header(const Dataset& ds) {
  return {{"format", "bcl-dataset"}, {"version", 1}, {"spec", to_json(ds.spec)}, {"num_samples", ds.samples.size()},
          {"planted_outliers", ds.planted_outlier_ids.size()}};
}

/// Header path that sits next to a dataset file: data.jsonl -> data.header.json.
inline std::filesystem::path header_path_for(const std::filesystem::path& data_path) {
  std::filesystem::path p = data_path;
  p.replace_extension(".header.json");
  return p;
}

inline void write_dataset(const Dataset& ds, const std::filesystem::path& path) {
  io::write_text(path, dataset_jsonl(ds));
  io::write_text(header_path_for(path), dataset_header(ds).dump(2) + "\n");
}

/// Samples only; the spec is restored from the header when present.
inline Dataset read_dataset(const std::filesystem::path& path) {
  Dataset ds;
  for (const json& j : io::read_jsonl(path)) {
    LabeledSample s;
    s.id = detail::field<std::int64_t>(j, "id", "dataset line");
    s.label = detail::field<int>(j, "label", "dataset line");
    s.split = split_from_string(detail::field<std::string>(j, "split", "dataset line"));
    s.x = detail::field<Vec>(j, "x", "dataset line");
    if (j.value("outlier", false)) ds.planted_outlier_ids.insert(s.id);
    ds.samples.push_back(std::move(s));
  }
  const auto header = header_path_for(path);
  if (std::filesystem::exists(header)) {
    const json h = io::read_json(header);
    if (h.contains("spec")) ds.spec = data_spec_from_json(h.at("spec"));
  }
  return ds;
}

// ---- embeddings ----------------------------------------------------------------

inline std::string embeddings_jsonl(std::span<const EmbeddedSample> embs) {
  std::string out;
  for (const EmbeddedSample& e : embs) {
    out += json{{"id", e.id}, {"label", e.label}, {"v", e.v}}.dump();
    out += '\n';
  }
  return out;
}

inline std::vector<EmbeddedSample> read_embeddings(const std::filesystem::path& path) {
  std::vector<EmbeddedSample> out;
  for (const json& j : io::read_jsonl(path))
    out.push_back({detail::field<std::int64_t>(j, "id", "embedding line"), detail::field<int>(j, "label", "embedding line"),
                   detail::field<Vec>(j, "v", "embedding line")});
  return out;
}

// ---- reports ---------------------------------------------------------------------

inline json to_json(const RetrievalMetrics& m) {
  json cmc = json::object();
  for (const auto& [k, v] : m.cmc) cmc[std::to_string(k)] = v;
  return {{"mAP", m.mAP}, {"cmc", cmc}};
}

inline json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline json to_json(const CriterionReport& r) {
  return {{"triplet_rate", optional_number(r.triplet_rate)},
          {"pair_rate", optional_number(r.pair_rate)},
          {"triplet_count", r.triplet_count},
          {"pair_count", r.pair_count},
          {"triplets_checked", r.triplets_checked},
          {"pairs_checked", r.pairs_checked},
          {"sampled", r.sampled}};
}

inline json to_json(const FilterReport& r) {
  return {{"threshold", r.threshold},
          {"removed_total", r.removed_total},
          {"removed_per_class", r.removed_per_class},
          {"entropy_min", r.entropy_min},
          {"entropy_median", r.entropy_median},
          {"entropy_max", r.entropy_max},
          {"entropy_histogram", r.histogram},
          {"warnings", r.warnings}};
}

inline json to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch}, {"stage", r.stage}, {"l_new", r.l_new},
          {"l1", r.l1},       {"l2", r.l2},       {"total", r.total}, {"skipped_anchors", r.skipped_anchors}};
}

inline json to_json(const std::vector<EpochRecord>& h) {
  json out = json::array();
  for (const EpochRecord& r : h) out.push_back(to_json(r));
  return out;
}

}  // namespace bcl
