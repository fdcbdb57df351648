// bcl: command-line front end for the backward-compatible learning lab.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>

#include "bcl/pipeline.hpp"

using namespace bcl;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c, bool with_out = true) {
  cmd->add_option("--config", c.config_path, "JSON config file");
  cmd->add_option("--set", c.overrides, "dotted-path override key=value (repeatable)");
  if (with_out) cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--seed", c.seed, "top-level seed");
}

RunConfig load_config(const Common& c) {
  json doc = to_json(reference_config());
  if (!c.config_path.empty()) doc.merge_patch(io::read_json(c.config_path));
  for (const std::string& o : c.overrides) apply_override(doc, o);
  RunConfig cfg = run_config_from_json(doc);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.output_dir = c.out;
  return cfg;
}

std::vector<double> parse_list(const std::string& s, const std::string& what) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Error(ErrorKind::parameter, what + ": '" + item + "' is not a number");
    }
  }
  if (out.empty()) throw Error(ErrorKind::parameter, what + ": list must be nonempty");
  return out;
}

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::parameter: return 2;
    case ErrorKind::numeric: return 3;
    case ErrorKind::io: return 4;
    default: return 1;
  }
}

int cmd_generate(const Common& c) {
  const RunConfig cfg = load_config(c);
  const Dataset ds = generate(cfg.effective_data());
  const fs::path out = c.out.empty() ? fs::path(".") : fs::path(c.out);
  write_dataset(ds, out / "dataset.jsonl");
  std::cout << "wrote " << ds.samples.size() << " samples to " << (out / "dataset.jsonl").string() << "\n";
  return 0;
}

int cmd_run(const Common& c) {
  RunConfig cfg = load_config(c);
  if (cfg.output_dir.empty()) cfg.output_dir = (fs::path("runs") / cfg.run_name).string();
  const RunResult r = run_experiment(cfg);
  const json& ret = r.metrics["retrieval"];
  std::cout << "self_old mAP " << ret["self_old"]["mAP"] << "  self_new mAP " << ret["self_new"]["mAP"]
            << "  cross mAP " << ret["cross"]["mAP"] << "\n"
            << "metrics: " << (fs::path(cfg.output_dir) / "metrics.json").string() << "\n";
  return 0;
}

int cmd_sweep(const Common& c, const std::string& ab, const std::string& u) {
  RunConfig cfg = load_config(c);
  if (cfg.output_dir.empty()) cfg.output_dir = (fs::path("runs") / (cfg.run_name + "_sweep")).string();
  const auto points = run_sweep(cfg, parse_list(ab, "--alpha-beta"), parse_list(u, "--u-factor"));
  const std::string csv = sweep_csv(points);
  io::write_text(fs::path(cfg.output_dir) / "sweep.csv", csv);
  std::cout << csv;
  for (const auto& p : points)
    if (p.status != "complete") std::cerr << "point alpha=beta=" << p.alpha_beta << " u=" << p.u_factor << " failed: " << p.error << "\n";
  return 0;
}

int cmd_dump(const std::string& checkpoint, const std::string& dataset, const std::string& split, const std::string& out) {
  const EncoderParams enc = load_encoder(checkpoint);
  const Dataset ds = read_dataset(dataset);
  std::vector<LabeledSample> samples;
  if (split == "all")
    samples = ds.samples;
  else
    samples = ds.split(split_from_string(split));
  if (!samples.empty() && samples.front().x.size() != enc.d_in())
    throw Error(ErrorKind::dimension, "dump-embeddings: checkpoint expects d_in=" + std::to_string(enc.d_in()) +
                                          " but dataset has " + std::to_string(samples.front().x.size()));
  const std::string text = embeddings_jsonl(embed(enc, samples));
  if (out.empty())
    std::cout << text;
  else
    io::write_text(out, text);
  return 0;
}

int cmd_criterion(const std::string& new_path, const std::string& old_path, std::uint64_t max_checks, std::uint64_t seed,
                  const std::string& metric) {
  const auto nv = read_embeddings(new_path);
  const auto ov = read_embeddings(old_path);
  std::map<std::int64_t, const EmbeddedSample*> old_by_id;
  for (const auto& e : ov) old_by_id[e.id] = &e;
  std::size_t width = 0;
  for (const auto& e : nv) width = std::max(width, e.v.size());
  for (const auto& e : ov) width = std::max(width, e.v.size());
  std::vector<Vec> a, b;
  std::vector<int> labels;
  for (const auto& e : nv) {
    const auto it = old_by_id.find(e.id);
    if (it == old_by_id.end()) throw Error(ErrorKind::protocol, "criterion: id " + std::to_string(e.id) + " missing from old dump");
    if (it->second->label != e.label) throw Error(ErrorKind::protocol, "criterion: label mismatch for id " + std::to_string(e.id));
    a.push_back(align_dims(e.v, width));
    b.push_back(align_dims(it->second->v, width));
    labels.push_back(e.label);
  }
  if (a.size() != ov.size()) throw Error(ErrorKind::protocol, "criterion: dumps cover different id sets");
  Rng rng(seed);
  std::cout << to_json(criterion_report(a, b, labels, max_checks, rng, distance_from_string(metric))).dump(2) << "\n";
  return 0;
}

int cmd_filter_report(const Common& c) {
  const RunConfig cfg = load_config(c);
  cfg.validate();
  const Dataset ds = generate(cfg.effective_data());
  const IdSplit sp = id_split(ds, cfg.protocol.old_fraction, cfg.protocol.overlap, cfg.split_seed());
  const OldModel old = train_old(cfg.effective_old(), sp.old_train, sp.old_labels.size());
  const OldEmbeddingBank bank = build_bank(old.encoder(), sp.new_train);
  const FilterResult fr = filter_bank(bank, sp.new_labels.size(), cfg.train_new.u_factor);
  json rep = to_json(fr.report);
  const auto br = detail::filter_breakdown(fr.bank, ds.planted_outlier_ids);
  rep["planted_outliers_in_bank"] = br.outliers_in_bank;
  rep["planted_outliers_removed"] = br.outliers_removed;
  rep["inliers_in_bank"] = br.inliers_in_bank;
  rep["inliers_removed"] = br.inliers_removed;
  const std::string text = rep.dump(2) + "\n";
  if (c.out.empty())
    std::cout << text;
  else
    io::write_text(fs::path(c.out) / "filter_report.json", text);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"backward-compatible representation learning lab"};
  app.require_subcommand(1);

  Common gen, run, sweep, filt;
  auto* g = app.add_subcommand("generate", "write a synthetic dataset (JSONL + header)");
  add_common(g, gen);
  auto* r = app.add_subcommand("run", "full pipeline: old model, bank, filter, new model, evaluation");
  add_common(r, run);
  auto* s = app.add_subcommand("sweep", "grid over alpha=beta and the entropy threshold factor");
  add_common(s, sweep);
  std::string ab = "0.005,0.01,0.015", uf = "0.2,0.5,1.0";
  s->add_option("--alpha-beta", ab, "comma-separated alpha=beta values");
  s->add_option("--u-factor", uf, "comma-separated threshold factors");

  auto* d = app.add_subcommand("dump-embeddings", "encode a dataset with a checkpoint");
  std::string ckpt, data, split = "all", dump_out;
  d->add_option("--checkpoint", ckpt)->required();
  d->add_option("--dataset", data)->required();
  d->add_option("--split", split, "train|query|gallery|all");
  d->add_option("--out", dump_out, "output JSONL (stdout when omitted)");

  auto* c = app.add_subcommand("criterion", "criterion satisfaction rates for two embedding dumps");
  std::string new_dump, old_dump, metric = "cosine";
  std::uint64_t max_checks = 200000, crit_seed = 0;
  c->add_option("--new", new_dump)->required();
  c->add_option("--old", old_dump)->required();
  c->add_option("--max-checks", max_checks);
  c->add_option("--seed", crit_seed);
  c->add_option("--distance", metric);

  auto* f = app.add_subcommand("filter-report", "train the old model and report the credibility filter");
  add_common(f, filt);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*g) return cmd_generate(gen);
    if (*r) return cmd_run(run);
    if (*s) return cmd_sweep(sweep, ab, uf);
    if (*d) return cmd_dump(ckpt, data, split, dump_out);
    if (*c) return cmd_criterion(new_dump, old_dump, max_checks, crit_seed, metric);
    if (*f) return cmd_filter_report(filt);
  } catch (const Error& e) {
    std::cerr << "bcl: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "bcl: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
