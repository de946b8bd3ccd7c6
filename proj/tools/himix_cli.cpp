// himix: corpus generation, training, evaluation and the study harness.
// Exit codes: 0 ok, 2 configuration, 3 I/O, 4 numeric abort.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "himix/config.hpp"
#include "himix/evaluate.hpp"
#include "himix/hash.hpp"
#include "himix/pipeline.hpp"
#include "himix/study.hpp"

namespace fs = std::filesystem;
using namespace himix;

namespace {

enum Exit { kOk = 0, kInternal = 1, kConfigExit = 2, kIoExit = 3, kNumericExit = 4 };

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  std::vector<std::string> sets;
  bool force = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "key = value config file");
  cmd->add_option("--seed", c.seed, "master seed (overrides the config)");
  cmd->add_option("--threads", c.threads, "worker threads, 0 = all cores");
  cmd->add_option("--set", c.sets, "extra key=value override (repeatable)");
  cmd->add_flag("--force", c.force, "overwrite existing outputs");
}

std::pair<std::string, std::string> split_assignment(const std::string& s) {
  const auto eq = s.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + s + "'");
  return {s.substr(0, eq), s.substr(eq + 1)};
}

/// Config file (or `fallback` when no --config is given), then --set, --seed, --threads.
RunConfig resolve(const Common& c, const fs::path& fallback = {}) {
  RunConfig cfg;
  if (!c.config.empty()) {
    cfg = load_config(c.config);
  } else if (!fallback.empty() && fs::exists(fallback)) {
    cfg = load_config(fallback);
  }
  for (const auto& s : c.sets) {
    const auto [k, v] = split_assignment(s);
    set_config_value(cfg, k, v);
  }
  if (c.seed) cfg.seed = *c.seed;
  if (c.threads) cfg.threads = *c.threads;
  cfg.validate();
  return cfg;
}

void prepare_dir(const fs::path& dir, bool force, bool must_be_empty) {
  std::error_code ec;
  if (fs::exists(dir) && !fs::is_directory(dir)) throw IoError(dir.string() + " exists and is not a directory");
  if (must_be_empty && fs::exists(dir) && !fs::is_empty(dir) && !force) {
    throw IoError(dir.string() + " is not empty (use --force to overwrite)");
  }
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

void write_output(const fs::path& path, const std::string& bytes, bool force) {
  if (fs::exists(path) && !force) throw IoError(path.string() + " exists (use --force to overwrite)");
  write_file(path, bytes);
}

void write_resolved(const fs::path& dir, const RunConfig& cfg) {
  write_file(dir / kResolvedConfigName, serialize_config(cfg));
}

fs::path checkpoint_config(const fs::path& checkpoint) {
  const fs::path file = pipeline::checkpoint_file(checkpoint);
  return file.parent_path() / kResolvedConfigName;
}

corpus::CorpusManifest open_corpus(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("corpus directory " + dir.string() + " does not exist");
  return corpus::load_manifest(dir);
}

int cmd_gen_corpus(const Common& c, const fs::path& out) {
  const RunConfig cfg = resolve(c);
  prepare_dir(out, c.force, true);
  const auto manifest = corpus::build_corpus(cfg.corpus_config(), out, cfg.threads);
  write_resolved(out, cfg);
  std::cout << "entries " << manifest.entries.size() << '\n';
  std::cout << "corpus_hash " << corpus::corpus_hash(out, manifest) << '\n';
  return kOk;
}

int cmd_train(const Common& c, const fs::path& corpus_dir, const fs::path& out, bool no_pretext,
              const std::vector<std::string>& toggles) {
  RunConfig cfg = resolve(c);
  for (const auto& t : toggles) {
    const auto [k, v] = split_assignment(t);
    set_config_value(cfg, "toggle." + k, v);
  }
  if (no_pretext) cfg.pretext = false;
  cfg.validate();
  const auto manifest = open_corpus(corpus_dir);
  prepare_dir(out, c.force, true);
  write_resolved(out, cfg);

  const auto data = pipeline::load_training_data(corpus_dir, manifest, cfg.threads);
  std::ofstream log(out / pipeline::kLogName, std::ios::binary | std::ios::trunc);
  if (!log) throw IoError("cannot write " + (out / pipeline::kLogName).string());
  std::size_t last_epoch = 0;
  double epoch_loss = 0.0;
  std::size_t epoch_steps = 0;
  const auto run = pipeline::run_training(cfg, data, [&](const train::LogRow& row) {
    log << pipeline::log_line(row) << '\n';
    if (row.epoch != last_epoch && epoch_steps) {
      std::cerr << "epoch " << last_epoch << " mean loss " << metrics::fmt(epoch_loss / epoch_steps) << '\n';
      epoch_loss = 0.0;
      epoch_steps = 0;
    }
    last_epoch = row.epoch;
    epoch_loss += row.loss;
    ++epoch_steps;
  });
  if (epoch_steps)
    std::cerr << "epoch " << last_epoch << " mean loss " << metrics::fmt(epoch_loss / epoch_steps) << '\n';
  log.close();

  save_checkpoint(out / pipeline::kCheckpointName, run.model->params());
  const std::string ckpt_hash = sha256_hex(read_file(out / pipeline::kCheckpointName));
  nlohmann::ordered_json summary;
  summary["seed"] = cfg.seed;
  summary["config_hash"] = config_hash(cfg);
  summary["corpus_hash"] = corpus::corpus_hash(corpus_dir, manifest);
  summary["checkpoint_sha256"] = ckpt_hash;
  summary["steps"] = run.train.log.size();
  summary["final_loss"] = run.train.log.empty() ? 0.0 : run.train.log.back().loss;
  if (run.pretext) summary["pretext_heldout_accuracy"] = run.pretext->heldout_accuracy;
  summary["params_total"] = run.model->params().count_values(false);
  summary["params_trainable"] = run.model->params().count_values(true);
  write_file(out / "summary.json", summary.dump(2) + "\n");
  if (run.pretext) std::cout << "pretext_heldout_accuracy " << metrics::fmt(run.pretext->heldout_accuracy) << '\n';
  std::cout << "checkpoint_sha256 " << ckpt_hash << '\n';
  return kOk;
}

struct Loaded {
  RunConfig cfg;
  std::unique_ptr<Model> model;
};

Loaded load(const Common& c, const fs::path& checkpoint) {
  Loaded l;
  l.cfg = resolve(c, checkpoint_config(checkpoint));
  l.model = pipeline::load_model(checkpoint, l.cfg);
  return l;
}

int cmd_eval(const Common& c, const fs::path& checkpoint, const fs::path& corpus_dir, const std::string& split,
             std::optional<double> fpr, const std::string& calibrate_on, const fs::path& out) {
  auto [cfg, model] = load(c, checkpoint);
  if (!split.empty()) cfg.eval_split = split;
  if (fpr) cfg.calibrate_fpr = *fpr;
  if (!calibrate_on.empty()) cfg.calibrate_on = calibrate_on;
  cfg.validate();
  const auto manifest = open_corpus(corpus_dir);
  if (!out.empty()) prepare_dir(out, c.force, false);

  const auto records = eval::score_split(*model, corpus_dir, manifest, cfg.eval_split, {}, cfg.threads);
  std::optional<metrics::Calibration> cal;
  if (fpr || !calibrate_on.empty()) {
    const auto ref = eval::score_split(*model, corpus_dir, manifest, cfg.calibrate_on, {}, cfg.threads);
    std::vector<double> reals;
    for (const auto& r : ref) {
      if (r.label == 0) reals.push_back(r.score);
    }
    if (reals.empty()) throw ConfigError("calibration split '" + cfg.calibrate_on + "' has no reals");
    metrics::Calibration k;
    k.split = cfg.calibrate_on;
    k.target_fpr = cfg.calibrate_fpr;
    k.tau = metrics::threshold_at_fpr(reals, cfg.calibrate_fpr, &k.unstable);
    if (k.unstable) std::cerr << "warning: fewer than 100 calibration reals; the threshold is unstable\n";
    cal = k;
  }
  const std::string csv = metrics::report_csv(metrics::build_report(records, cal));
  std::cout << csv;
  if (!out.empty()) {
    write_output(out / "eval_report.csv", csv, c.force);
    write_resolved(out, cfg);
  }
  return kOk;
}

int cmd_robustness(const Common& c, const fs::path& checkpoint, const fs::path& corpus_dir, const std::string& split,
                   const fs::path& out) {
  auto [cfg, model] = load(c, checkpoint);
  if (!split.empty()) cfg.robustness_split = split;
  const auto manifest = open_corpus(corpus_dir);
  prepare_dir(out, c.force, false);
  const auto rows =
      eval::robustness_sweep(*model, corpus_dir, manifest, cfg.robustness_split, cfg.robustness_grid(), cfg.threads);
  const std::string csv = eval::robustness_csv(rows);
  write_output(out / "robustness.csv", csv, c.force);
  write_resolved(out, cfg);
  std::cout << csv;
  return kOk;
}

int cmd_bench(const Common& c, const fs::path& checkpoint, const fs::path& out) {
  Loaded l;
  if (checkpoint.empty()) {
    l.cfg = resolve(c);
    l.model = std::make_unique<Model>(l.cfg.model, l.cfg.init_seed());
  } else {
    l = load(c, checkpoint);
  }
  const auto r = eval::bench_forward(*l.model, l.cfg.bench_images, l.cfg.bench_warmup, l.cfg.eval_seed());
  const ParamCensus expect = census(l.cfg.model);
  std::ostringstream csv;
  csv << "params_total,params_trainable,census_total,census_trainable,images,seconds,images_per_sec\n"
      << r.params_total << ',' << r.params_trainable << ',' << expect.total() << ',' << expect.trainable() << ','
      << r.images << ',' << metrics::fmt(r.seconds) << ',' << metrics::fmt(r.images_per_second) << '\n';
  if (!out.empty()) {
    prepare_dir(out, c.force, false);
    write_output(out / "bench.csv", csv.str(), c.force);
    write_resolved(out, l.cfg);
  }
  std::cout << "params-total " << r.params_total << '\n'
            << "params-trainable " << r.params_trainable << '\n'
            << "images/sec " << metrics::fmt(r.images_per_second) << '\n';
  return kOk;
}

int cmd_export_logits(const Common& c, const fs::path& checkpoint, const fs::path& corpus_dir, const std::string& split,
                      const fs::path& out) {
  auto [cfg, model] = load(c, checkpoint);
  if (!split.empty()) cfg.eval_split = split;
  const auto manifest = open_corpus(corpus_dir);
  prepare_dir(out, c.force, false);
  if (fs::exists(out / "logits.csv") && !c.force)
    throw IoError((out / "logits.csv").string() + " exists (use --force to overwrite)");
  const auto records = eval::score_split(*model, corpus_dir, manifest, cfg.eval_split, {}, cfg.threads);
  write_output(out / "logits.csv", metrics::scores_csv(records), c.force);
  write_resolved(out, cfg);
  std::cout << "rows " << records.size() << '\n';
  return kOk;
}

int cmd_export_features(const Common& c, const fs::path& checkpoint, const fs::path& corpus_dir,
                        const std::string& split, std::optional<std::size_t> k, const fs::path& out) {
  auto [cfg, model] = load(c, checkpoint);
  if (!split.empty()) cfg.eval_split = split;
  if (k) cfg.pca_k = *k;
  cfg.validate();
  const auto manifest = open_corpus(corpus_dir);
  prepare_dir(out, c.force, false);
  if (fs::exists(out / "features_pca.csv") && !c.force) {
    throw IoError((out / "features_pca.csv").string() + " exists (use --force to overwrite)");
  }
  const std::string csv =
      eval::export_features_pca(*model, corpus_dir, manifest, cfg.eval_split, cfg.pca_k, cfg.eval_seed(), cfg.threads);
  write_output(out / "features_pca.csv", csv, c.force);
  write_resolved(out, cfg);
  return kOk;
}

int cmd_ablate(const RunConfig& cfg, const fs::path& corpus_dir, const fs::path& out, bool force) {
  open_corpus(corpus_dir);
  prepare_dir(out, force, true);
  study::run_ablation(cfg, corpus_dir, out, [](const study::ArmResult& r) {
    std::cerr << r.name << ' ' << r.status << " seen " << metrics::fmt(r.seen_acc) << " unseen "
              << metrics::fmt(r.unseen_acc) << '\n';
  });
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"himix: synthetic-image detection toolkit"};
  app.require_subcommand(1);

  Common common;
  fs::path out, corpus_dir, checkpoint;
  std::string split, calibrate_on;
  std::optional<double> fpr;
  std::optional<std::size_t> pca_k;
  bool no_pretext = false;
  std::vector<std::string> toggles;

  auto* gen = app.add_subcommand("gen-corpus", "generate the procedural corpus and manifest");
  add_common(gen, common);
  gen->add_option("--out", out, "output directory")->required();

  auto* tr = app.add_subcommand("train", "pretrain the backbone and train the detector");
  add_common(tr, common);
  tr->add_option("--corpus", corpus_dir, "corpus directory")->required();
  tr->add_option("--out", out, "run directory")->required();
  tr->add_flag("--no-pretext", no_pretext, "skip backbone pretraining (random frozen backbone)");
  tr->add_option("--toggle", toggles, "module switch, e.g. mda=off (repeatable)");

  auto* ev = app.add_subcommand("eval", "score a split and report Acc/AP/ECE per family");
  add_common(ev, common);
  ev->add_option("--checkpoint", checkpoint, "checkpoint file or run directory")->required();
  ev->add_option("--corpus", corpus_dir, "corpus directory")->required();
  ev->add_option("--split", split, "split to evaluate (default eval.split)");
  ev->add_option("--calibrate-fpr", fpr, "calibrate a threshold at this real FPR");
  ev->add_option("--calibrate-on", calibrate_on, "split whose reals calibrate the threshold");
  ev->add_option("--out", out, "also write eval_report.csv and resolved.cfg here");

  auto* ab = app.add_subcommand("ablate", "module-toggle grid, alpha sweep and data-fraction sweep");
  add_common(ab, common);
  ab->add_option("--corpus", corpus_dir, "corpus directory")->required();
  ab->add_option("--out", out, "output directory")->required();

  auto* rob = app.add_subcommand("robustness", "accuracy under blur and compression");
  add_common(rob, common);
  rob->add_option("--checkpoint", checkpoint, "checkpoint file or run directory")->required();
  rob->add_option("--corpus", corpus_dir, "corpus directory")->required();
  rob->add_option("--split", split, "split to perturb (default robustness.split)");
  rob->add_option("--out", out, "output directory")->required();

  auto* bench = app.add_subcommand("bench", "parameter census and forward throughput");
  add_common(bench, common);
  bench->add_option("--checkpoint", checkpoint, "checkpoint file or run directory (default: fresh model)");
  bench->add_option("--out", out, "also write bench.csv and resolved.cfg here");

  auto* el = app.add_subcommand("export-logits", "per-sample scores as CSV");
  add_common(el, common);
  el->add_option("--checkpoint", checkpoint, "checkpoint file or run directory")->required();
  el->add_option("--corpus", corpus_dir, "corpus directory")->required();
  el->add_option("--split", split, "split to score (default eval.split)");
  el->add_option("--out", out, "output directory")->required();

  auto* ef = app.add_subcommand("export-features", "PCA projection of fused features as CSV");
  add_common(ef, common);
  ef->add_option("--checkpoint", checkpoint, "checkpoint file or run directory")->required();
  ef->add_option("--corpus", corpus_dir, "corpus directory")->required();
  ef->add_option("--split", split, "split to project (default eval.split)");
  ef->add_option("--k", pca_k, "number of components");
  ef->add_option("--out", out, "output directory")->required();

  auto* keys = app.add_subcommand("config-keys", "list every config key with its default");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigExit;
  }

  try {
    if (*gen) return cmd_gen_corpus(common, out);
    if (*tr) return cmd_train(common, corpus_dir, out, no_pretext, toggles);
    if (*ev) return cmd_eval(common, checkpoint, corpus_dir, split, fpr, calibrate_on, out);
    if (*ab) return cmd_ablate(resolve(common), corpus_dir, out, common.force);
    if (*rob) return cmd_robustness(common, checkpoint, corpus_dir, split, out);
    if (*bench) return cmd_bench(common, checkpoint, out);
    if (*el) return cmd_export_logits(common, checkpoint, corpus_dir, split, out);
    if (*ef) return cmd_export_features(common, checkpoint, corpus_dir, split, pca_k, out);
    if (*keys) {
      std::cout << serialize_config(RunConfig{});
      return kOk;
    }
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumericExit;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigExit;
  } catch (const ShapeError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigExit;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIoExit;
  } catch (const ImageFormatError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIoExit;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIoExit;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInternal;
  }
  return kOk;
}
