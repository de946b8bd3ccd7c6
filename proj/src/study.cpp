#include "himix/study.hpp"

#include <sstream>

namespace himix::study {

namespace {

RunConfig with_har(RunConfig cfg, bool hirp, bool clf, bool cgf) {
  cfg.model.fusion.hirp = hirp;
  cfg.model.fusion.clf = clf;
  cfg.model.fusion.cgf = cgf;
  return cfg;
}

RunConfig study_base(const RunConfig& base) {
  RunConfig cfg = base;
  if (cfg.ablate_epochs > 0) cfg.epochs = cfg.ablate_epochs;
  return cfg;
}

}  // namespace

std::vector<Arm> toggle_grid(const RunConfig& base) {
  const RunConfig full = study_base(base);
  RunConfig no_mda = full;
  no_mda.mda = false;
  RunConfig no_lora = full;
  no_lora.model.encoder.lora_enabled = false;
  return {
      {"macro-mda-off-cls-only", with_har(no_mda, false, false, false)},
      {"macro-mda-off", no_mda},
      {"macro-lora-off", no_lora},
      {"micro-cls-only", with_har(full, false, false, false)},
      {"micro-hirp", with_har(full, true, false, false)},
      {"micro-hirp-clf", with_har(full, true, true, false)},
      {"micro-hirp-cgf", with_har(full, true, false, true)},
      {"full", full},
  };
}

std::vector<Arm> alpha_sweep(const RunConfig& base) {
  std::vector<Arm> arms;
  for (double a : base.ablate_alphas) {
    RunConfig cfg = study_base(base);
    cfg.mixup.alpha = a;
    arms.push_back({"alpha-" + metrics::fmt(a), cfg});
  }
  return arms;
}

std::vector<Arm> data_sweep(const RunConfig& base) {
  std::vector<Arm> arms;
  for (double f : base.ablate_fractions) {
    RunConfig cfg = study_base(base);
    cfg.data_fraction = f;
    arms.push_back({"fraction-" + metrics::fmt(f), cfg});
  }
  return arms;
}

void split_seen_unseen(const metrics::EvalReport& rep, const RunConfig& cfg, double& seen, double& unseen) {
  const std::string seen_group = "eval-" + corpus::to_string(cfg.corpus.train_family);
  double unseen_sum = 0.0;
  std::size_t unseen_n = 0;
  seen = 0.0;
  for (const auto& g : rep.groups) {
    if (g.group == seen_group) {
      seen = g.acc;
    } else {
      unseen_sum += g.acc;
      ++unseen_n;
    }
  }
  unseen = unseen_n ? unseen_sum / static_cast<double>(unseen_n) : 0.0;
}

ArmResult run_arm(const Arm& arm, const std::filesystem::path& corpus_dir, const corpus::CorpusManifest& manifest,
                  const pipeline::TrainingData& data, const Model& backbone) {
  ArmResult r;
  r.name = arm.name;
  try {
    r.config_hash = config_hash(arm.cfg);
    const auto run = pipeline::run_training(arm.cfg, data, {}, &backbone);
    r.final_loss = run.train.log.empty() ? 0.0 : run.train.log.back().loss;
    const auto records = eval::score_split(*run.model, corpus_dir, manifest, arm.cfg.eval_split, {}, arm.cfg.threads);
    const auto rep = metrics::build_report(records);
    split_seen_unseen(rep, arm.cfg, r.seen_acc, r.unseen_acc);
    r.mean_acc = rep.mean_acc;
    r.mean_ap = rep.mean_ap.value_or(0.0);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (char& ch : msg) {
      if (ch == ',' || ch == '\n') ch = ';';
    }
    r.status = "error: " + msg;
  }
  return r;
}

std::string study_csv(const std::vector<ArmResult>& rows) {
  std::ostringstream out;
  out << "arm,status,config_hash,seen_acc,unseen_acc,mean_acc,mean_ap,final_loss\n";
  for (const auto& r : rows) {
    out << r.name << ',' << r.status << ',' << r.config_hash << ',' << metrics::fmt(r.seen_acc) << ','
        << metrics::fmt(r.unseen_acc) << ',' << metrics::fmt(r.mean_acc) << ',' << metrics::fmt(r.mean_ap) << ','
        << metrics::fmt(r.final_loss) << '\n';
  }
  return out.str();
}

void run_ablation(const RunConfig& base, const std::filesystem::path& corpus_dir, const std::filesystem::path& out_dir,
                  const std::function<void(const ArmResult&)>& on_arm) {
  base.validate();
  const auto manifest = corpus::load_manifest(corpus_dir);
  const auto data = pipeline::load_training_data(corpus_dir, manifest, base.threads);
  // Every arm shares the seed, hence the pretrained backbone.
  const auto backbone = pipeline::pretrain_model(base, data);

  const std::pair<const char*, std::vector<Arm>> studies[] = {
      {"ablation_toggles.csv", toggle_grid(base)},
      {"ablation_alpha.csv", alpha_sweep(base)},
      {"ablation_data.csv", data_sweep(base)},
  };
  for (const auto& [file, arms] : studies) {
    std::vector<ArmResult> rows;
    for (const Arm& arm : arms) {
      rows.push_back(run_arm(arm, corpus_dir, manifest, data, *backbone));
      if (on_arm) on_arm(rows.back());
      write_file(out_dir / file, study_csv(rows));
    }
  }
  write_file(out_dir / kResolvedConfigName, serialize_config(base));
}

}  // namespace himix::study
