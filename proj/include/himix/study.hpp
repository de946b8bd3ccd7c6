#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "himix/pipeline.hpp"

namespace himix::study {

struct Arm {
  std::string name;
  RunConfig cfg;
};

/// The 8 rows of the module ablation: three macro arms (no MDA with CLS
/// only, no MDA, no LoRA), four HAR-internal arms and the full model.
std::vector<Arm> toggle_grid(const RunConfig& base);
std::vector<Arm> alpha_sweep(const RunConfig& base);
std::vector<Arm> data_sweep(const RunConfig& base);

struct ArmResult {
  std::string name;
  std::string status = "ok";
  std::string config_hash;
  double seen_acc = 0.0;
  double unseen_acc = 0.0;
  double mean_acc = 0.0;
  double mean_ap = 0.0;
  double final_loss = 0.0;
};

/// Mean accuracy of the "eval-<train family>" group and of every other group.
void split_seen_unseen(const metrics::EvalReport& rep, const RunConfig& cfg, double& seen, double& unseen);

/// Trains one arm on a backbone copied from `backbone` and scores cfg.eval_split.
/// Failures are reported in `status` instead of thrown.
ArmResult run_arm(const Arm& arm, const std::filesystem::path& corpus_dir, const corpus::CorpusManifest& manifest,
                  const pipeline::TrainingData& data, const Model& backbone);

std::string study_csv(const std::vector<ArmResult>& rows);

/// Runs all three studies and writes ablation_toggles.csv, ablation_alpha.csv,
/// ablation_data.csv and resolved.cfg into `out_dir`.
void run_ablation(const RunConfig& base, const std::filesystem::path& corpus_dir, const std::filesystem::path& out_dir,
                  const std::function<void(const ArmResult&)>& on_arm = {});

}  // namespace himix::study
