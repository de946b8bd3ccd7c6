#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "himix/config.hpp"

namespace himix::pipeline {

/// Training images held in memory, plus the held-out reals scored by the pretext check.
struct TrainingData {
  std::vector<Image> images;
  std::vector<const Image*> reals;
  std::vector<std::size_t> real_classes;  // blur-sigma index of each real
  std::vector<const Image*> fakes;
  std::vector<const Image*> heldout;
  std::vector<std::size_t> heldout_classes;
};

/// Index of `sigma` in corpus::kBlurSigmas; throws for other values.
std::size_t sigma_class(double sigma);

/// Reads the "train" split and every other split's reals from disk.
TrainingData load_training_data(const std::filesystem::path& corpus_dir, const corpus::CorpusManifest& manifest,
                                unsigned threads = 0);

struct TrainRun {
  std::unique_ptr<Model> model;
  std::optional<train::PretextResult> pretext;
  train::TrainResult train;
};

/// Builds the model from `cfg`, pretrains (or reuses `backbone_from`'s
/// frozen weights when given), freezes the backbone, rounds all weights to
/// checkpoint precision and runs detection training.
TrainRun run_training(const RunConfig& cfg, const TrainingData& data,
                      const std::function<void(const train::LogRow&)>& on_step = {},
                      const Model* backbone_from = nullptr);

/// Pretext stage only; the returned model is ready to donate its backbone.
std::unique_ptr<Model> pretrain_model(const RunConfig& cfg, const TrainingData& data,
                                      std::optional<train::PretextResult>* result = nullptr);

inline constexpr std::string_view kCheckpointName = "model.hxc";
inline constexpr std::string_view kLogName = "train_log.jsonl";

/// `path` may be a checkpoint file or a directory holding model.hxc.
std::filesystem::path checkpoint_file(const std::filesystem::path& path);

/// Reconstructs a model for `cfg` and loads the checkpoint into it.
std::unique_ptr<Model> load_model(const std::filesystem::path& checkpoint, const RunConfig& cfg);

std::string log_line(const train::LogRow& row);

}  // namespace himix::pipeline
