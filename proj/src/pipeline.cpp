#include "himix/pipeline.hpp"

#include <nlohmann/json.hpp>

#include "himix/parallel.hpp"

namespace himix::pipeline {

std::size_t sigma_class(double sigma) {
  for (std::size_t k = 0; k < corpus::kBlurSigmas.size(); ++k) {
    if (corpus::kBlurSigmas[k] == sigma) return k;
  }
  throw ConfigError("manifest sigma " + std::to_string(sigma) + " is not a blur class");
}

TrainingData load_training_data(const std::filesystem::path& corpus_dir, const corpus::CorpusManifest& manifest,
                                unsigned threads) {
  std::vector<std::size_t> picked;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const auto& e = manifest.entries[i];
    if (e.split == "train" || e.label == corpus::Label::kReal) picked.push_back(i);
  }
  TrainingData data;
  data.images.resize(picked.size());
  parallel_for(picked.size(), threads,
               [&](std::size_t i) { data.images[i] = read_image(corpus_dir / manifest.entries[picked[i]].path); });
  for (std::size_t i = 0; i < picked.size(); ++i) {
    const auto& e = manifest.entries[picked[i]];
    const Image* img = &data.images[i];
    if (e.split == "train") {
      if (e.label == corpus::Label::kReal) {
        data.reals.push_back(img);
        data.real_classes.push_back(sigma_class(e.sigma));
      } else {
        data.fakes.push_back(img);
      }
    } else {
      data.heldout.push_back(img);
      data.heldout_classes.push_back(sigma_class(e.sigma));
    }
  }
  if (data.reals.empty() || data.fakes.empty()) throw ConfigError("corpus has no training reals or fakes");
  return data;
}

std::unique_ptr<Model> pretrain_model(const RunConfig& cfg, const TrainingData& data,
                                      std::optional<train::PretextResult>* result) {
  auto model = std::make_unique<Model>(cfg.model, cfg.init_seed());
  if (cfg.pretext) {
    auto r = train::pretrain_backbone(*model, data.reals, data.real_classes, data.heldout, data.heldout_classes,
                                      cfg.pretext_config());
    if (result) *result = r;
  } else {
    train::freeze_backbone(*model);
  }
  return model;
}

TrainRun run_training(const RunConfig& cfg, const TrainingData& data,
                      const std::function<void(const train::LogRow&)>& on_step, const Model* backbone_from) {
  cfg.validate();
  TrainRun run;
  if (backbone_from) {
    run.model = std::make_unique<Model>(cfg.model, cfg.init_seed());
    for (Parameter* p : run.model->encoder().backbone_params()) {
      p->value = backbone_from->params().get(p->name).value;
    }
    train::freeze_backbone(*run.model);
  } else {
    run.model = pretrain_model(cfg, data, &run.pretext);
  }
  run.model->params().round_to_float();
  run.train = train::train_detector(*run.model, data.reals, data.fakes, cfg.train_config(), on_step);
  return run;
}

std::filesystem::path checkpoint_file(const std::filesystem::path& path) {
  return std::filesystem::is_directory(path) ? path / kCheckpointName : path;
}

std::unique_ptr<Model> load_model(const std::filesystem::path& checkpoint, const RunConfig& cfg) {
  const ParamStore stored = load_checkpoint(checkpoint_file(checkpoint));
  auto model = std::make_unique<Model>(cfg.model, cfg.init_seed());
  if (stored.all().size() != model->params().all().size()) {
    throw ConfigError("checkpoint holds " + std::to_string(stored.all().size()) + " tensors, config expects " +
                      std::to_string(model->params().all().size()));
  }
  assign_values(model->params(), stored);
  return model;
}

std::string log_line(const train::LogRow& row) {
  nlohmann::ordered_json j;
  j["step"] = row.step;
  j["epoch"] = row.epoch;
  j["loss"] = row.loss;
  j["acc"] = row.acc;
  return j.dump();
}

}  // namespace himix::pipeline
