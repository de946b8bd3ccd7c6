#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "himix/augment.hpp"
#include "himix/model.hpp"

namespace himix::train {

/// Per-sample graph builder for batch_gradients: returns the sample's loss
/// node and whether its prediction was correct.
struct SampleResult {
  ad::Var loss;
  bool correct = false;
};
using SampleFn = std::function<SampleResult(Binder&, std::size_t)>;

struct BatchGradients {
  double mean_loss = 0.0;
  std::size_t correct = 0;
  std::vector<Tensor> grads;  // aligned with the parameter list, averaged over the batch
};

/// Builds one graph per sample and averages the gradients of `params`.
/// Samples are reduced in fixed contiguous shards summed in shard order, so
/// the result does not depend on the thread count.
BatchGradients batch_gradients(std::size_t n, std::span<Parameter* const> params, const SampleFn& fn, unsigned threads);

struct TrainConfig {
  std::uint64_t seed = 0;
  std::size_t batch = 32;
  std::size_t epochs = 10;
  optim::AdamConfig adam;
  augment::MixupConfig mixup;
  bool mda = true;
  double data_fraction = 1.0;
  unsigned threads = 0;
};

struct LogRow {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
  double acc = 0.0;
};

struct TrainResult {
  std::vector<LogRow> log;
  std::vector<double> epoch_mean_loss;
};

/// Number of pool entries kept for a data fraction (at least 1).
std::size_t fraction_count(std::size_t n, double fraction);

/// Trains the model's trainable parameters on balanced batches. Each step:
/// compose_batch, forward, BCE, backward, Adam. `on_step` sees every log row.
/// Throws NumericError naming the batch when a loss is not finite.
TrainResult train_detector(Model& model, const std::vector<const Image*>& reals, const std::vector<const Image*>& fakes,
                           const TrainConfig& cfg, const std::function<void(const LogRow&)>& on_step = {});

struct PretextConfig {
  std::uint64_t seed = 0;
  std::size_t epochs = 4;
  std::size_t batch = 32;
  double lr = 3e-4;
  unsigned threads = 0;
};

struct PretextResult {
  double final_loss = 0.0;
  double heldout_accuracy = 0.0;
};

/// Trains the backbone on blur-class prediction (a linear head on the final
/// CLS token, discarded afterwards), then freezes it: backbone parameters end
/// with trainable=false, adapters/fusion/head with trainable=true.
PretextResult pretrain_backbone(Model& model, const std::vector<const Image*>& images,
                                const std::vector<std::size_t>& classes,
                                const std::vector<const Image*>& heldout_images,
                                const std::vector<std::size_t>& heldout_classes, const PretextConfig& cfg);

/// Marks backbone parameters frozen and the rest trainable without pretraining.
void freeze_backbone(Model& model);

}  // namespace himix::train
