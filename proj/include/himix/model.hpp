#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "himix/encoder.hpp"
#include "himix/fusion.hpp"
#include "himix/head.hpp"

namespace himix {

struct ModelConfig {
  encoder::EncoderConfig encoder;
  fusion::FusionConfig fusion;
  std::size_t head_hidden = 32;
};

/// Closed-form parameter counts for a configuration.
struct ParamCensus {
  std::size_t lora = 0;
  std::size_t fusion = 0;
  std::size_t head = 0;
  std::size_t backbone = 0;
  std::size_t trainable() const { return lora + fusion + head; }
  std::size_t total() const { return trainable() + backbone; }
};
ParamCensus census(const ModelConfig& cfg);

/// Frozen ViT backbone with LoRA adapters, hierarchical fusion and the
/// classifier head, all parameters in one store.
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t init_seed, bool backbone_trainable = false);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return *store_; }
  const ParamStore& params() const { return *store_; }
  const encoder::VitEncoder& encoder() const { return *encoder_; }
  const fusion::HarFusion& fusion() const { return *fusion_; }
  const head::ClassifierHead& head() const { return *head_; }

  struct Forward {
    ad::Var feature;  // fused representation [d]
    ad::Var logit;    // [1]
    ad::Var prob;     // [1]
  };
  Forward forward(Binder& bind, const Image& img) const;

  /// Probability that `img` is synthetic. Read-only; safe to call concurrently.
  double predict(const Image& img) const;
  std::vector<double> features(const Image& img) const;

 private:
  ModelConfig cfg_;
  std::unique_ptr<ParamStore> store_;
  std::unique_ptr<encoder::VitEncoder> encoder_;
  std::unique_ptr<fusion::HarFusion> fusion_;
  std::unique_ptr<head::ClassifierHead> head_;
};

}  // namespace himix
