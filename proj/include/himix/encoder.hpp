#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "himix/autodiff.hpp"
#include "himix/image.hpp"
#include "himix/params.hpp"

namespace himix::encoder {

struct EncoderConfig {
  std::size_t embed_dim = 64;
  std::size_t layers = 6;
  std::size_t heads = 4;
  std::size_t patch_size = 8;
  std::size_t image_size = 64;
  std::size_t mlp_ratio = 4;
  /// 1-based, strictly increasing.
  std::vector<std::size_t> selected_layers{2, 4, 6};
  std::size_t lora_rank = 8;
  double lora_alpha = 16.0;
  bool lora_enabled = true;

  void validate() const;
  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t patch_dim() const { return 3 * patch_size * patch_size; }
  double lora_scale() const { return lora_alpha / static_cast<double>(lora_rank); }
  /// 2 * 3 * layers * d * r when adapters are enabled.
  std::size_t lora_param_count() const;
};

/// Tokens of one selected layer: CLS [d] and patch tokens [N x d].
struct LayerOutput {
  ad::Var cls;
  ad::Var patches;
};

/// Flattens non-overlapping p x p patches in row-major grid order; each row
/// holds one patch as (channel, y, x).
Tensor extract_patches(const Image& img, std::size_t patch_size);

/// Pre-layernorm ViT. Parameters live in the ParamStore under "enc.*";
/// backbone weights are registered trainable=false unless `backbone_trainable`,
/// adapter matrices ("enc.lN.lora.{q,k,v}.{a,b}") are always trainable with
/// B zero-initialised.
class VitEncoder {
 public:
  VitEncoder(const EncoderConfig& cfg, ParamStore& store, Rng& rng, bool backbone_trainable = false);

  const EncoderConfig& config() const { return cfg_; }

  /// [N+1 x d]: CLS token followed by projected patches, plus positional embeddings.
  ad::Var patch_embed(Binder& bind, const Image& img) const;
  /// One transformer block (1-based layer index) with LoRA on Q, K and V.
  ad::Var block(Binder& bind, ad::Var tokens, std::size_t layer) const;
  /// Runs every block; returns the tokens of the selected layers.
  std::vector<LayerOutput> forward_collect(Binder& bind, const Image& img) const;
  /// Final-layer CLS after the closing layer norm, used by the pretext head.
  ad::Var final_cls(Binder& bind, const Image& img) const;

  /// Every backbone (non-adapter) parameter.
  std::vector<Parameter*> backbone_params() const;
  std::vector<Parameter*> lora_params() const;

 private:
  struct Layer {
    Parameter *ln1_g, *ln1_b, *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
    Parameter *ln2_g, *ln2_b, *w1, *b1, *w2, *b2;
    Parameter *qa = nullptr, *qb = nullptr, *ka = nullptr, *kb = nullptr, *va = nullptr, *vb = nullptr;
  };

  ad::Var run(Binder& bind, const Image& img, std::vector<LayerOutput>* collect) const;
  ad::Var project(Binder& bind, ad::Var h, Parameter* w, Parameter* b, Parameter* a_lora, Parameter* b_lora) const;

  EncoderConfig cfg_;
  Parameter *patch_w_, *patch_b_, *cls_, *pos_, *lnf_g_, *lnf_b_;
  std::vector<Layer> layers_;
};

}  // namespace himix::encoder
