#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "himix/autodiff.hpp"
#include "himix/encoder.hpp"
#include "himix/params.hpp"

/// Hierarchical artifact-aware representation: multi-scale region pooling,
/// cross-layer fusion and cross-granularity fusion.
namespace himix::fusion {

/// Region token of one layer. For every window size s, the grid x grid patch
/// tokens are split into non-overlapping s x s windows, each window is
/// averaged, and the elementwise max over windows gives a d-vector. The
/// per-scale vectors are combined with softmax(scale_logits).
ad::Var hirp(ad::Var patches, std::span<const std::size_t> scales, ad::Var scale_logits);

/// softmax(logits)^T stack(tokens).
ad::Var cross_layer_fuse(std::span<const ad::Var> tokens, ad::Var logits);

struct CgfWeights {
  ad::Var w1, b1, w2, b2;  // [2d x h], [h], [h x 2], [2]
};

struct CgfOutput {
  ad::Var fused;    // [d]
  ad::Var weights;  // [2] = (w_cls, w_reg)
};

/// w = softmax(MLP([z_cls, z_reg])) with a GELU between the two linear
/// layers; fused = w_cls * z_cls + w_reg * z_reg.
CgfOutput cgf(ad::Var z_cls, ad::Var z_reg, const CgfWeights& weights);

struct FusionConfig {
  std::vector<std::size_t> scales{2, 4, 8};
  /// 0 selects the embedding width.
  std::size_t cgf_hidden = 0;
  bool hirp = true;
  bool clf = true;
  bool cgf = true;
};

/// Parameters (trainable): har.beta [R], har.a_cls [n], har.a_reg [n],
/// har.cgf.{w1,b1,w2,b2}. Disabled components register nothing.
///
/// Without CLF each stream uses the last selected layer. Without CGF the two
/// streams are averaged with fixed weights. Without HiRP only the CLS stream
/// reaches the output.
class HarFusion {
 public:
  HarFusion(const FusionConfig& cfg, std::size_t embed_dim, std::size_t grid, std::size_t num_layers, ParamStore& store,
            Rng& rng);

  ad::Var forward(Binder& bind, std::span<const encoder::LayerOutput> layers) const;
  const FusionConfig& config() const { return cfg_; }
  std::size_t param_count() const;

 private:
  FusionConfig cfg_;
  std::size_t d_, grid_, n_;
  Parameter *beta_ = nullptr, *a_cls_ = nullptr, *a_reg_ = nullptr;
  Parameter *w1_ = nullptr, *b1_ = nullptr, *w2_ = nullptr, *b2_ = nullptr;
};

}  // namespace himix::fusion
