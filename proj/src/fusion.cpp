#include "himix/fusion.hpp"

#include <cmath>

namespace himix::fusion {

using ad::Var;

Var hirp(Var patches, std::span<const std::size_t> scales, Var scale_logits) {
  if (patches.shape().size() != 2) throw ShapeError("hirp: patches must be [N x d], got " + shape_str(patches.shape()));
  const std::size_t n = patches.shape()[0], d = patches.shape()[1];
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
  if (side * side != n) throw ShapeError("hirp: " + std::to_string(n) + " patch tokens do not form a square grid");
  if (scales.empty()) throw ConfigError("hirp: no window sizes");
  if (scale_logits.shape() != Shape{scales.size()}) {
    throw ShapeError("hirp: expected " + std::to_string(scales.size()) + " scale logits, got " +
                     shape_str(scale_logits.shape()));
  }
  std::vector<Var> per_scale;
  per_scale.reserve(scales.size());
  for (std::size_t s : scales) {
    per_scale.push_back(ad::reduce(ad::Reduction::kMax, ad::window_mean(patches, side, side, s), 0));
  }
  Var weights = ad::reshape(ad::softmax(scale_logits, 0), {1, scales.size()});
  return ad::reshape(ad::matmul(weights, ad::stack(per_scale)), {d});
}

Var cross_layer_fuse(std::span<const Var> tokens, Var logits) {
  if (tokens.empty()) throw ShapeError("cross_layer_fuse: no layers");
  if (logits.shape() != Shape{tokens.size()}) {
    throw ShapeError("cross_layer_fuse: " + std::to_string(tokens.size()) + " layers but logits " +
                     shape_str(logits.shape()));
  }
  const Shape token_shape = tokens.front().shape();
  if (token_shape.size() != 1) throw ShapeError("cross_layer_fuse: tokens must be vectors");
  Var weights = ad::reshape(ad::softmax(logits, 0), {1, tokens.size()});
  return ad::reshape(ad::matmul(weights, ad::stack(tokens)), token_shape);
}

CgfOutput cgf(Var z_cls, Var z_reg, const CgfWeights& w) {
  if (z_cls.shape().size() != 1 || z_cls.shape() != z_reg.shape()) {
    throw ShapeError("cgf: token shapes " + shape_str(z_cls.shape()) + " and " + shape_str(z_reg.shape()));
  }
  const std::size_t d = z_cls.shape()[0];
  const Var both[] = {z_cls, z_reg};
  Var x = ad::reshape(ad::concat(both), {1, 2 * d});
  Var hidden = ad::gelu(ad::add_row(ad::matmul(x, w.w1), w.b1));
  Var logits = ad::reshape(ad::add_row(ad::matmul(hidden, w.w2), w.b2), {2});
  Var weights = ad::softmax(logits, 0);
  Var fused = ad::reshape(ad::matmul(ad::reshape(weights, {1, 2}), ad::stack(both)), {d});
  return {fused, weights};
}

HarFusion::HarFusion(const FusionConfig& cfg, std::size_t embed_dim, std::size_t grid, std::size_t num_layers,
                     ParamStore& store, Rng& rng)
    : cfg_(cfg), d_(embed_dim), grid_(grid), n_(num_layers) {
  if (cfg_.cgf_hidden == 0) cfg_.cgf_hidden = d_;
  if (cfg_.hirp) {
    if (cfg_.scales.empty()) throw ConfigError("fusion needs at least one window size");
    for (std::size_t s : cfg_.scales) {
      if (s == 0 || grid_ % s != 0) {
        throw ConfigError("window size " + std::to_string(s) + " does not tile the " + std::to_string(grid_) + "x" +
                          std::to_string(grid_) + " token grid");
      }
    }
    beta_ = &store.add("har.beta", Tensor({cfg_.scales.size()}, 0.0), true);
  }
  if (cfg_.clf) {
    a_cls_ = &store.add("har.a_cls", Tensor({n_}, 0.0), true);
    if (cfg_.hirp) a_reg_ = &store.add("har.a_reg", Tensor({n_}, 0.0), true);
  }
  if (cfg_.hirp && cfg_.cgf) {
    const std::size_t h = cfg_.cgf_hidden;
    w1_ = &store.add("har.cgf.w1", normal_tensor({2 * d_, h}, 1.0 / std::sqrt(2.0 * d_), rng), true);
    b1_ = &store.add("har.cgf.b1", Tensor({h}, 0.0), true);
    w2_ = &store.add("har.cgf.w2", normal_tensor({h, 2}, 1.0 / std::sqrt(static_cast<double>(h)), rng), true);
    b2_ = &store.add("har.cgf.b2", Tensor({2}, 0.0), true);
  }
}

std::size_t HarFusion::param_count() const {
  std::size_t n = 0;
  for (const Parameter* p : {beta_, a_cls_, a_reg_, w1_, b1_, w2_, b2_}) {
    if (p) n += p->value.size();
  }
  return n;
}

Var HarFusion::forward(Binder& bind, std::span<const encoder::LayerOutput> layers) const {
  if (layers.empty()) throw ShapeError("fusion: no layer outputs");
  if (cfg_.clf && layers.size() != n_) {
    throw ShapeError("fusion: expected " + std::to_string(n_) + " layers, got " + std::to_string(layers.size()));
  }
  std::vector<Var> cls_tokens, reg_tokens;
  for (const auto& lo : layers) {
    cls_tokens.push_back(lo.cls);
    if (cfg_.hirp && (cfg_.clf || &lo == &layers.back())) {
      reg_tokens.push_back(hirp(lo.patches, cfg_.scales, bind(*beta_)));
    }
  }
  Var z_cls = cfg_.clf ? cross_layer_fuse(cls_tokens, bind(*a_cls_)) : cls_tokens.back();
  if (!cfg_.hirp) return z_cls;
  Var z_reg = cfg_.clf ? cross_layer_fuse(reg_tokens, bind(*a_reg_)) : reg_tokens.back();
  if (cfg_.cgf) return cgf(z_cls, z_reg, {bind(*w1_), bind(*b1_), bind(*w2_), bind(*b2_)}).fused;
  return ad::scale(ad::add(z_cls, z_reg), 0.5);
}

}  // namespace himix::fusion
