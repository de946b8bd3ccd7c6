#include "himix/model.hpp"

namespace himix {

ParamCensus census(const ModelConfig& cfg) {
  const auto& e = cfg.encoder;
  const auto& f = cfg.fusion;
  const std::size_t d = e.embed_dim, n = e.selected_layers.size(), hh = cfg.head_hidden;
  const std::size_t mlp = d * e.mlp_ratio;
  ParamCensus c;
  c.lora = e.lora_param_count();
  if (f.hirp) c.fusion += f.scales.size();
  if (f.clf) c.fusion += f.hirp ? 2 * n : n;
  if (f.hirp && f.cgf) {
    const std::size_t h = f.cgf_hidden == 0 ? d : f.cgf_hidden;
    c.fusion += 2 * d * h + h + 2 * h + 2;
  }
  c.head = d * hh + hh + hh * hh + hh + hh + 1;
  const std::size_t per_layer = 4 * d + 4 * (d * d + d) + d * mlp + mlp + mlp * d + d;
  c.backbone = e.patch_dim() * d + d + d + (e.num_patches() + 1) * d + e.layers * per_layer + 2 * d;
  return c;
}

Model::Model(const ModelConfig& cfg, std::uint64_t init_seed, bool backbone_trainable)
    : cfg_(cfg), store_(std::make_unique<ParamStore>()) {
  Rng enc_rng(derive_seed(init_seed, "encoder"));
  encoder_ = std::make_unique<encoder::VitEncoder>(cfg_.encoder, *store_, enc_rng, backbone_trainable);
  Rng fusion_rng(derive_seed(init_seed, "fusion"));
  fusion_ = std::make_unique<fusion::HarFusion>(cfg_.fusion, cfg_.encoder.embed_dim, cfg_.encoder.grid(),
                                                cfg_.encoder.selected_layers.size(), *store_, fusion_rng);
  Rng head_rng(derive_seed(init_seed, "head"));
  head_ = std::make_unique<head::ClassifierHead>(cfg_.encoder.embed_dim, cfg_.head_hidden, *store_, head_rng);
}

Model::Forward Model::forward(Binder& bind, const Image& img) const {
  const auto layers = encoder_->forward_collect(bind, img);
  ad::Var feature = fusion_->forward(bind, layers);
  const auto out = head_->forward(bind, feature);
  return {feature, out.logit, out.prob};
}

double Model::predict(const Image& img) const {
  ad::Graph g;
  Binder bind(g, false);
  return forward(bind, img).prob.value().data[0];
}

std::vector<double> Model::features(const Image& img) const {
  ad::Graph g;
  Binder bind(g, false);
  return forward(bind, img).feature.value().data;
}

}  // namespace himix
