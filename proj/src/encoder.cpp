#include "himix/encoder.hpp"

#include <algorithm>
#include <cmath>

namespace himix::encoder {

using ad::Var;

void EncoderConfig::validate() const {
  if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0) {
    throw ConfigError("embed_dim must be a positive multiple of heads");
  }
  if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
    throw ConfigError("image_size must be a positive multiple of patch_size");
  }
  if (layers == 0) throw ConfigError("encoder needs at least one layer");
  if (mlp_ratio == 0) throw ConfigError("mlp_ratio must be positive");
  if (selected_layers.empty()) throw ConfigError("selected_layers must not be empty");
  for (std::size_t i = 0; i < selected_layers.size(); ++i) {
    if (selected_layers[i] < 1 || selected_layers[i] > layers) {
      throw ConfigError("selected layer " + std::to_string(selected_layers[i]) + " outside 1.." +
                        std::to_string(layers));
    }
    if (i > 0 && selected_layers[i] <= selected_layers[i - 1]) {
      throw ConfigError("selected_layers must be strictly increasing");
    }
  }
  if (lora_enabled && lora_rank == 0) throw ConfigError("lora_rank must be positive when adapters are enabled");
}

std::size_t EncoderConfig::lora_param_count() const {
  return lora_enabled ? 2 * 3 * layers * embed_dim * lora_rank : 0;
}

Tensor extract_patches(const Image& img, std::size_t p) {
  if (p == 0 || img.height % p != 0 || img.width % p != 0) {
    throw ShapeError("image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                     " is not divisible into " + std::to_string(p) + "px patches");
  }
  const std::size_t gh = img.height / p, gw = img.width / p;
  Tensor out({gh * gw, img.channels * p * p});
  std::size_t k = 0;
  for (std::size_t by = 0; by < gh; ++by) {
    for (std::size_t bx = 0; bx < gw; ++bx) {
      for (std::size_t c = 0; c < img.channels; ++c) {
        for (std::size_t y = 0; y < p; ++y) {
          for (std::size_t x = 0; x < p; ++x) out.data[k++] = img.at(c, by * p + y, bx * p + x);
        }
      }
    }
  }
  return out;
}

VitEncoder::VitEncoder(const EncoderConfig& cfg, ParamStore& store, Rng& rng, bool backbone_trainable) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t d = cfg_.embed_dim, hidden = d * cfg_.mlp_ratio, r = cfg_.lora_rank;
  const bool bt = backbone_trainable;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  auto frozen = [&](const std::string& name, Tensor t) { return &store.add(name, std::move(t), bt); };

  patch_w_ = frozen("enc.patch.w", normal_tensor({cfg_.patch_dim(), d}, 1.0 / std::sqrt(cfg_.patch_dim()), rng));
  patch_b_ = frozen("enc.patch.b", Tensor({d}, 0.0));
  cls_ = frozen("enc.cls", normal_tensor({1, d}, 0.02, rng));
  pos_ = frozen("enc.pos", normal_tensor({cfg_.num_patches() + 1, d}, 0.02, rng));

  for (std::size_t l = 1; l <= cfg_.layers; ++l) {
    const std::string pre = "enc.l" + std::to_string(l) + ".";
    Layer L{};
    L.ln1_g = frozen(pre + "ln1.g", Tensor({d}, 1.0));
    L.ln1_b = frozen(pre + "ln1.b", Tensor({d}, 0.0));
    L.wq = frozen(pre + "attn.wq", normal_tensor({d, d}, sd, rng));
    L.bq = frozen(pre + "attn.bq", Tensor({d}, 0.0));
    L.wk = frozen(pre + "attn.wk", normal_tensor({d, d}, sd, rng));
    L.bk = frozen(pre + "attn.bk", Tensor({d}, 0.0));
    L.wv = frozen(pre + "attn.wv", normal_tensor({d, d}, sd, rng));
    L.bv = frozen(pre + "attn.bv", Tensor({d}, 0.0));
    L.wo = frozen(pre + "attn.wo", normal_tensor({d, d}, sd, rng));
    L.bo = frozen(pre + "attn.bo", Tensor({d}, 0.0));
    L.ln2_g = frozen(pre + "ln2.g", Tensor({d}, 1.0));
    L.ln2_b = frozen(pre + "ln2.b", Tensor({d}, 0.0));
    L.w1 = frozen(pre + "mlp.w1", normal_tensor({d, hidden}, sd, rng));
    L.b1 = frozen(pre + "mlp.b1", Tensor({hidden}, 0.0));
    L.w2 = frozen(pre + "mlp.w2", normal_tensor({hidden, d}, 1.0 / std::sqrt(static_cast<double>(hidden)), rng));
    L.b2 = frozen(pre + "mlp.b2", Tensor({d}, 0.0));
    layers_.push_back(L);
  }
  lnf_g_ = frozen("enc.lnf.g", Tensor({d}, 1.0));
  lnf_b_ = frozen("enc.lnf.b", Tensor({d}, 0.0));

  // Adapters are drawn after the backbone so toggling them leaves backbone init unchanged.
  if (cfg_.lora_enabled) {
    for (std::size_t l = 1; l <= cfg_.layers; ++l) {
      const std::string pre = "enc.l" + std::to_string(l) + ".lora.";
      Layer& L = layers_[l - 1];
      L.qa = &store.add(pre + "q.a", normal_tensor({d, r}, sd, rng), true);
      L.qb = &store.add(pre + "q.b", Tensor({r, d}, 0.0), true);
      L.ka = &store.add(pre + "k.a", normal_tensor({d, r}, sd, rng), true);
      L.kb = &store.add(pre + "k.b", Tensor({r, d}, 0.0), true);
      L.va = &store.add(pre + "v.a", normal_tensor({d, r}, sd, rng), true);
      L.vb = &store.add(pre + "v.b", Tensor({r, d}, 0.0), true);
    }
  }
}

Var VitEncoder::patch_embed(Binder& bind, const Image& img) const {
  if (img.channels != 3 || img.height != cfg_.image_size || img.width != cfg_.image_size) {
    throw ShapeError("encoder expects 3x" + std::to_string(cfg_.image_size) + "x" + std::to_string(cfg_.image_size) +
                     " input, got " + std::to_string(img.channels) + "x" + std::to_string(img.height) + "x" +
                     std::to_string(img.width));
  }
  ad::Graph& g = bind.graph();
  Var patches = g.constant(extract_patches(img, cfg_.patch_size));
  Var proj = ad::add_row(ad::matmul(patches, bind(*patch_w_)), bind(*patch_b_));
  const Var rows[] = {bind(*cls_), proj};
  return ad::add(ad::concat_rows(rows), bind(*pos_));
}

Var VitEncoder::project(Binder& bind, Var h, Parameter* w, Parameter* b, Parameter* a_lora, Parameter* b_lora) const {
  Var out = ad::add_row(ad::matmul(h, bind(*w)), bind(*b));
  if (a_lora == nullptr) return out;
  Var delta = ad::matmul(ad::matmul(h, bind(*a_lora)), bind(*b_lora));
  return ad::add(out, ad::scale(delta, cfg_.lora_scale()));
}

Var VitEncoder::block(Binder& bind, Var x, std::size_t layer) const {
  if (layer < 1 || layer > cfg_.layers) throw ConfigError("layer index " + std::to_string(layer) + " out of range");
  const Layer& L = layers_[layer - 1];
  const std::size_t dh = cfg_.embed_dim / cfg_.heads;

  Var h = ad::layer_norm(x, bind(*L.ln1_g), bind(*L.ln1_b));
  Var q = project(bind, h, L.wq, L.bq, L.qa, L.qb);
  Var k = project(bind, h, L.wk, L.bk, L.ka, L.kb);
  Var v = project(bind, h, L.wv, L.bv, L.va, L.vb);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> heads;
  heads.reserve(cfg_.heads);
  for (std::size_t i = 0; i < cfg_.heads; ++i) {
    Var qh = ad::slice_cols(q, i * dh, dh);
    Var kh = ad::slice_cols(k, i * dh, dh);
    Var vh = ad::slice_cols(v, i * dh, dh);
    Var att = ad::softmax(ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt), 1);
    heads.push_back(ad::matmul(att, vh));
  }
  Var attn = ad::add_row(ad::matmul(ad::concat_cols(heads), bind(*L.wo)), bind(*L.bo));
  x = ad::add(x, attn);

  Var h2 = ad::layer_norm(x, bind(*L.ln2_g), bind(*L.ln2_b));
  Var m = ad::add_row(ad::matmul(ad::gelu(ad::add_row(ad::matmul(h2, bind(*L.w1)), bind(*L.b1))), bind(*L.w2)),
                      bind(*L.b2));
  return ad::add(x, m);
}

Var VitEncoder::run(Binder& bind, const Image& img, std::vector<LayerOutput>* collect) const {
  Var x = patch_embed(bind, img);
  const std::size_t last = collect ? cfg_.selected_layers.back() : cfg_.layers;
  auto sel = cfg_.selected_layers.begin();
  for (std::size_t l = 1; l <= last; ++l) {
    x = block(bind, x, l);
    if (collect && sel != cfg_.selected_layers.end() && *sel == l) {
      collect->push_back(
          {ad::reshape(ad::slice_rows(x, 0, 1), {cfg_.embed_dim}), ad::slice_rows(x, 1, cfg_.num_patches())});
      ++sel;
    }
  }
  return x;
}

std::vector<LayerOutput> VitEncoder::forward_collect(Binder& bind, const Image& img) const {
  std::vector<LayerOutput> out;
  run(bind, img, &out);
  return out;
}

Var VitEncoder::final_cls(Binder& bind, const Image& img) const {
  Var x = run(bind, img, nullptr);
  Var cls = ad::slice_rows(x, 0, 1);
  return ad::reshape(ad::layer_norm(cls, bind(*lnf_g_), bind(*lnf_b_)), {cfg_.embed_dim});
}

std::vector<Parameter*> VitEncoder::backbone_params() const {
  std::vector<Parameter*> out{patch_w_, patch_b_, cls_, pos_};
  for (const Layer& L : layers_) {
    for (Parameter* p :
         {L.ln1_g, L.ln1_b, L.wq, L.bq, L.wk, L.bk, L.wv, L.bv, L.wo, L.bo, L.ln2_g, L.ln2_b, L.w1, L.b1, L.w2, L.b2}) {
      out.push_back(p);
    }
  }
  out.push_back(lnf_g_);
  out.push_back(lnf_b_);
  return out;
}

std::vector<Parameter*> VitEncoder::lora_params() const {
  std::vector<Parameter*> out;
  for (const Layer& L : layers_) {
    if (!L.qa) continue;
    for (Parameter* p : {L.qa, L.qb, L.ka, L.kb, L.va, L.vb}) out.push_back(p);
  }
  return out;
}

}  // namespace himix::encoder
