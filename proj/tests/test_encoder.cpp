#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "himix/encoder.hpp"
#include "himix/grad_check.hpp"
#include "himix/model.hpp"
#include "oracles.hpp"

using namespace himix;
using namespace himix::encoder;

namespace {

EncoderConfig small_config() {
  EncoderConfig cfg;
  cfg.embed_dim = 16;
  cfg.heads = 2;
  cfg.layers = 2;
  cfg.image_size = 16;
  cfg.patch_size = 8;
  cfg.selected_layers = {1, 2};
  cfg.lora_rank = 4;
  return cfg;
}

Image random_image(std::uint64_t seed, std::size_t size) {
  Rng rng(seed);
  Image img(3, size, size);
  for (float& p : img.pixels) p = static_cast<float>(rng.uniform());
  return img;
}

Tensor eval(const std::function<ad::Var(Binder&)>& f, const ParamStore&) {
  ad::Graph g;
  Binder bind(g, false);
  return f(bind).value();
}

std::vector<double> row_layer_norm(std::vector<double> x) {
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  for (double& v : x) v = (v - mean) / std::sqrt(var + 1e-5);
  return x;
}

std::vector<double> vec_mat(const std::vector<double>& x, const Tensor& w, const Tensor& b) {
  std::vector<double> out(w.dim(1));
  for (std::size_t j = 0; j < w.dim(1); ++j) {
    double s = b[j];
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * w.at(i, j);
    out[j] = s;
  }
  return out;
}

}  // namespace

TEST(EncoderConfig, DefaultsAndValidation) {
  const EncoderConfig cfg;
  EXPECT_EQ(cfg.num_patches(), 64u);
  EXPECT_EQ(cfg.lora_param_count(), 2u * 3u * 6u * 64u * 8u);
  EXPECT_DOUBLE_EQ(cfg.lora_scale(), 2.0);
  EncoderConfig bad = cfg;
  bad.heads = 5;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.image_size = 60;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.selected_layers = {4, 2};
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.selected_layers = {7};
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(PatchEmbed, TokenCountAndShapeCheck) {
  ParamStore store;
  Rng rng(1);
  VitEncoder enc(EncoderConfig{}, store, rng);
  const Tensor t = eval([&](Binder& b) { return enc.patch_embed(b, random_image(2, 64)); }, store);
  EXPECT_EQ(t.shape, (Shape{65, 64}));
  ad::Graph g;
  Binder bind(g, false);
  EXPECT_THROW(enc.patch_embed(bind, Image(3, 32, 32)), ShapeError);
}

TEST(PatchEmbed, ZeroImageGivesPositionalEmbeddings) {
  ParamStore store;
  Rng rng(3);
  VitEncoder enc(small_config(), store, rng);
  store.get("enc.patch.w").value.fill(0.0);
  const Tensor t = eval([&](Binder& b) { return enc.patch_embed(b, Image(3, 16, 16, 0.0f)); }, store);
  const Tensor& pos = store.get("enc.pos").value;
  const Tensor& cls = store.get("enc.cls").value;
  for (std::size_t j = 0; j < 16; ++j) EXPECT_EQ(t.at(0, j), cls[j] + pos.at(0, j));
  for (std::size_t i = 1; i < 5; ++i)
    for (std::size_t j = 0; j < 16; ++j) EXPECT_EQ(t.at(i, j), pos.at(i, j));
}

TEST(PatchEmbed, PatchPermutationEquivariance) {
  EncoderConfig cfg = small_config();
  cfg.image_size = 32;
  ParamStore store;
  Rng rng(4);
  VitEncoder enc(cfg, store, rng);
  store.get("enc.pos").value.fill(0.0);
  const Image img = random_image(5, 32);
  // Swap patches 0 and 3 of the 4x4 grid.
  Image swapped = img;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 8; ++x) std::swap(swapped.at(c, y, x), swapped.at(c, y, 24 + x));
  const Tensor a = eval([&](Binder& b) { return enc.patch_embed(b, img); }, store);
  const Tensor s = eval([&](Binder& b) { return enc.patch_embed(b, swapped); }, store);
  for (std::size_t j = 0; j < 16; ++j) {
    EXPECT_EQ(a.at(1, j), s.at(4, j));
    EXPECT_EQ(a.at(4, j), s.at(1, j));
    EXPECT_EQ(a.at(2, j), s.at(2, j));
  }
}

TEST(Attention, ZeroInitLoraIsBitIdenticalToFrozen) {
  EncoderConfig with = EncoderConfig{}, without = EncoderConfig{};
  without.lora_enabled = false;
  ParamStore sa, sb;
  Rng ra(9), rb(9);
  VitEncoder a(with, sa, ra), b(without, sb, rb);
  const Image img = random_image(6, 64);
  auto collect = [&](const VitEncoder& enc) {
    ad::Graph g;
    Binder bind(g, false);
    std::vector<Tensor> out;
    for (const auto& lo : enc.forward_collect(bind, img)) {
      out.push_back(lo.cls.value());
      out.push_back(lo.patches.value());
    }
    return out;
  };
  const auto oa = collect(a), ob = collect(b);
  ASSERT_EQ(oa.size(), 6u);
  for (std::size_t i = 0; i < oa.size(); ++i) EXPECT_EQ(oa[i].data, ob[i].data);
}

TEST(Attention, SingleTokenAttendsToItself) {
  EncoderConfig cfg = small_config();
  cfg.lora_enabled = false;
  ParamStore store;
  Rng rng(10);
  VitEncoder enc(cfg, store, rng);
  Rng xr(11);
  Tensor x({1, 16});
  for (double& v : x.data) v = xr.normal();
  const Tensor out = eval([&](Binder& b) { return enc.block(b, b.graph().constant(x), 1); }, store);
  // Attention over one token returns its V row; the rest is the residual MLP.
  auto P = [&](const char* n) -> const Tensor& { return store.get(std::string("enc.l1.") + n).value; };
  const std::vector<double> v = vec_mat(row_layer_norm(x.data), P("attn.wv"), P("attn.bv"));
  std::vector<double> h = vec_mat(v, P("attn.wo"), P("attn.bo"));
  for (std::size_t j = 0; j < 16; ++j) h[j] += x[j];
  std::vector<double> m = vec_mat(row_layer_norm(h), P("mlp.w1"), P("mlp.b1"));
  for (double& z : m) z = z * 0.5 * std::erfc(-z / std::sqrt(2.0));
  const std::vector<double> y = vec_mat(m, P("mlp.w2"), P("mlp.b2"));
  for (std::size_t j = 0; j < 16; ++j) EXPECT_NEAR(out[j], h[j] + y[j], 1e-12);
}

TEST(Attention, LayerIndexChecked) {
  ParamStore store;
  Rng rng(1);
  VitEncoder enc(small_config(), store, rng);
  ad::Graph g;
  Binder bind(g, false);
  const ad::Var x = g.constant(Tensor({1, 16}));
  EXPECT_THROW(enc.block(bind, x, 0), ConfigError);
  EXPECT_THROW(enc.block(bind, x, 3), ConfigError);
}

TEST(ForwardCollect, DeterministicAndFinite) {
  ParamStore store;
  Rng rng(12);
  VitEncoder enc(EncoderConfig{}, store, rng);
  const Image img = random_image(13, 64);
  auto run = [&] {
    ad::Graph g;
    Binder bind(g, false);
    std::vector<Tensor> out;
    for (const auto& lo : enc.forward_collect(bind, img)) {
      EXPECT_EQ(lo.cls.shape(), (Shape{64}));
      EXPECT_EQ(lo.patches.shape(), (Shape{64, 64}));
      out.push_back(lo.patches.value());
    }
    return out;
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].data, b[i].data);
    for (double v : a[i].data) ASSERT_TRUE(std::isfinite(v));
  }
}

TEST(ForwardCollect, FrozenWeightsGetNoGradientLoraDoes) {
  ParamStore store;
  Rng rng(14);
  VitEncoder enc(small_config(), store, rng);
  // Nonzero B so every adapter matrix has a generic gradient.
  for (Parameter* p : enc.lora_params()) {
    if (p->name.back() == 'b') p->value = normal_tensor(p->value.shape, 0.1, rng);
  }
  ad::Graph g;
  Binder bind(g, true);
  ad::Var loss;
  for (const auto& lo : enc.forward_collect(bind, random_image(15, 16))) {
    const ad::Var s = ad::sum_all(ad::mul(lo.patches, lo.patches));
    loss = loss.valid() ? ad::add(loss, s) : s;
  }
  g.backward(loss);
  std::size_t frozen_seen = 0, lora_seen = 0;
  for (const auto& [param, var] : bind.bound()) {
    const Tensor* grad = g.grad(var);
    if (param->trainable) {
      ASSERT_NE(grad, nullptr) << param->name;
      double norm = 0.0;
      for (double v : grad->data) norm += v * v;
      EXPECT_GT(norm, 0.0) << param->name;
      ++lora_seen;
    } else {
      EXPECT_EQ(grad, nullptr) << param->name;
      ++frozen_seen;
    }
  }
  EXPECT_EQ(lora_seen, enc.lora_params().size());
  EXPECT_GT(frozen_seen, 0u);
}

TEST(Lora, FiniteDifferenceThroughOneLayer) {
  ParamStore store;
  Rng rng(16);
  VitEncoder enc(small_config(), store, rng);
  std::vector<Parameter*> adapters;
  for (Parameter* p : enc.lora_params())
    if (p->name.rfind("enc.l1.", 0) == 0) adapters.push_back(p);
  ASSERT_EQ(adapters.size(), 6u);
  std::vector<Tensor> init;
  for (Parameter* p : adapters) init.push_back(normal_tensor(p->value.shape, 0.3, rng));
  Tensor x({5, 16});
  for (double& v : x.data) v = rng.normal();
  Tensor w({5, 16});
  for (double& v : w.data) v = rng.normal();

  const auto result = ad::grad_check(
      [&](ad::Graph& g, std::span<const ad::Var> leaves) {
        Binder bind(g, false);
        for (std::size_t i = 0; i < adapters.size(); ++i) bind.override_with(*adapters[i], leaves[i]);
        return ad::sum_all(ad::mul(enc.block(bind, g.constant(x), 1), g.constant(w)));
      },
      init, 1e-5);
  EXPECT_LT(result.max_rel_error, 1e-4);
  EXPECT_GT(result.coords_checked, 0u);
}

TEST(Census, DefaultExactCounts) {
  const ModelConfig cfg;
  const ParamCensus c = census(cfg);
  EXPECT_EQ(c.lora, 18432u);
  EXPECT_EQ(c.trainable(), 29996u);
  EXPECT_EQ(c.total(), 346604u);
  Model model(cfg, 1);
  EXPECT_EQ(model.params().count_values(true), c.trainable());
  EXPECT_EQ(model.params().count_values(false), c.total());
  std::size_t lora = 0;
  for (Parameter* p : model.encoder().lora_params()) lora += p->value.size();
  EXPECT_EQ(lora, c.lora);
  for (Parameter* p : model.encoder().backbone_params()) EXPECT_FALSE(p->trainable) << p->name;
}
