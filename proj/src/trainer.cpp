#include "himix/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include "himix/parallel.hpp"

namespace himix::train {

namespace {

constexpr std::size_t kShards = 8;

}  // namespace

BatchGradients batch_gradients(std::size_t n, std::span<Parameter* const> params, const SampleFn& fn,
                               unsigned threads) {
  if (n == 0) throw ConfigError("batch_gradients: empty batch");
  std::unordered_map<const Parameter*, std::size_t> slot;
  for (std::size_t k = 0; k < params.size(); ++k) slot.emplace(params[k], k);

  struct Shard {
    std::vector<Tensor> grads;
    double loss = 0.0;
    std::size_t correct = 0;
  };
  const std::size_t shards = std::min(kShards, n);
  std::vector<Shard> partial(shards);
  parallel_for(shards, threads, [&](std::size_t s) {
    Shard& out = partial[s];
    for (const Parameter* p : params) out.grads.emplace_back(p->value.shape, 0.0);
    const std::size_t lo = s * n / shards, hi = (s + 1) * n / shards;
    for (std::size_t i = lo; i < hi; ++i) {
      ad::Graph g;
      Binder bind(g, true);
      const SampleResult r = fn(bind, i);
      out.loss += r.loss.value().data.at(0);
      out.correct += r.correct ? 1 : 0;
      g.backward(r.loss);
      for (const auto& [param, var] : bind.bound()) {
        auto it = slot.find(param);
        if (it == slot.end()) continue;
        if (const Tensor* gr = g.grad(var)) {
          auto& dst = out.grads[it->second].data;
          for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += gr->data[j];
        }
      }
    }
  });

  BatchGradients result;
  for (const Parameter* p : params) result.grads.emplace_back(p->value.shape, 0.0);
  double loss = 0.0;
  for (const Shard& s : partial) {
    loss += s.loss;
    result.correct += s.correct;
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& dst = result.grads[k].data;
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += s.grads[k].data[j];
    }
  }
  const double inv = 1.0 / static_cast<double>(n);
  for (Tensor& t : result.grads) {
    for (double& v : t.data) v *= inv;
  }
  result.mean_loss = loss * inv;
  return result;
}

std::size_t fraction_count(std::size_t n, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("data fraction must lie in (0, 1]");
  const auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
  return std::clamp<std::size_t>(k, 1, std::max<std::size_t>(n, 1));
}

TrainResult train_detector(Model& model, const std::vector<const Image*>& all_reals,
                           const std::vector<const Image*>& all_fakes, const TrainConfig& cfg,
                           const std::function<void(const LogRow&)>& on_step) {
  if (all_reals.empty() || all_fakes.empty()) throw ConfigError("training needs real and fake images");
  if (cfg.batch < 2) throw ConfigError("batch must be at least 2");
  std::vector<const Image*> reals(all_reals.begin(), all_reals.begin() + static_cast<std::ptrdiff_t>(fraction_count(
                                                                             all_reals.size(), cfg.data_fraction)));
  std::vector<const Image*> fakes(all_fakes.begin(), all_fakes.begin() + static_cast<std::ptrdiff_t>(fraction_count(
                                                                             all_fakes.size(), cfg.data_fraction)));

  augment::MixupConfig mix = cfg.mixup;
  if (!cfg.mda) mix.mode = augment::MixMode::kOff;
  mix.validate();

  std::vector<Parameter*> params = model.params().trainable();
  std::vector<Tensor*> values;
  for (Parameter* p : params) values.push_back(&p->value);
  optim::AdamState state;

  Rng rng(derive_seed(cfg.seed, "detector-train"));
  const std::size_t half = cfg.batch / 2;
  const std::size_t steps_per_epoch = std::max<std::size_t>(1, std::min(reals.size(), fakes.size()) / half);

  TrainResult result;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(std::span<const Image*>(reals));
    rng.shuffle(std::span<const Image*>(fakes));
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < steps_per_epoch; ++b) {
      std::vector<const Image*> real_pool, fake_pool;
      for (std::size_t i = 0; i < half; ++i) {
        real_pool.push_back(reals[(b * half + i) % reals.size()]);
        fake_pool.push_back(fakes[(b * half + i) % fakes.size()]);
      }
      const auto batch = augment::compose_batch(real_pool, fake_pool, mix, cfg.batch, rng);
      const auto grads = batch_gradients(
          batch.size(), params,
          [&](Binder& bind, std::size_t i) {
            const auto fwd = model.forward(bind, batch[i].image);
            const double y = batch[i].label;
            ad::Var loss = ad::bce(fwd.prob, std::span<const double>(&y, 1));
            const bool pred = fwd.prob.value().data[0] >= 0.5;
            return SampleResult{loss, pred == (batch[i].label == 1)};
          },
          cfg.threads);
      if (!std::isfinite(grads.mean_loss)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) +
                           " (step " + std::to_string(step) + ")");
      }
      optim::AdamConfig adam = cfg.adam;
      optim::adam_step(values, grads.grads, state, adam);
      LogRow row{step, epoch, grads.mean_loss, static_cast<double>(grads.correct) / static_cast<double>(batch.size())};
      result.log.push_back(row);
      if (on_step) on_step(row);
      epoch_loss += grads.mean_loss;
      ++step;
    }
    result.epoch_mean_loss.push_back(epoch_loss / static_cast<double>(steps_per_epoch));
  }
  return result;
}

void freeze_backbone(Model& model) {
  const auto backbone = model.encoder().backbone_params();
  std::unordered_set<const Parameter*> frozen(backbone.begin(), backbone.end());
  for (auto& p : model.params().all()) p.trainable = !frozen.count(&p);
}

PretextResult pretrain_backbone(Model& model, const std::vector<const Image*>& images,
                                const std::vector<std::size_t>& classes,
                                const std::vector<const Image*>& heldout_images,
                                const std::vector<std::size_t>& heldout_classes, const PretextConfig& cfg) {
  if (images.empty() || images.size() != classes.size()) throw ConfigError("pretext: images and classes differ");
  if (heldout_images.size() != heldout_classes.size()) throw ConfigError("pretext: held-out images and classes differ");
  constexpr std::size_t kClasses = 4;
  const std::size_t d = model.config().encoder.embed_dim;

  const auto backbone = model.encoder().backbone_params();
  for (auto& p : model.params().all()) p.trainable = false;
  for (Parameter* p : backbone) p->trainable = true;

  ParamStore head;
  Rng init(derive_seed(cfg.seed, "pretext-head"));
  Parameter& w =
      head.add("pretext.w", normal_tensor({d, kClasses}, 1.0 / std::sqrt(static_cast<double>(d)), init), true);
  Parameter& b = head.add("pretext.b", Tensor({kClasses}, 0.0), true);

  std::vector<Parameter*> params = backbone;
  params.push_back(&w);
  params.push_back(&b);
  std::vector<Tensor*> values;
  for (Parameter* p : params) values.push_back(&p->value);
  optim::AdamState state;
  optim::AdamConfig adam;
  adam.lr = cfg.lr;

  auto logits_of = [&](Binder& bind, const Image& img) {
    ad::Var cls = ad::reshape(model.encoder().final_cls(bind, img), {1, d});
    return ad::reshape(ad::add_row(ad::matmul(cls, bind(w)), bind(b)), {kClasses});
  };
  auto argmax = [](const Tensor& t) {
    return static_cast<std::size_t>(std::max_element(t.data.begin(), t.data.end()) - t.data.begin());
  };

  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(cfg.seed, "pretext-order"));
  PretextResult result;
  const std::size_t steps = std::max<std::size_t>(1, images.size() / cfg.batch);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t s = 0; s < steps; ++s) {
      const std::size_t n = std::min(cfg.batch, images.size());
      const auto grads = batch_gradients(
          n, params,
          [&](Binder& bind, std::size_t i) {
            const std::size_t idx = order[(s * cfg.batch + i) % order.size()];
            ad::Var z = logits_of(bind, *images[idx]);
            return SampleResult{ad::softmax_cross_entropy(z, classes[idx]), argmax(z.value()) == classes[idx]};
          },
          cfg.threads);
      if (!std::isfinite(grads.mean_loss)) throw NumericError("non-finite pretext loss");
      optim::adam_step(values, grads.grads, state, adam);
      result.final_loss = grads.mean_loss;
    }
  }

  if (!heldout_images.empty()) {
    std::vector<int> hit(heldout_images.size(), 0);
    parallel_for(heldout_images.size(), cfg.threads, [&](std::size_t i) {
      ad::Graph g;
      Binder bind(g, false);
      hit[i] = argmax(logits_of(bind, *heldout_images[i]).value()) == heldout_classes[i];
    });
    result.heldout_accuracy =
        static_cast<double>(std::accumulate(hit.begin(), hit.end(), 0)) / static_cast<double>(hit.size());
  }
  freeze_backbone(model);
  return result;
}

}  // namespace himix::train
