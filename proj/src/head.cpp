#include "himix/head.hpp"

#include <algorithm>
#include <cmath>

namespace himix::head {

using ad::Var;

ClassifierHead::ClassifierHead(std::size_t in_dim, std::size_t hidden, ParamStore& store, Rng& rng) : in_dim_(in_dim) {
  if (in_dim == 0 || hidden == 0) throw ConfigError("head widths must be positive");
  w1_ = &store.add("head.fc1.w", normal_tensor({in_dim, hidden}, std::sqrt(2.0 / in_dim), rng), true);
  b1_ = &store.add("head.fc1.b", Tensor({hidden}, 0.0), true);
  w2_ = &store.add("head.fc2.w", normal_tensor({hidden, hidden}, std::sqrt(2.0 / hidden), rng), true);
  b2_ = &store.add("head.fc2.b", Tensor({hidden}, 0.0), true);
  w3_ = &store.add("head.out.w", normal_tensor({hidden, 1}, std::sqrt(1.0 / hidden), rng), true);
  b3_ = &store.add("head.out.b", Tensor({1}, 0.0), true);
}

ClassifierHead::Output ClassifierHead::forward(Binder& bind, Var feature) const {
  if (feature.shape() != Shape{in_dim_}) {
    throw ShapeError("head expects a [" + std::to_string(in_dim_) + "] feature, got " + shape_str(feature.shape()));
  }
  Var x = ad::reshape(feature, {1, in_dim_});
  x = ad::relu(ad::add_row(ad::matmul(x, bind(*w1_)), bind(*b1_)));
  x = ad::relu(ad::add_row(ad::matmul(x, bind(*w2_)), bind(*b2_)));
  Var logit = ad::reshape(ad::add_row(ad::matmul(x, bind(*w3_)), bind(*b3_)), {1});
  return {logit, ad::sigmoid(logit)};
}

std::size_t ClassifierHead::param_count() const {
  std::size_t n = 0;
  for (const Parameter* p : {w1_, b1_, w2_, b2_, w3_, b3_}) n += p->value.size();
  return n;
}

double bce_loss(std::span<const double> probs, std::span<const double> labels) {
  if (probs.size() != labels.size()) {
    throw ShapeError("bce_loss: " + std::to_string(probs.size()) + " predictions vs " + std::to_string(labels.size()) +
                     " labels");
  }
  if (probs.empty()) throw ShapeError("bce_loss: empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], ad::kProbClamp, 1.0 - ad::kProbClamp);
    total += labels[i] * std::log(p) + (1.0 - labels[i]) * std::log(1.0 - p);
  }
  return -total / static_cast<double>(probs.size());
}

}  // namespace himix::head

namespace himix::optim {

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state,
               const AdamConfig& cfg) {
  if (params.size() != grads.size()) throw ShapeError("adam: parameter and gradient counts differ");
  if (state.m.empty() && state.step == 0) {
    for (const Tensor* p : params) {
      state.m.emplace_back(p->shape, 0.0);
      state.v.emplace_back(p->shape, 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam: state does not match parameter list");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k]->shape != grads[k].shape || state.m[k].shape != params[k]->shape) {
      throw ShapeError("adam: shape mismatch for tensor " + std::to_string(k) + ": " + shape_str(params[k]->shape) +
                       " vs grad " + shape_str(grads[k].shape));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k]->data;
    auto& m = state.m[k].data;
    auto& v = state.v[k].data;
    const auto& g = grads[k].data;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      p[i] -= cfg.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
    }
  }
}

}  // namespace himix::optim
