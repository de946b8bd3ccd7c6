#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "himix/autodiff.hpp"
#include "himix/params.hpp"

namespace himix::head {

/// d -> hidden (ReLU) -> hidden (ReLU) -> 1 -> sigmoid.
/// Parameters: head.fc1.{w,b}, head.fc2.{w,b}, head.out.{w,b}.
class ClassifierHead {
 public:
  ClassifierHead(std::size_t in_dim, std::size_t hidden, ParamStore& store, Rng& rng);

  struct Output {
    ad::Var logit;  // [1]
    ad::Var prob;   // [1]
  };
  Output forward(Binder& bind, ad::Var feature) const;
  std::size_t param_count() const;

 private:
  std::size_t in_dim_;
  Parameter *w1_, *b1_, *w2_, *b2_, *w3_, *b3_;
};

/// Mean binary cross-entropy over a batch (probabilities clamped to [1e-7, 1-1e-7]).
double bce_loss(std::span<const double> probs, std::span<const double> labels);

}  // namespace himix::head

namespace himix::optim {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update. State tensors are created on the first call.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state, const AdamConfig& cfg);

}  // namespace himix::optim
