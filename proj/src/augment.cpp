#include "himix/augment.hpp"

#include <cmath>
#include <numeric>

namespace himix::augment {

std::string to_string(MixMode m) {
  switch (m) {
    case MixMode::kRealFake:
      return "real-fake";
    case MixMode::kRealRealControl:
      return "real-real-control";
    case MixMode::kPatchShuffleControl:
      return "patch-shuffle-control";
    case MixMode::kOff:
      return "off";
  }
  return "off";
}

MixMode parse_mix_mode(std::string_view s) {
  for (MixMode m : {MixMode::kRealFake, MixMode::kRealRealControl, MixMode::kPatchShuffleControl, MixMode::kOff}) {
    if (s == to_string(m)) return m;
  }
  throw ConfigError("unknown mixup mode '" + std::string(s) + "'");
}

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::kNatural:
      return "natural";
    case Provenance::kSynthetic:
      return "synthetic";
    case Provenance::kMixed:
      return "mixed";
    case Provenance::kControl:
      return "control";
  }
  return "natural";
}

void MixupConfig::validate() const {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("mixup alpha must be positive");
  if (!(mix_fraction >= 0.0 && mix_fraction <= 1.0)) throw ConfigError("mix fraction must lie in [0, 1]");
}

double sample_lambda(double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw ConfigError("sample_lambda: alpha must be positive");
  // Draw the smaller tail mass m = min(lambda, 1 - lambda) from the logistic
  // of -|log X - log Y| and reject m below double resolution at 1. Rejecting
  // only exact 0/1 would be asymmetric: tiny lambdas survive while their
  // mirror images round to 1, which biases the mean for small alpha.
  constexpr double kMinTail = 0x1p-53;
  for (;;) {
    const double t = rng.log_gamma_draw(alpha) - rng.log_gamma_draw(alpha);
    const double e = std::exp(-std::fabs(t));
    const double m = e / (1.0 + e);
    if (m <= kMinTail) continue;
    return t >= 0.0 ? 1.0 - m : m;
  }
}

namespace {

Image blend(const Image& a, const Image& b, double weight_b) {
  if (!a.same_shape(b)) {
    throw ShapeError("mixup: image shapes differ (" + std::to_string(a.channels) + "x" + std::to_string(a.height) +
                     "x" + std::to_string(a.width) + " vs " + std::to_string(b.channels) + "x" +
                     std::to_string(b.height) + "x" + std::to_string(b.width) + ")");
  }
  Image out(a.channels, a.height, a.width);
  const double weight_a = 1.0 - weight_b;
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    out.pixels[i] = static_cast<float>(weight_b * b.pixels[i] + weight_a * a.pixels[i]);
  }
  return out;
}

}  // namespace

LabeledSample mixup(const Image& real, const Image& fake, double lambda) {
  return {blend(real, fake, lambda), 1, Provenance::kMixed, lambda};
}

LabeledSample real_real_mixup(const Image& x1, const Image& x2, double lambda) {
  return {blend(x1, x2, lambda), 1, Provenance::kControl, lambda};
}

Image permute_patches(const Image& img, std::size_t grid, const std::vector<std::size_t>& perm) {
  if (grid == 0 || img.height % grid != 0 || img.width % grid != 0) {
    throw ConfigError("patch_shuffle: " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                      " image is not divisible into a " + std::to_string(grid) + "x" + std::to_string(grid) + " grid");
  }
  if (perm.size() != grid * grid) throw ConfigError("patch_shuffle: permutation has wrong length");
  const std::size_t ph = img.height / grid, pw = img.width / grid;
  Image out(img.channels, img.height, img.width);
  for (std::size_t dst = 0; dst < perm.size(); ++dst) {
    const std::size_t src = perm[dst];
    const std::size_t sy = (src / grid) * ph, sx = (src % grid) * pw;
    const std::size_t dy = (dst / grid) * ph, dx = (dst % grid) * pw;
    for (std::size_t c = 0; c < img.channels; ++c) {
      for (std::size_t y = 0; y < ph; ++y) {
        for (std::size_t x = 0; x < pw; ++x) out.at(c, dy + y, dx + x) = img.at(c, sy + y, sx + x);
      }
    }
  }
  return out;
}

LabeledSample patch_shuffle(const Image& img, int label, std::size_t grid, Rng& rng) {
  if (grid == 0) throw ConfigError("patch_shuffle: grid must be positive");
  std::vector<std::size_t> perm(grid * grid);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(perm));
  return {permute_patches(img, grid, perm), label, Provenance::kControl};
}

std::vector<LabeledSample> compose_batch(const std::vector<const Image*>& reals, const std::vector<const Image*>& fakes,
                                         const MixupConfig& cfg, std::size_t batch, Rng& rng) {
  cfg.validate();
  if (reals.empty() || fakes.empty()) throw ConfigError("compose_batch: empty real or fake pool");
  if (batch == 0) throw ConfigError("compose_batch: batch must be positive");
  const std::size_t n_real = batch / 2;
  const std::size_t n_fake = batch - n_real;
  const std::size_t n_mix =
      cfg.mode == MixMode::kOff
          ? 0
          : static_cast<std::size_t>(std::llround(cfg.mix_fraction * static_cast<double>(n_fake)));

  std::vector<LabeledSample> out;
  out.reserve(batch);
  for (std::size_t i = 0; i < n_real; ++i) {
    out.push_back({*reals[i % reals.size()], 0, Provenance::kNatural});
  }

  std::vector<bool> augmented(n_fake, false);
  if (n_mix > 0) {
    std::vector<std::size_t> slots(n_fake);
    std::iota(slots.begin(), slots.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(slots));
    for (std::size_t k = 0; k < n_mix; ++k) augmented[slots[k]] = true;
  }
  for (std::size_t j = 0; j < n_fake; ++j) {
    const Image& fake = *fakes[j % fakes.size()];
    if (!augmented[j]) {
      out.push_back({fake, 1, Provenance::kSynthetic});
      continue;
    }
    switch (cfg.mode) {
      case MixMode::kRealFake: {
        const Image& partner = *reals[rng.below(reals.size())];
        out.push_back(mixup(partner, fake, sample_lambda(cfg.alpha, rng)));
        break;
      }
      case MixMode::kRealRealControl: {
        const Image& x1 = *reals[rng.below(reals.size())];
        const Image& x2 = *reals[rng.below(reals.size())];
        out.push_back(real_real_mixup(x1, x2, sample_lambda(cfg.alpha, rng)));
        break;
      }
      case MixMode::kPatchShuffleControl:
        out.push_back(patch_shuffle(fake, 1, 8, rng));
        break;
      case MixMode::kOff:
        break;
    }
  }
  return out;
}

}  // namespace himix::augment
