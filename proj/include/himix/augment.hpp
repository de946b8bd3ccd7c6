#pragma once

#include <cstddef>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "himix/image.hpp"
#include "himix/rng.hpp"

/// Mixup-driven distributional augmentation: real/fake transitional samples
/// labelled fake, plus the real-real and patch-shuffle control augmentations.
namespace himix::augment {

enum class MixMode { kRealFake, kRealRealControl, kPatchShuffleControl, kOff };
enum class Provenance { kNatural, kSynthetic, kMixed, kControl };

std::string to_string(MixMode m);
MixMode parse_mix_mode(std::string_view s);
std::string to_string(Provenance p);

struct MixupConfig {
  double alpha = 0.1;
  /// Share of label-1 slots per batch filled by augmented samples.
  double mix_fraction = 0.5;
  MixMode mode = MixMode::kRealFake;

  void validate() const;
};

struct LabeledSample {
  Image image;
  int label = 0;
  Provenance provenance = Provenance::kNatural;
  double lambda = std::numeric_limits<double>::quiet_NaN();
};

/// Beta(alpha, alpha) draw on the open interval (0, 1). Draws within 2^-53 of
/// either endpoint are redrawn, symmetrically, so the mean stays at 0.5.
double sample_lambda(double alpha, Rng& rng);

/// lambda * fake + (1 - lambda) * real, labelled fake.
LabeledSample mixup(const Image& real, const Image& fake, double lambda);
/// lambda * x2 + (1 - lambda) * x1 of two reals, labelled fake (control protocol).
LabeledSample real_real_mixup(const Image& x1, const Image& x2, double lambda);

/// Reassembles the grid x grid patches of `img` so that output patch i is input patch perm[i].
Image permute_patches(const Image& img, std::size_t grid, const std::vector<std::size_t>& perm);
/// Uniformly random patch permutation; the label of the source is kept.
LabeledSample patch_shuffle(const Image& img, int label, std::size_t grid, Rng& rng);

/// Class-balanced batch: floor(batch/2) reals, the rest label 1. A
/// mix_fraction share of the label-1 slots holds augmented samples with a
/// fresh lambda each; the remaining label-1 slots hold unmodified fakes.
/// Slot i of a class draws pool element i modulo the pool size.
std::vector<LabeledSample> compose_batch(const std::vector<const Image*>& reals, const std::vector<const Image*>& fakes,
                                         const MixupConfig& cfg, std::size_t batch, Rng& rng);

}  // namespace himix::augment
