#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <numeric>
#include <set>

#include "himix/augment.hpp"
#include "oracles.hpp"

using namespace himix;
using namespace himix::augment;

namespace {

Image random_image(std::uint64_t seed, std::size_t size = 16) {
  Rng rng(seed);
  Image img(3, size, size);
  for (float& p : img.pixels) p = static_cast<float>(rng.uniform());
  return img;
}

std::vector<double> draws(double alpha, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> out(n);
  for (double& v : out) v = sample_lambda(alpha, rng);
  return out;
}

std::map<Provenance, std::size_t> provenance_counts(const std::vector<LabeledSample>& batch) {
  std::map<Provenance, std::size_t> counts;
  for (const auto& s : batch) ++counts[s.provenance];
  return counts;
}

struct Pools {
  std::vector<Image> real_images, fake_images;
  std::vector<const Image*> reals, fakes;
  explicit Pools(std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      real_images.push_back(random_image(100 + i));
      fake_images.push_back(random_image(900 + i));
    }
    for (std::size_t i = 0; i < n; ++i) {
      reals.push_back(&real_images[i]);
      fakes.push_back(&fake_images[i]);
    }
  }
};

}  // namespace

TEST(SampleLambda, SymmetricMean) {
  for (double alpha : {0.05, 0.1, 1.0, 2.0}) {
    const auto xs = draws(alpha, 100000, 11);
    const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
    EXPECT_NEAR(mean, 0.5, 0.01) << "alpha " << alpha;
    for (double x : xs) {
      ASSERT_GT(x, 0.0);
      ASSERT_LT(x, 1.0);
    }
  }
}

TEST(SampleLambda, UniformAtAlphaOne) {
  const auto xs = draws(1.0, 100000, 12);
  EXPECT_LT(oracle::ks_uniform(xs), oracle::ks_critical_001(xs.size()));
}

TEST(SampleLambda, TailMassMatchesQuadratureOracle) {
  const double alpha = 0.1;
  const double expected = 2.0 * oracle::incomplete_beta(0.1, alpha, alpha);
  const auto xs = draws(alpha, 100000, 13);
  const double observed =
      static_cast<double>(std::count_if(xs.begin(), xs.end(), [](double x) { return x < 0.1 || x > 0.9; })) / xs.size();
  EXPECT_NEAR(observed, expected, 0.02);
}

TEST(SampleLambda, RejectsNonPositiveAlpha) {
  Rng rng(1);
  EXPECT_THROW(sample_lambda(0.0, rng), ConfigError);
  EXPECT_THROW(sample_lambda(-1.0, rng), ConfigError);
}

TEST(Mixup, EndpointsReproduceInputs) {
  const Image real = random_image(1), fake = random_image(2);
  EXPECT_TRUE(mixup(real, fake, 0.0).image == real);
  EXPECT_TRUE(mixup(real, fake, 1.0).image == fake);
  const auto s = mixup(real, fake, 0.3);
  EXPECT_EQ(s.label, 1);
  EXPECT_EQ(s.provenance, Provenance::kMixed);
  EXPECT_EQ(s.lambda, 0.3);
}

TEST(Mixup, ConstantImagesInterpolate) {
  const auto s = mixup(Image(3, 4, 4, 0.0f), Image(3, 4, 4, 1.0f), 0.5);
  for (float p : s.image.pixels) EXPECT_EQ(p, 0.5f);
}

TEST(Mixup, ConvexCombination) {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    const Image a = random_image(10 + t), b = random_image(500 + t);
    const double lambda = sample_lambda(0.1, rng);
    const Image m = mixup(a, b, lambda).image;
    for (std::size_t i = 0; i < m.pixels.size(); ++i) {
      ASSERT_GE(m.pixels[i], std::min(a.pixels[i], b.pixels[i]));
      ASSERT_LE(m.pixels[i], std::max(a.pixels[i], b.pixels[i]));
    }
  }
}

TEST(Mixup, ShapeMismatchThrows) {
  EXPECT_THROW(mixup(Image(3, 4, 4), Image(3, 8, 8), 0.5), ShapeError);
  EXPECT_THROW(real_real_mixup(Image(3, 4, 4), Image(1, 4, 4), 0.5), ShapeError);
}

TEST(RealRealMixup, ControlProtocol) {
  const Image x1 = random_image(4), x2 = random_image(5);
  EXPECT_TRUE(real_real_mixup(x1, x2, 0.0).image == x1);
  EXPECT_TRUE(real_real_mixup(x1, x2, 1.0).image == x2);
  for (double lambda : {0.0, 0.2, 0.7, 1.0}) {
    const auto s = real_real_mixup(x1, x1, lambda);
    EXPECT_EQ(s.label, 1);
    EXPECT_EQ(s.provenance, Provenance::kControl);
    EXPECT_TRUE(s.image == x1);
  }
}

TEST(PatchShuffle, IdentityPermutationKeepsImage) {
  const Image img = random_image(6, 64);
  std::vector<std::size_t> perm(64);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  EXPECT_TRUE(permute_patches(img, 8, perm) == img);
}

TEST(PatchShuffle, PreservesPatchMultisetAndLabel) {
  const Image img = random_image(7, 64);
  Rng rng(8);
  const auto s = patch_shuffle(img, 0, 8, rng);
  EXPECT_EQ(s.label, 0);
  EXPECT_EQ(s.provenance, Provenance::kControl);
  auto patches = [](const Image& im) {
    std::multiset<std::vector<float>> out;
    for (std::size_t py = 0; py < 8; ++py)
      for (std::size_t px = 0; px < 8; ++px) {
        std::vector<float> p;
        for (std::size_t c = 0; c < 3; ++c)
          for (std::size_t y = 0; y < 8; ++y)
            for (std::size_t x = 0; x < 8; ++x) p.push_back(im.at(c, py * 8 + y, px * 8 + x));
        out.insert(p);
      }
    return out;
  };
  EXPECT_EQ(patches(s.image), patches(img));
  EXPECT_FALSE(s.image == img);
}

TEST(PatchShuffle, DeterministicForSeed) {
  const Image img = random_image(9, 64);
  Rng a(77), b(77);
  EXPECT_TRUE(patch_shuffle(img, 1, 8, a).image == patch_shuffle(img, 1, 8, b).image);
}

TEST(PatchShuffle, IndivisibleDimsThrow) {
  Rng rng(1);
  EXPECT_THROW(patch_shuffle(Image(3, 60, 60), 1, 8, rng), ConfigError);
}

TEST(ComposeBatch, DefaultCounts) {
  Pools pools(20);
  Rng rng(1);
  const auto batch = compose_batch(pools.reals, pools.fakes, MixupConfig{}, 32, rng);
  ASSERT_EQ(batch.size(), 32u);
  auto counts = provenance_counts(batch);
  EXPECT_EQ(counts[Provenance::kNatural], 16u);
  EXPECT_EQ(counts[Provenance::kMixed], 8u);
  EXPECT_EQ(counts[Provenance::kSynthetic], 8u);
  for (const auto& s : batch) EXPECT_EQ(s.label, s.provenance == Provenance::kNatural ? 0 : 1);
}

TEST(ComposeBatch, ZeroFractionMatchesNoMda) {
  Pools pools(20);
  MixupConfig zero, off;
  zero.mix_fraction = 0.0;
  off.mode = MixMode::kOff;
  Rng a(2), b(2);
  const auto x = compose_batch(pools.reals, pools.fakes, zero, 32, a);
  const auto y = compose_batch(pools.reals, pools.fakes, off, 32, b);
  ASSERT_EQ(x.size(), y.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_TRUE(x[i].image == y[i].image);
    EXPECT_EQ(x[i].label, y[i].label);
    EXPECT_EQ(x[i].provenance, y[i].provenance);
  }
  EXPECT_EQ(provenance_counts(x)[Provenance::kMixed], 0u);
}

TEST(ComposeBatch, FullFractionMixesEveryFakeSlot) {
  Pools pools(20);
  MixupConfig cfg;
  cfg.mix_fraction = 1.0;
  Rng rng(3);
  const auto batch = compose_batch(pools.reals, pools.fakes, cfg, 32, rng);
  for (const auto& s : batch)
    if (s.label == 1) EXPECT_EQ(s.provenance, Provenance::kMixed);
}

TEST(ComposeBatch, LambdaIsPerSample) {
  Pools pools(20);
  MixupConfig cfg;
  cfg.mix_fraction = 1.0;
  Rng rng(4);
  std::set<double> lambdas;
  for (const auto& s : compose_batch(pools.reals, pools.fakes, cfg, 256, rng))
    if (s.provenance == Provenance::kMixed) lambdas.insert(s.lambda);
  EXPECT_GT(lambdas.size(), 1u);
}

TEST(ComposeBatch, BalancedForAnySize) {
  Pools pools(5);
  Rng rng(5);
  for (std::size_t b = 1; b <= 40; ++b) {
    const auto batch = compose_batch(pools.reals, pools.fakes, MixupConfig{}, b, rng);
    const auto fakes = std::count_if(batch.begin(), batch.end(), [](const auto& s) { return s.label == 1; });
    const auto reals = static_cast<long>(batch.size()) - fakes;
    EXPECT_LE(std::abs(reals - fakes), 1);
  }
}

TEST(ComposeBatch, ControlModes) {
  Pools pools(6);
  MixupConfig cfg;
  cfg.mode = MixMode::kRealRealControl;
  Rng rng(6);
  auto counts = provenance_counts(compose_batch(pools.reals, pools.fakes, cfg, 32, rng));
  EXPECT_EQ(counts[Provenance::kControl], 8u);
  cfg.mode = MixMode::kPatchShuffleControl;
  Pools big(6);
  for (auto& img : big.fake_images) img = random_image(img.pixels.size(), 64);
  for (auto& img : big.real_images) img = random_image(img.pixels.size() + 1, 64);
  const auto batch = compose_batch(big.reals, big.fakes, cfg, 32, rng);
  for (const auto& s : batch)
    if (s.provenance == Provenance::kControl) EXPECT_EQ(s.label, 1);
  EXPECT_EQ(provenance_counts(batch)[Provenance::kControl], 8u);
}

TEST(ComposeBatch, EmptyPoolThrows) {
  Pools pools(2);
  Rng rng(7);
  EXPECT_THROW(compose_batch({}, pools.fakes, MixupConfig{}, 32, rng), ConfigError);
  EXPECT_THROW(compose_batch(pools.reals, {}, MixupConfig{}, 32, rng), ConfigError);
}

TEST(MixupConfig, Validation) {
  MixupConfig cfg;
  cfg.alpha = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.alpha = 0.1;
  cfg.mix_fraction = 1.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_EQ(parse_mix_mode("real-real-control"), MixMode::kRealRealControl);
  EXPECT_THROW(parse_mix_mode("cutmix"), ConfigError);
}
