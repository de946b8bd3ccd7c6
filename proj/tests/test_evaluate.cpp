#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "himix/corpus.hpp"
#include "himix/evaluate.hpp"
#include "himix/imageops.hpp"
#include "small_model.hpp"
#include "temp_dir.hpp"

using namespace himix;
using namespace himix::eval;

namespace {

double max_abs_diff(const Image& a, const Image& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) m = std::max(m, std::fabs(double(a.pixels[i]) - b.pixels[i]));
  return m;
}

corpus::CorpusConfig tiny_corpus() {
  corpus::CorpusConfig cfg = small_corpus_config();
  cfg.seed = 5;
  cfg.train_real = 8;
  cfg.train_fake = 8;
  cfg.eval_per_family = 6;
  return cfg;
}

}  // namespace

TEST(Perturb, BlurIdentityAndConstant) {
  const Image img = corpus::gen_real(1, corpus::CorpusConfig{});
  EXPECT_TRUE(perturb(img, {PerturbKind::kBlur, 0.0}) == img);
  EXPECT_TRUE(perturb(img, {PerturbKind::kNone, 0.0}) == img);
  const Image flat(3, 32, 32, 0.375f);
  for (double s : {0.5, 1.0, 2.0, 3.0}) EXPECT_TRUE(perturb(flat, {PerturbKind::kBlur, s}) == flat) << s;
  EXPECT_THROW(perturb(img, {PerturbKind::kBlur, -1.0}), ConfigError);
}

TEST(Perturb, CompressFinestLevelIsNearIdentity) {
  // Measured maximum over these 60 images: 6.7e-4.
  const corpus::CorpusConfig cfg;
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    for (const Image& img : {corpus::gen_real(s, cfg), corpus::gen_fake(corpus::Family::kA, s, cfg),
                             corpus::gen_fake(corpus::Family::kC, s, cfg)}) {
      worst = std::max(worst, max_abs_diff(perturb(img, {PerturbKind::kCompress, 10}), img));
    }
  }
  EXPECT_LE(worst, 1e-3);
  RecordProperty("max_abs_diff_q10", std::to_string(worst));
}

TEST(Perturb, CompressLevelsAndValidation) {
  const Image img = corpus::gen_real(3, corpus::CorpusConfig{});
  EXPECT_GT(max_abs_diff(perturb(img, {PerturbKind::kCompress, 1}), img),
            max_abs_diff(perturb(img, {PerturbKind::kCompress, 10}), img));
  for (double q : {0.0, 11.0, 2.5}) EXPECT_THROW(perturb(img, {PerturbKind::kCompress, q}), ConfigError) << q;
  for (float p : perturb(img, {PerturbKind::kCompress, 1}).pixels) {
    ASSERT_GE(p, 0.0f);
    ASSERT_LE(p, 1.0f);
  }
}

TEST(Pca, RecoversKnownAxis) {
  Rng rng(1);
  const double angle = 0.6;
  const double c = std::cos(angle), s = std::sin(angle);
  std::vector<std::vector<double>> data;
  for (int i = 0; i < 4000; ++i) {
    const double u = 3.0 * rng.normal(), v = 0.5 * rng.normal();
    data.push_back({c * u - s * v + 1.0, s * u + c * v - 2.0});
  }
  const auto axes = principal_axes(data, 2, 7);
  ASSERT_EQ(axes.size(), 2u);
  const double dot = axes[0][0] * c + axes[0][1] * s;
  EXPECT_LT(std::acos(std::min(1.0, std::fabs(dot))) * 180.0 / std::numbers::pi, 1.0);
  EXPECT_GT(axes[0][0], 0.0);
  EXPECT_NEAR(axes[0][0] * axes[1][0] + axes[0][1] * axes[1][1], 0.0, 1e-9);

  const auto proj = pca_project(data, 2, 7);
  double m1 = 0, m2 = 0, v1 = 0, v2 = 0;
  for (const auto& p : proj) {
    m1 += p[0];
    m2 += p[1];
  }
  m1 /= proj.size();
  m2 /= proj.size();
  for (const auto& p : proj) {
    v1 += (p[0] - m1) * (p[0] - m1);
    v2 += (p[1] - m2) * (p[1] - m2);
  }
  EXPECT_NEAR(m1, 0.0, 1e-9);
  EXPECT_NEAR(m2, 0.0, 1e-9);
  EXPECT_GE(v1, v2);
  EXPECT_THROW(principal_axes(data, 3, 7), ConfigError);
}

TEST(Bench, CensusAndThroughput) {
  const Model model(ModelConfig{}, 1);
  const BenchResult r = bench_forward(model, 5, 1, 3);
  EXPECT_EQ(r.params_total, census(ModelConfig{}).total());
  EXPECT_EQ(r.params_trainable, census(ModelConfig{}).trainable());
  EXPECT_EQ(r.images, 5u);
  EXPECT_GT(r.images_per_second, 0.0);
  EXPECT_TRUE(std::isfinite(r.images_per_second));
}

TEST(Bench, ThroughputStableWhenDoublingImages) {
  // Best of three to damp scheduler noise.
  const Model model(ModelConfig{}, 2);
  auto best = [&](std::size_t n) {
    double b = 0.0;
    for (int i = 0; i < 3; ++i) b = std::max(b, bench_forward(model, n, 2, 4).images_per_second);
    return b;
  };
  const double a = best(10), b = best(20);
  EXPECT_LT(std::fabs(b - a) / a, 0.2) << a << " vs " << b;
}

class EvalOnCorpus : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("himix-eval");
    manifest_ = new corpus::CorpusManifest(corpus::build_corpus(tiny_corpus(), dir_->path(), 2));
    model_ = new Model(small_model_config(), 9);
  }
  static void TearDownTestSuite() {
    delete model_;
    delete manifest_;
    delete dir_;
  }
  static TempDir* dir_;
  static corpus::CorpusManifest* manifest_;
  static Model* model_;
};
TempDir* EvalOnCorpus::dir_ = nullptr;
corpus::CorpusManifest* EvalOnCorpus::manifest_ = nullptr;
Model* EvalOnCorpus::model_ = nullptr;

TEST_F(EvalOnCorpus, ScoresFollowManifestOrderAndAreDeterministic) {
  const auto a = score_split(*model_, dir_->path(), *manifest_, "eval", {}, 1);
  const auto b = score_split(*model_, dir_->path(), *manifest_, "eval", {}, 3);
  ASSERT_EQ(a.size(), corpus::resolve_split(*manifest_, "eval").size());
  EXPECT_EQ(metrics::scores_csv(a), metrics::scores_csv(b));
  std::size_t k = 0;
  for (std::size_t idx : corpus::resolve_split(*manifest_, "eval")) EXPECT_EQ(a[k++].id, manifest_->entries[idx].path);
  for (const auto& r : a) {
    EXPECT_GT(r.score, 0.0);
    EXPECT_LT(r.score, 1.0);
  }
  EXPECT_EQ(metrics::build_report(a).groups.size(), 3u);
}

TEST_F(EvalOnCorpus, RobustnessLevelZeroMatchesPlainEvaluation) {
  const std::vector<Perturbation> grid{
      {PerturbKind::kBlur, 0}, {PerturbKind::kBlur, 2}, {PerturbKind::kCompress, 10}, {PerturbKind::kCompress, 1}};
  const auto rows = robustness_sweep(*model_, dir_->path(), *manifest_, "eval", grid, 2);
  ASSERT_EQ(rows.size(), grid.size());
  const auto plain = metrics::build_report(score_split(*model_, dir_->path(), *manifest_, "eval", {}, 1));
  EXPECT_EQ(rows[0].acc, plain.mean_acc);
  EXPECT_EQ(rows[0].ap, *plain.mean_ap);
  const std::string csv = robustness_csv(rows);
  EXPECT_EQ(csv.rfind("kind,level,acc,ap\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}

TEST_F(EvalOnCorpus, FeatureExportIsDeterministic) {
  const std::string a = export_features_pca(*model_, dir_->path(), *manifest_, "eval", 2, 3, 1);
  const std::string b = export_features_pca(*model_, dir_->path(), *manifest_, "eval", 2, 3, 2);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.rfind("id,label,family,pc1,pc2\n", 0), 0u);
  EXPECT_THROW(export_features_pca(*model_, dir_->path(), *manifest_, "eval", 17, 3, 1), ConfigError);
}
