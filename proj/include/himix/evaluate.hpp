#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "himix/corpus.hpp"
#include "himix/metrics.hpp"
#include "himix/model.hpp"

namespace himix::eval {

enum class PerturbKind { kNone, kBlur, kCompress };

struct Perturbation {
  PerturbKind kind = PerturbKind::kNone;
  double level = 0.0;  // blur sigma, or compression quality 1..10
};

std::string to_string(PerturbKind k);

/// Quantization step per quality unit: compress(q) quantizes DCT blocks with
/// step kCompressStepScale * (11 - q).
inline constexpr double kCompressStepScale = 5e-4;

/// Gaussian blur (sigma >= 0) or block-DCT compression proxy (q in 1..10, clamped to [0, 1]).
Image perturb(const Image& img, const Perturbation& p);

/// Scores the entries of `split` in manifest order; each record's group is its sub-split.
std::vector<metrics::ScoreRecord> score_split(const Model& model, const std::filesystem::path& corpus_dir,
                                              const corpus::CorpusManifest& manifest, const std::string& split,
                                              const Perturbation& p = {}, unsigned threads = 0);

struct RobustnessRow {
  Perturbation perturbation;
  double acc = 0.0;
  double ap = 0.0;
};

/// One row per grid entry with the group-mean Acc and AP of the perturbed split.
std::vector<RobustnessRow> robustness_sweep(const Model& model, const std::filesystem::path& corpus_dir,
                                            const corpus::CorpusManifest& manifest, const std::string& split,
                                            const std::vector<Perturbation>& grid, unsigned threads = 0);
std::string robustness_csv(const std::vector<RobustnessRow>& rows);

/// Principal axes by power iteration with deflation. Rows of the result are
/// unit eigenvectors in decreasing eigenvalue order, each with its first
/// nonzero coordinate positive.
std::vector<std::vector<double>> principal_axes(const std::vector<std::vector<double>>& data, std::size_t k,
                                                std::uint64_t seed);

/// Centers `data` and projects it onto `k` principal axes.
std::vector<std::vector<double>> pca_project(const std::vector<std::vector<double>>& data, std::size_t k,
                                             std::uint64_t seed);

/// CSV id,label,family,pc1..pck of projected fused features.
std::string export_features_pca(const Model& model, const std::filesystem::path& corpus_dir,
                                const corpus::CorpusManifest& manifest, const std::string& split, std::size_t k,
                                std::uint64_t seed, unsigned threads = 0);

struct BenchResult {
  std::size_t params_total = 0;
  std::size_t params_trainable = 0;
  std::size_t images = 0;
  double seconds = 0.0;
  double images_per_second = 0.0;
};

/// Single-threaded forward throughput over `n` generated images after `warmup` passes.
BenchResult bench_forward(const Model& model, std::size_t n, std::size_t warmup, std::uint64_t seed);

}  // namespace himix::eval
