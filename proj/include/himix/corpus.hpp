#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "himix/image.hpp"

namespace himix::corpus {

/// Artifact family of a generated image. Reals carry kNone.
///   A: half-resolution real upsampled 2x by pixel duplication
///   B: real with 8x8 block-DCT coefficients quantized
///   C: real plus a faint periodic grid
enum class Family { kNone, kA, kB, kC };

std::string to_string(Family f);
Family parse_family(std::string_view s);

inline constexpr std::array<double, 4> kBlurSigmas{0.5, 1.0, 2.0, 4.0};

struct CorpusConfig {
  std::uint64_t seed = 0;
  std::size_t image_size = 64;
  std::size_t train_real = 2000;
  std::size_t train_fake = 2000;
  Family train_family = Family::kA;
  std::size_t eval_per_family = 500;
  double noise_std = 0.4;
  double gradient_amplitude = 0.1;
  double dct_step = 0.1;
  std::size_t grid_period = 4;
  double grid_amplitude = 0.03;
};

/// Blur class and luminance-gradient angle drawn from an entry seed.
struct RealParams {
  std::size_t sigma_index = 0;
  double angle = 0.0;
  double sigma() const { return kBlurSigmas[sigma_index]; }
};
RealParams real_params_from_seed(std::uint64_t seed);

/// Blurred Gaussian white noise around 0.5 plus a linear luminance ramp, clamped to [0, 1].
Image gen_real(std::uint64_t seed, double blur_sigma, double gradient_angle, std::size_t size, const CorpusConfig& cfg);
Image gen_real(std::uint64_t seed, const CorpusConfig& cfg);

/// Unclamped/unpostprocessed family transforms, exposed for tests.
Image upsample_nearest2x(const Image& img);
Image add_grid(const Image& img, std::size_t period, double amplitude);

Image gen_fake(Family family, std::uint64_t seed, const CorpusConfig& cfg);

enum class Label : int { kReal = 0, kFake = 1 };

struct ManifestEntry {
  std::string path;  // relative to the corpus directory
  Label label = Label::kReal;
  Family family = Family::kNone;
  std::uint64_t seed = 0;
  std::string split;
  double sigma = 0.0;
};

struct CorpusManifest {
  std::vector<ManifestEntry> entries;
  std::map<std::string, std::vector<std::size_t>> splits;

  void rebuild_splits();
};

inline constexpr std::string_view kManifestName = "manifest.jsonl";

/// One JSON object per line: path, label, family, seed, split, sigma.
std::string manifest_to_jsonl(const CorpusManifest& m);
CorpusManifest parse_manifest(std::string_view jsonl);

/// Entries of the corpus without generating pixels.
CorpusManifest plan_corpus(const CorpusConfig& cfg);
Image generate_entry(const ManifestEntry& e, const CorpusConfig& cfg);

/// Writes all images plus the manifest under `out_dir` (created if needed).
CorpusManifest build_corpus(const CorpusConfig& cfg, const std::filesystem::path& out_dir, unsigned threads = 0);

CorpusManifest load_manifest(const std::filesystem::path& corpus_dir);

/// Entry indices of a split. "eval" expands to every "eval-*" split in name order.
std::vector<std::size_t> resolve_split(const CorpusManifest& m, const std::string& name);
/// Sub-splits of `name`: {"eval-A", ...} for "eval", otherwise {name}.
std::vector<std::string> split_groups(const CorpusManifest& m, const std::string& name);

/// SHA-256 over the manifest bytes followed by every image file in manifest order.
std::string corpus_hash(const std::filesystem::path& corpus_dir, const CorpusManifest& m);

/// Verifies label/family consistency and that every image exists and decodes.
void validate_corpus(const std::filesystem::path& corpus_dir, const CorpusManifest& m);

}  // namespace himix::corpus
