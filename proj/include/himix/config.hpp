#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "himix/corpus.hpp"
#include "himix/evaluate.hpp"
#include "himix/model.hpp"
#include "himix/trainer.hpp"

namespace himix {

/// Every tunable of a run. Flat `key = value` text form; see config_keys().
struct RunConfig {
  std::uint64_t seed = 0;
  unsigned threads = 0;

  corpus::CorpusConfig corpus;
  ModelConfig model;
  augment::MixupConfig mixup;

  double lr = 1e-3;
  std::size_t batch = 32;
  std::size_t epochs = 10;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double data_fraction = 1.0;

  bool pretext = true;
  std::size_t pretext_epochs = 4;
  std::size_t pretext_batch = 32;
  double pretext_lr = 3e-4;

  bool mda = true;

  std::string eval_split = "eval";
  double calibrate_fpr = 0.01;
  std::string calibrate_on = "eval-A";
  std::size_t pca_k = 2;

  std::string robustness_split = "eval";
  std::vector<double> robustness_blur{0, 1, 2, 3};
  std::vector<double> robustness_compress{10, 7, 4, 1};

  std::size_t bench_images = 200;
  std::size_t bench_warmup = 20;

  std::vector<double> ablate_alphas{0.05, 0.1, 0.5, 1, 2};
  std::vector<double> ablate_fractions{0.01, 0.04, 0.2, 0.5, 1.0};
  std::size_t ablate_epochs = 0;  // 0: use `epochs`

  /// Checks cross-key constraints; throws ConfigError.
  void validate() const;

  // Sub-seeds. Every random stream of a run derives from `seed`.
  std::uint64_t corpus_seed() const;
  std::uint64_t init_seed() const;
  std::uint64_t pretext_seed() const;
  std::uint64_t train_seed() const;
  std::uint64_t eval_seed() const;

  corpus::CorpusConfig corpus_config() const;
  train::TrainConfig train_config() const;
  train::PretextConfig pretext_config() const;
  std::vector<eval::Perturbation> robustness_grid() const;
};

struct ConfigKey {
  std::string name;
  std::string doc;
};
/// Registered keys in serialization order.
std::vector<ConfigKey> config_keys();

/// Applies `key = value` lines on top of `base`. Unknown or repeated keys and
/// malformed values throw ConfigError naming the key and line.
RunConfig parse_config(std::string_view text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path);
/// Sets one key; throws ConfigError on unknown keys or bad values.
void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value);
std::string get_config_value(const RunConfig& cfg, std::string_view key);

/// Every key except the execution-only `threads`, with its documentation and
/// defaults applied. parse(serialize(c)) == c up to `threads`.
std::string serialize_config(const RunConfig& cfg);
std::string config_hash(const RunConfig& cfg);

inline constexpr std::string_view kResolvedConfigName = "resolved.cfg";

}  // namespace himix
