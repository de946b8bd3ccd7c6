#include "himix/evaluate.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "himix/imageops.hpp"
#include "himix/parallel.hpp"
#include "himix/rng.hpp"

namespace himix::eval {

std::string to_string(PerturbKind k) {
  switch (k) {
    case PerturbKind::kNone:
      return "none";
    case PerturbKind::kBlur:
      return "blur";
    case PerturbKind::kCompress:
      return "compress";
  }
  return "?";
}

Image perturb(const Image& img, const Perturbation& p) {
  switch (p.kind) {
    case PerturbKind::kNone:
      return img;
    case PerturbKind::kBlur:
      if (!(p.level >= 0.0) || !std::isfinite(p.level)) throw ConfigError("blur sigma must be finite and >= 0");
      return gaussian_blur(img, p.level);
    case PerturbKind::kCompress: {
      const double q = p.level;
      if (q != std::floor(q) || q < 1 || q > 10) throw ConfigError("compression quality must be an integer in 1..10");
      Image out = block_quantize(img, kCompressStepScale * (11.0 - q));
      out.clamp01();
      return out;
    }
  }
  throw ConfigError("unknown perturbation");
}

std::vector<metrics::ScoreRecord> score_split(const Model& model, const std::filesystem::path& corpus_dir,
                                              const corpus::CorpusManifest& manifest, const std::string& split,
                                              const Perturbation& p, unsigned threads) {
  std::vector<metrics::ScoreRecord> out;
  for (const std::string& group : corpus::split_groups(manifest, split)) {
    const auto idx = corpus::resolve_split(manifest, group);
    const std::size_t base = out.size();
    out.resize(base + idx.size());
    parallel_for(idx.size(), threads, [&](std::size_t i) {
      const auto& e = manifest.entries[idx[i]];
      const Image img = perturb(read_image(corpus_dir / e.path), p);
      auto& r = out[base + i];
      r.id = e.path;
      r.label = static_cast<int>(e.label);
      r.score = model.predict(img);
      r.family = corpus::to_string(e.family);
      r.group = group;
    });
  }
  if (out.empty()) throw ConfigError("split '" + split + "' has no entries");
  return out;
}

std::vector<RobustnessRow> robustness_sweep(const Model& model, const std::filesystem::path& corpus_dir,
                                            const corpus::CorpusManifest& manifest, const std::string& split,
                                            const std::vector<Perturbation>& grid, unsigned threads) {
  std::vector<RobustnessRow> rows;
  for (const Perturbation& p : grid) {
    const auto records = score_split(model, corpus_dir, manifest, split, p, threads);
    const auto rep = metrics::build_report(records);
    rows.push_back({p, rep.mean_acc, rep.mean_ap.value_or(0.0)});
  }
  return rows;
}

std::string robustness_csv(const std::vector<RobustnessRow>& rows) {
  std::ostringstream out;
  out << "kind,level,acc,ap\n";
  for (const auto& r : rows) {
    out << to_string(r.perturbation.kind) << ',' << metrics::fmt(r.perturbation.level) << ',' << metrics::fmt(r.acc)
        << ',' << metrics::fmt(r.ap) << '\n';
  }
  return out.str();
}

namespace {

constexpr std::size_t kPowerIterations = 5000;
constexpr double kPowerTolerance = 1e-14;

std::vector<double> column_means(const std::vector<std::vector<double>>& data) {
  std::vector<double> mean(data.front().size(), 0.0);
  for (const auto& row : data) {
    for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += row[j];
  }
  for (double& m : mean) m /= static_cast<double>(data.size());
  return mean;
}

}  // namespace

std::vector<std::vector<double>> principal_axes(const std::vector<std::vector<double>>& data, std::size_t k,
                                                std::uint64_t seed) {
  if (data.empty()) throw ConfigError("PCA: no samples");
  const std::size_t d = data.front().size();
  if (k == 0 || k > d) throw ConfigError("PCA: k must lie in 1.." + std::to_string(d));
  for (const auto& row : data) {
    if (row.size() != d) throw ShapeError("PCA: ragged feature rows");
  }
  const auto mean = column_means(data);
  std::vector<double> cov(d * d, 0.0);
  for (const auto& row : data) {
    for (std::size_t a = 0; a < d; ++a) {
      const double xa = row[a] - mean[a];
      for (std::size_t b = 0; b < d; ++b) cov[a * d + b] += xa * (row[b] - mean[b]);
    }
  }
  const double denom = data.size() > 1 ? static_cast<double>(data.size() - 1) : 1.0;
  for (double& c : cov) c /= denom;

  Rng rng(seed);
  std::vector<std::vector<double>> axes;
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<double> v(d), next(d);
    for (double& x : v) x = rng.normal();
    double lambda = 0.0;
    for (std::size_t it = 0; it < kPowerIterations; ++it) {
      for (std::size_t a = 0; a < d; ++a) {
        double s = 0.0;
        for (std::size_t b = 0; b < d; ++b) s += cov[a * d + b] * v[b];
        next[a] = s;
      }
      double norm = 0.0;
      for (double x : next) norm += x * x;
      norm = std::sqrt(norm);
      if (norm == 0.0) break;  // remaining spectrum is zero; keep the random direction
      double delta = 0.0;
      for (std::size_t a = 0; a < d; ++a) {
        next[a] /= norm;
        delta = std::max(delta, std::abs(std::abs(next[a]) - std::abs(v[a])));
      }
      v.swap(next);
      lambda = norm;
      if (delta < kPowerTolerance) break;
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    for (double& x : v) x /= std::sqrt(norm);
    const auto first = std::find_if(v.begin(), v.end(), [](double x) { return std::abs(x) > 1e-12; });
    if (first != v.end() && *first < 0) {
      for (double& x : v) x = -x;
    }
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = 0; b < d; ++b) cov[a * d + b] -= lambda * v[a] * v[b];
    }
    axes.push_back(std::move(v));
  }
  return axes;
}

std::vector<std::vector<double>> pca_project(const std::vector<std::vector<double>>& data, std::size_t k,
                                             std::uint64_t seed) {
  const auto axes = principal_axes(data, k, seed);
  const auto mean = column_means(data);
  std::vector<std::vector<double>> out;
  out.reserve(data.size());
  for (const auto& row : data) {
    std::vector<double> p(k, 0.0);
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t j = 0; j < row.size(); ++j) p[c] += (row[j] - mean[j]) * axes[c][j];
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::string export_features_pca(const Model& model, const std::filesystem::path& corpus_dir,
                                const corpus::CorpusManifest& manifest, const std::string& split, std::size_t k,
                                std::uint64_t seed, unsigned threads) {
  const auto idx = corpus::resolve_split(manifest, split);
  if (idx.empty()) throw ConfigError("split '" + split + "' has no entries");
  std::vector<std::vector<double>> feats(idx.size());
  parallel_for(idx.size(), threads, [&](std::size_t i) {
    feats[i] = model.features(read_image(corpus_dir / manifest.entries[idx[i]].path));
  });
  const auto proj = pca_project(feats, k, seed);
  std::ostringstream out;
  out << "id,label,family";
  for (std::size_t c = 1; c <= k; ++c) out << ",pc" << c;
  out << '\n';
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto& e = manifest.entries[idx[i]];
    out << e.path << ',' << static_cast<int>(e.label) << ',' << corpus::to_string(e.family);
    for (double v : proj[i]) out << ',' << metrics::fmt(v);
    out << '\n';
  }
  return out.str();
}

BenchResult bench_forward(const Model& model, std::size_t n, std::size_t warmup, std::uint64_t seed) {
  if (n == 0) throw ConfigError("bench: n must be >= 1");
  corpus::CorpusConfig cc;
  cc.image_size = model.config().encoder.image_size;
  std::vector<Image> images;
  for (std::size_t i = 0; i < std::max<std::size_t>(1, std::min<std::size_t>(n, 16)); ++i) {
    images.push_back(corpus::gen_real(derive_seed(derive_seed(seed, "bench"), i), cc));
  }
  double sink = 0.0;
  for (std::size_t i = 0; i < warmup; ++i) sink += model.predict(images[i % images.size()]);
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < n; ++i) sink += model.predict(images[i % images.size()]);
  const auto t1 = std::chrono::steady_clock::now();
  if (!std::isfinite(sink)) throw NumericError("bench: non-finite score");

  BenchResult r;
  r.params_total = model.params().count_values(false);
  r.params_trainable = model.params().count_values(true);
  r.images = n;
  r.seconds = std::chrono::duration<double>(t1 - t0).count();
  r.images_per_second = static_cast<double>(n) / std::max(r.seconds, 1e-12);
  return r;
}

}  // namespace himix::eval
