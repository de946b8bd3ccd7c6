#include "himix/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <nlohmann/json.hpp>
#include <numbers>
#include <sstream>

#include "himix/hash.hpp"
#include "himix/imageops.hpp"
#include "himix/parallel.hpp"
#include "himix/rng.hpp"

namespace himix::corpus {
namespace fs = std::filesystem;

std::string to_string(Family f) {
  switch (f) {
    case Family::kNone:
      return "none";
    case Family::kA:
      return "A";
    case Family::kB:
      return "B";
    case Family::kC:
      return "C";
  }
  return "none";
}

Family parse_family(std::string_view s) {
  if (s == "none") return Family::kNone;
  if (s == "A") return Family::kA;
  if (s == "B") return Family::kB;
  if (s == "C") return Family::kC;
  throw ConfigError("unknown artifact family '" + std::string(s) + "'");
}

RealParams real_params_from_seed(std::uint64_t seed) {
  Rng rng(derive_seed(seed, "real-params"));
  RealParams p;
  p.sigma_index = static_cast<std::size_t>(rng.below(kBlurSigmas.size()));
  p.angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  return p;
}

Image gen_real(std::uint64_t seed, double blur_sigma, double gradient_angle, std::size_t size,
               const CorpusConfig& cfg) {
  Rng rng(seed);
  Image noise(3, size, size);
  for (float& p : noise.pixels) p = static_cast<float>(cfg.noise_std * rng.normal());
  Image img = gaussian_blur(noise, blur_sigma);
  const double centre = 0.5 * static_cast<double>(size - 1);
  const double span = std::max<double>(1.0, static_cast<double>(size - 1));
  const double cs = std::cos(gradient_angle), sn = std::sin(gradient_angle);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const double t = ((static_cast<double>(x) - centre) * cs + (static_cast<double>(y) - centre) * sn) / span;
        img.at(c, y, x) = static_cast<float>(0.5 + img.at(c, y, x) + cfg.gradient_amplitude * t);
      }
    }
  }
  img.clamp01();
  return img;
}

Image gen_real(std::uint64_t seed, const CorpusConfig& cfg) {
  const RealParams p = real_params_from_seed(seed);
  return gen_real(seed, p.sigma(), p.angle, cfg.image_size, cfg);
}

Image upsample_nearest2x(const Image& img) {
  Image out(img.channels, img.height * 2, img.width * 2);
  for (std::size_t c = 0; c < img.channels; ++c) {
    for (std::size_t y = 0; y < out.height; ++y) {
      for (std::size_t x = 0; x < out.width; ++x) out.at(c, y, x) = img.at(c, y / 2, x / 2);
    }
  }
  return out;
}

Image add_grid(const Image& img, std::size_t period, double amplitude) {
  if (period == 0) throw ConfigError("grid period must be positive");
  Image out = img;
  for (std::size_t c = 0; c < img.channels; ++c) {
    for (std::size_t y = 0; y < img.height; ++y) {
      for (std::size_t x = 0; x < img.width; ++x) {
        if (x % period == 0 || y % period == 0) out.at(c, y, x) += static_cast<float>(amplitude);
      }
    }
  }
  return out;
}

Image gen_fake(Family family, std::uint64_t seed, const CorpusConfig& cfg) {
  const RealParams p = real_params_from_seed(seed);
  switch (family) {
    case Family::kA: {
      if (cfg.image_size % 2 != 0) throw ConfigError("family A needs an even image size");
      return upsample_nearest2x(gen_real(seed, p.sigma(), p.angle, cfg.image_size / 2, cfg));
    }
    case Family::kB: {
      Image img = block_quantize(gen_real(seed, p.sigma(), p.angle, cfg.image_size, cfg), cfg.dct_step);
      img.clamp01();
      return img;
    }
    case Family::kC: {
      Image img =
          add_grid(gen_real(seed, p.sigma(), p.angle, cfg.image_size, cfg), cfg.grid_period, cfg.grid_amplitude);
      img.clamp01();
      return img;
    }
    case Family::kNone:
      break;
  }
  throw ConfigError("gen_fake: unknown family '" + to_string(family) + "'");
}

void CorpusManifest::rebuild_splits() {
  splits.clear();
  for (std::size_t i = 0; i < entries.size(); ++i) splits[entries[i].split].push_back(i);
}

std::string manifest_to_jsonl(const CorpusManifest& m) {
  std::string out;
  for (const auto& e : m.entries) {
    nlohmann::ordered_json j;
    j["path"] = e.path;
    j["label"] = e.label == Label::kReal ? "real" : "fake";
    j["family"] = to_string(e.family);
    j["seed"] = e.seed;
    j["split"] = e.split;
    j["sigma"] = e.sigma;
    out += j.dump();
    out += '\n';
  }
  return out;
}

CorpusManifest parse_manifest(std::string_view jsonl) {
  CorpusManifest m;
  std::istringstream in{std::string(jsonl)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestEntry e;
      e.path = j.at("path").get<std::string>();
      const auto label = j.at("label").get<std::string>();
      if (label != "real" && label != "fake") throw ConfigError("label must be real or fake");
      e.label = label == "real" ? Label::kReal : Label::kFake;
      e.family = parse_family(j.at("family").get<std::string>());
      e.seed = j.at("seed").get<std::uint64_t>();
      e.split = j.value("split", std::string("all"));
      e.sigma = j.value("sigma", 0.0);
      m.entries.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw ConfigError("manifest line " + std::to_string(lineno) + ": " + ex.what());
    } catch (const ConfigError& ex) {
      throw ConfigError("manifest line " + std::to_string(lineno) + ": " + ex.what());
    }
  }
  m.rebuild_splits();
  return m;
}

namespace {

std::string entry_path(const std::string& split, const char* role, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%05zu.hxt", role, i);
  return split + "/" + buf;
}

// Distinct seed streams per (split, class) so fakes never share a seed with reals.
enum RoleCode : std::uint64_t { kTrainReal = 1, kTrainFake = 2, kEvalReal = 10, kEvalFake = 20 };

}  // namespace

CorpusManifest plan_corpus(const CorpusConfig& cfg) {
  if (cfg.image_size == 0 || cfg.image_size % 8 != 0) {
    throw ConfigError("image_size must be a positive multiple of 8");
  }
  if (cfg.train_family == Family::kNone) throw ConfigError("train family must be A, B or C");
  CorpusManifest m;
  auto add = [&](const std::string& split, Label label, Family fam, std::uint64_t role, std::size_t i) {
    ManifestEntry e;
    e.label = label;
    e.family = fam;
    e.seed = derive_seed(cfg.seed, role, i);
    e.split = split;
    e.sigma = real_params_from_seed(e.seed).sigma();
    e.path = entry_path(split, label == Label::kReal ? "real" : "fake", i);
    m.entries.push_back(std::move(e));
  };
  for (std::size_t i = 0; i < cfg.train_real; ++i) add("train", Label::kReal, Family::kNone, kTrainReal, i);
  for (std::size_t i = 0; i < cfg.train_fake; ++i) add("train", Label::kFake, cfg.train_family, kTrainFake, i);
  for (Family fam : {Family::kA, Family::kB, Family::kC}) {
    const std::string split = "eval-" + to_string(fam);
    const auto code = static_cast<std::uint64_t>(fam);
    for (std::size_t i = 0; i < cfg.eval_per_family; ++i) add(split, Label::kReal, Family::kNone, kEvalReal + code, i);
    for (std::size_t i = 0; i < cfg.eval_per_family; ++i) add(split, Label::kFake, fam, kEvalFake + code, i);
  }
  m.rebuild_splits();
  return m;
}

Image generate_entry(const ManifestEntry& e, const CorpusConfig& cfg) {
  return e.label == Label::kReal ? gen_real(e.seed, cfg) : gen_fake(e.family, e.seed, cfg);
}

CorpusManifest build_corpus(const CorpusConfig& cfg, const fs::path& out_dir, unsigned threads) {
  CorpusManifest m = plan_corpus(cfg);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  for (const auto& [split, _] : m.splits) {
    fs::create_directories(out_dir / split, ec);
    if (ec) throw IoError("cannot create " + (out_dir / split).string() + ": " + ec.message());
  }
  parallel_for(m.entries.size(), threads,
               [&](std::size_t i) { write_image(out_dir / m.entries[i].path, generate_entry(m.entries[i], cfg)); });
  write_file(out_dir / kManifestName, manifest_to_jsonl(m));
  return m;
}

CorpusManifest load_manifest(const fs::path& corpus_dir) {
  const fs::path p = corpus_dir / kManifestName;
  if (!fs::exists(p)) throw IoError("no manifest at " + p.string());
  return parse_manifest(read_file(p));
}

std::vector<std::string> split_groups(const CorpusManifest& m, const std::string& name) {
  std::vector<std::string> groups;
  if (m.splits.count(name)) {
    groups.push_back(name);
  } else if (name == "eval") {
    for (const auto& [split, _] : m.splits) {
      if (split.rfind("eval-", 0) == 0) groups.push_back(split);
    }
  }
  if (groups.empty()) throw ConfigError("unknown split '" + name + "'");
  return groups;
}

std::vector<std::size_t> resolve_split(const CorpusManifest& m, const std::string& name) {
  std::vector<std::size_t> out;
  for (const auto& g : split_groups(m, name)) {
    const auto& idx = m.splits.at(g);
    out.insert(out.end(), idx.begin(), idx.end());
  }
  return out;
}

std::string corpus_hash(const fs::path& corpus_dir, const CorpusManifest& m) {
  Sha256 h;
  h.update(manifest_to_jsonl(m));
  for (const auto& e : m.entries) h.update(read_file(corpus_dir / e.path));
  return h.hex_digest();
}

void validate_corpus(const fs::path& corpus_dir, const CorpusManifest& m) {
  for (const auto& e : m.entries) {
    if ((e.family == Family::kNone) != (e.label == Label::kReal)) {
      throw ConfigError("entry " + e.path + ": family must be none exactly for real images");
    }
    const Image img = read_image(corpus_dir / e.path);
    if (encode_hxt1(img) != read_file(corpus_dir / e.path)) throw ImageFormatError("round trip mismatch: " + e.path);
    for (float p : img.pixels) {
      if (p < 0.0f || p > 1.0f) throw ConfigError("entry " + e.path + ": pixel outside [0,1]");
    }
  }
}

}  // namespace himix::corpus
