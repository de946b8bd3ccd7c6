#include "himix/config.hpp"

#include <algorithm>
#include <charconv>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "himix/hash.hpp"

namespace himix {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view want) {
  throw ConfigError("config key '" + std::string(key) + "': cannot parse '" + std::string(value) + "' as " +
                    std::string(want));
}

double parse_double(std::string_view key, std::string_view s) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) bad_value(key, s, "a number");
  return v;
}

std::uint64_t parse_uint(std::string_view key, std::string_view s) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) bad_value(key, s, "a non-negative integer");
  return v;
}

bool parse_bool(std::string_view key, std::string_view s) {
  if (s == "on" || s == "true" || s == "1") return true;
  if (s == "off" || s == "false" || s == "0") return false;
  bad_value(key, s, "on/off");
}

std::vector<std::string_view> split_list(std::string_view s) {
  std::vector<std::string_view> out;
  while (true) {
    const auto comma = s.find(',');
    out.push_back(trim(s.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <typename T>
std::string list(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_floating_point_v<T>) {
      out += num(v[i]);
    } else {
      out += std::to_string(v[i]);
    }
  }
  return out;
}

std::vector<double> parse_doubles(std::string_view key, std::string_view s) {
  std::vector<double> out;
  for (auto part : split_list(s)) out.push_back(parse_double(key, part));
  return out;
}

std::vector<std::size_t> parse_sizes(std::string_view key, std::string_view s) {
  std::vector<std::size_t> out;
  for (auto part : split_list(s)) out.push_back(parse_uint(key, part));
  return out;
}

struct Entry {
  std::string doc;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view key, std::string_view value)> set;
  /// Execution-only keys stay out of resolved.cfg and the config hash.
  bool serialized = true;
};

template <typename T>
Entry size_entry(std::string doc, T RunConfig::* field) {
  return {
      std::move(doc), [field](const RunConfig& c) { return std::to_string(c.*field); },
      [field](RunConfig& c, std::string_view k, std::string_view v) { c.*field = static_cast<T>(parse_uint(k, v)); }};
}

Entry double_entry(std::string doc, double RunConfig::* field) {
  return {std::move(doc), [field](const RunConfig& c) { return num(c.*field); },
          [field](RunConfig& c, std::string_view k, std::string_view v) { c.*field = parse_double(k, v); }};
}

Entry bool_entry(std::string doc, bool RunConfig::* field) {
  return {std::move(doc), [field](const RunConfig& c) { return std::string(c.*field ? "on" : "off"); },
          [field](RunConfig& c, std::string_view k, std::string_view v) { c.*field = parse_bool(k, v); }};
}

Entry string_entry(std::string doc, std::string RunConfig::* field) {
  return {std::move(doc), [field](const RunConfig& c) { return c.*field; },
          [field](RunConfig& c, std::string_view k, std::string_view v) {
            if (v.empty()) bad_value(k, v, "a non-empty name");
            c.*field = std::string(v);
          }};
}

Entry doubles_entry(std::string doc, std::vector<double> RunConfig::* field) {
  return {std::move(doc), [field](const RunConfig& c) { return list(c.*field); },
          [field](RunConfig& c, std::string_view k, std::string_view v) { c.*field = parse_doubles(k, v); }};
}

// `access` is a generic lambda returning a reference into the config.
template <typename Access, typename ToStr, typename FromStr>
Entry nested(std::string doc, Access access, ToStr to_str, FromStr from_str) {
  return {std::move(doc), [=](const RunConfig& c) { return std::string(to_str(access(c))); },
          [=](RunConfig& c, std::string_view k, std::string_view v) { access(c) = from_str(k, v); }};
}

std::vector<std::size_t> sizes_of(std::string_view k, std::string_view v) { return parse_sizes(k, v); }

std::string size_str(std::size_t v) { return std::to_string(v); }
std::string bool_str(bool v) { return v ? "on" : "off"; }

const std::map<std::string, Entry, std::less<>>& registry() {
  static const std::map<std::string, Entry, std::less<>> reg = [] {
    std::map<std::string, Entry, std::less<>> r;
    r["seed"] = {"master seed; corpus, init, pretext, train and eval streams derive from it",
                 [](const RunConfig& c) { return std::to_string(c.seed); },
                 [](RunConfig& c, std::string_view k, std::string_view v) { c.seed = parse_uint(k, v); }};
    r["threads"] =
        size_entry("worker threads, 0 = hardware concurrency (results do not depend on it)", &RunConfig::threads);
    r["threads"].serialized = false;

    r["corpus.image_size"] = {"image side in pixels (also the encoder input size)",
                              [](const RunConfig& c) { return size_str(c.corpus.image_size); },
                              [](RunConfig& c, std::string_view k, std::string_view v) {
                                c.corpus.image_size = parse_uint(k, v);
                                c.model.encoder.image_size = c.corpus.image_size;
                              }};
    r["corpus.train_real"] =
        nested("real training images", [](auto& c) -> auto& { return c.corpus.train_real; }, size_str, parse_uint);
    r["corpus.train_fake"] =
        nested("fake training images", [](auto& c) -> auto& { return c.corpus.train_fake; }, size_str, parse_uint);
    r["corpus.train_family"] = nested(
        "artifact family seen in training (A, B or C)", [](auto& c) -> auto& { return c.corpus.train_family; },
        [](corpus::Family f) { return corpus::to_string(f); },
        [](std::string_view, std::string_view v) { return corpus::parse_family(std::string(v)); });
    r["corpus.eval_per_family"] = nested(
        "real and fake images per evaluation family", [](auto& c) -> auto& { return c.corpus.eval_per_family; },
        size_str, parse_uint);
    r["corpus.noise_std"] = nested(
        "std of the white noise before blurring", [](auto& c) -> auto& { return c.corpus.noise_std; }, num,
        parse_double);
    r["corpus.gradient_amplitude"] = nested(
        "peak-to-peak amplitude of the luminance ramp", [](auto& c) -> auto& { return c.corpus.gradient_amplitude; },
        num, parse_double);
    r["corpus.dct_step"] =
        nested("family B quantization step", [](auto& c) -> auto& { return c.corpus.dct_step; }, num, parse_double);
    r["corpus.grid_period"] = nested(
        "family C grid period (pixels)", [](auto& c) -> auto& { return c.corpus.grid_period; }, size_str, parse_uint);
    r["corpus.grid_amplitude"] =
        nested("family C grid amplitude", [](auto& c) -> auto& { return c.corpus.grid_amplitude; }, num, parse_double);

    r["encoder.embed_dim"] =
        nested("token width d", [](auto& c) -> auto& { return c.model.encoder.embed_dim; }, size_str, parse_uint);
    r["encoder.layers"] =
        nested("transformer blocks", [](auto& c) -> auto& { return c.model.encoder.layers; }, size_str, parse_uint);
    r["encoder.heads"] =
        nested("attention heads", [](auto& c) -> auto& { return c.model.encoder.heads; }, size_str, parse_uint);
    r["encoder.patch_size"] = nested(
        "patch side in pixels", [](auto& c) -> auto& { return c.model.encoder.patch_size; }, size_str, parse_uint);
    r["encoder.mlp_ratio"] = nested(
        "MLP hidden width as a multiple of d", [](auto& c) -> auto& { return c.model.encoder.mlp_ratio; }, size_str,
        parse_uint);
    r["encoder.selected_layers"] = nested(
        "1-based layers feeding the fusion", [](auto& c) -> auto& { return c.model.encoder.selected_layers; },
        list<std::size_t>, sizes_of);
    r["encoder.lora_rank"] =
        nested("adapter rank r", [](auto& c) -> auto& { return c.model.encoder.lora_rank; }, size_str, parse_uint);
    r["encoder.lora_alpha"] = nested(
        "adapter alpha; updates are scaled by alpha / r", [](auto& c) -> auto& { return c.model.encoder.lora_alpha; },
        num, parse_double);
    r["encoder.input_normalization"] = {
        "pixel preprocessing before patch embedding; only 'none' (raw [0, 1] pixels) is implemented",
        [](const RunConfig&) { return std::string("none"); },
        [](RunConfig&, std::string_view k, std::string_view v) {
          if (v != "none") bad_value(k, v, "'none'");
        }};

    r["fusion.scales"] = nested(
        "region pooling window sides", [](auto& c) -> auto& { return c.model.fusion.scales; }, list<std::size_t>,
        sizes_of);
    r["fusion.cgf_hidden"] = nested(
        "granularity-gate hidden width, 0 = d", [](auto& c) -> auto& { return c.model.fusion.cgf_hidden; }, size_str,
        parse_uint);
    r["head.hidden"] =
        nested("classifier hidden width", [](auto& c) -> auto& { return c.model.head_hidden; }, size_str, parse_uint);

    r["mixup.alpha"] = nested(
        "Beta(alpha, alpha) parameter of the mixing ratio", [](auto& c) -> auto& { return c.mixup.alpha; }, num,
        parse_double);
    r["mixup.mix_fraction"] = nested(
        "share of fake slots replaced by mixed samples", [](auto& c) -> auto& { return c.mixup.mix_fraction; }, num,
        parse_double);
    r["mixup.mode"] = nested(
        "real-fake, real-real-control, patch-shuffle-control or off", [](auto& c) -> auto& { return c.mixup.mode; },
        [](augment::MixMode m) { return augment::to_string(m); },
        [](std::string_view, std::string_view v) { return augment::parse_mix_mode(v); });

    r["train.lr"] = double_entry("Adam learning rate", &RunConfig::lr);
    r["train.batch"] = size_entry("samples per step (half real, half fake-labeled)", &RunConfig::batch);
    r["train.epochs"] = size_entry("detection epochs", &RunConfig::epochs);
    r["train.beta1"] = double_entry("Adam first-moment decay", &RunConfig::beta1);
    r["train.beta2"] = double_entry("Adam second-moment decay", &RunConfig::beta2);
    r["train.eps"] = double_entry("Adam epsilon", &RunConfig::adam_eps);
    r["train.data_fraction"] = double_entry("share of the training pools used, in (0, 1]", &RunConfig::data_fraction);

    r["pretext.enabled"] =
        bool_entry("pretrain the backbone on blur-class prediction before freezing it", &RunConfig::pretext);
    r["pretext.epochs"] = size_entry("pretext epochs over the training reals", &RunConfig::pretext_epochs);
    r["pretext.batch"] = size_entry("pretext batch size", &RunConfig::pretext_batch);
    r["pretext.lr"] = double_entry("pretext learning rate", &RunConfig::pretext_lr);

    r["toggle.mda"] = bool_entry("mixup augmentation", &RunConfig::mda);
    r["toggle.lora"] = nested(
        "low-rank adapters on Q, K, V", [](auto& c) -> auto& { return c.model.encoder.lora_enabled; }, bool_str,
        parse_bool);
    r["toggle.hirp"] = nested(
        "region-token stream (off: CLS only)", [](auto& c) -> auto& { return c.model.fusion.hirp; }, bool_str,
        parse_bool);
    r["toggle.clf"] = nested(
        "cross-layer weighting (off: last selected layer)", [](auto& c) -> auto& { return c.model.fusion.clf; },
        bool_str, parse_bool);
    r["toggle.cgf"] = nested(
        "adaptive CLS/region gate (off: fixed equal weights)", [](auto& c) -> auto& { return c.model.fusion.cgf; },
        bool_str, parse_bool);

    r["eval.split"] = string_entry("split scored by eval and the export commands", &RunConfig::eval_split);
    r["eval.calibrate_fpr"] = double_entry("target real FPR for threshold calibration", &RunConfig::calibrate_fpr);
    r["eval.calibrate_on"] = string_entry("split whose reals calibrate the threshold", &RunConfig::calibrate_on);
    r["eval.pca_k"] = size_entry("principal components in export-features", &RunConfig::pca_k);

    r["robustness.split"] = string_entry("split scored by the robustness sweep", &RunConfig::robustness_split);
    r["robustness.blur"] = doubles_entry("Gaussian blur sigmas", &RunConfig::robustness_blur);
    r["robustness.compress"] =
        doubles_entry("compression qualities in 1..10 (10 = finest)", &RunConfig::robustness_compress);

    r["bench.images"] = size_entry("timed forward passes", &RunConfig::bench_images);
    r["bench.warmup"] = size_entry("untimed warm-up passes", &RunConfig::bench_warmup);

    r["ablate.alphas"] = doubles_entry("mixup alpha values of the alpha sweep", &RunConfig::ablate_alphas);
    r["ablate.fractions"] = doubles_entry("training-data fractions of the data sweep", &RunConfig::ablate_fractions);
    r["ablate.epochs"] = size_entry("epochs per ablation arm, 0 = train.epochs", &RunConfig::ablate_epochs);
    return r;
  }();
  return reg;
}

}  // namespace

void RunConfig::validate() const {
  model.encoder.validate();
  mixup.validate();
  if (model.encoder.image_size != corpus.image_size) throw ConfigError("encoder and corpus image sizes differ");
  if (corpus.image_size % 8 != 0) throw ConfigError("corpus.image_size must be a multiple of 8");
  if (!(lr > 0)) throw ConfigError("train.lr must be > 0");
  if (batch < 2) throw ConfigError("train.batch must be >= 2");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0)) throw ConfigError("train.eps must be > 0");
  if (!(data_fraction > 0 && data_fraction <= 1)) throw ConfigError("train.data_fraction must lie in (0, 1]");
  if (pretext_batch < 1) throw ConfigError("pretext.batch must be >= 1");
  if (!(pretext_lr > 0)) throw ConfigError("pretext.lr must be > 0");
  if (!(calibrate_fpr >= 0 && calibrate_fpr <= 1)) throw ConfigError("eval.calibrate_fpr must lie in [0, 1]");
  if (pca_k < 1 || pca_k > model.encoder.embed_dim) throw ConfigError("eval.pca_k must lie in 1..embed_dim");
  if (bench_images < 1) throw ConfigError("bench.images must be >= 1");
  for (double s : robustness_blur) {
    if (!(s >= 0)) throw ConfigError("robustness.blur sigmas must be >= 0");
  }
  for (double q : robustness_compress) {
    if (q != static_cast<int>(q) || q < 1 || q > 10)
      throw ConfigError("robustness.compress levels must be integers 1..10");
  }
  for (double a : ablate_alphas) {
    if (!(a > 0)) throw ConfigError("ablate.alphas must be > 0");
  }
  for (double f : ablate_fractions) {
    if (!(f > 0 && f <= 1)) throw ConfigError("ablate.fractions must lie in (0, 1]");
  }
  if (corpus.train_real == 0 || corpus.train_fake == 0) throw ConfigError("training pools must be nonempty");
  if (corpus.train_family == corpus::Family::kNone) throw ConfigError("corpus.train_family must be A, B or C");
}

std::uint64_t RunConfig::corpus_seed() const { return derive_seed(seed, "corpus"); }
std::uint64_t RunConfig::init_seed() const { return derive_seed(seed, "init"); }
std::uint64_t RunConfig::pretext_seed() const { return derive_seed(seed, "pretext"); }
std::uint64_t RunConfig::train_seed() const { return derive_seed(seed, "train"); }
std::uint64_t RunConfig::eval_seed() const { return derive_seed(seed, "eval"); }

corpus::CorpusConfig RunConfig::corpus_config() const {
  corpus::CorpusConfig c = corpus;
  c.seed = corpus_seed();
  return c;
}

train::TrainConfig RunConfig::train_config() const {
  train::TrainConfig t;
  t.seed = train_seed();
  t.batch = batch;
  t.epochs = epochs;
  t.adam = {lr, beta1, beta2, adam_eps};
  t.mixup = mixup;
  t.mda = mda;
  t.data_fraction = data_fraction;
  t.threads = threads;
  return t;
}

train::PretextConfig RunConfig::pretext_config() const {
  train::PretextConfig p;
  p.seed = pretext_seed();
  p.epochs = pretext_epochs;
  p.batch = pretext_batch;
  p.lr = pretext_lr;
  p.threads = threads;
  return p;
}

std::vector<eval::Perturbation> RunConfig::robustness_grid() const {
  std::vector<eval::Perturbation> grid;
  for (double s : robustness_blur) grid.push_back({eval::PerturbKind::kBlur, s});
  for (double q : robustness_compress) grid.push_back({eval::PerturbKind::kCompress, q});
  return grid;
}

std::vector<ConfigKey> config_keys() {
  std::vector<ConfigKey> out;
  for (const auto& [name, e] : registry()) out.push_back({name, e.doc});
  return out;
}

void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value) {
  const auto it = registry().find(key);
  if (it == registry().end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
  try {
    it->second.set(cfg, key, value);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("config key '" + std::string(key) + "': " + e.what());
  }
}

std::string get_config_value(const RunConfig& cfg, std::string_view key) {
  const auto it = registry().find(key);
  if (it == registry().end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
  return it->second.get(cfg);
}

RunConfig parse_config(std::string_view text, RunConfig cfg) {
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (!seen.insert(std::string(key)).second) {
      throw ConfigError("line " + std::to_string(line_no) + ": config key '" + std::string(key) + "' repeated");
    }
    try {
      set_config_value(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) { return parse_config(read_file(path)); }

std::string serialize_config(const RunConfig& cfg) {
  std::ostringstream out;
  for (const auto& [name, e] : registry()) {
    if (!e.serialized) continue;
    out << "# " << e.doc << '\n' << name << " = " << e.get(cfg) << '\n';
  }
  return out.str();
}

std::string config_hash(const RunConfig& cfg) { return sha256_hex(serialize_config(cfg)); }

}  // namespace himix
