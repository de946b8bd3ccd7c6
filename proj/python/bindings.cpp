#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "himix/augment.hpp"
#include "himix/config.hpp"
#include "himix/corpus.hpp"
#include "himix/evaluate.hpp"
#include "himix/imageops.hpp"
#include "himix/metrics.hpp"
#include "himix/pipeline.hpp"

namespace py = pybind11;
using namespace py::literals;
using namespace himix;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Image to_image(const FloatArray& a) {
  if (a.ndim() != 3) throw ShapeError("expected a (channels, height, width) array");
  Image img(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
            static_cast<std::size_t>(a.shape(2)));
  std::copy(a.data(), a.data() + a.size(), img.pixels.begin());
  return img;
}

FloatArray to_array(const Image& img) {
  FloatArray a({img.channels, img.height, img.width});
  std::copy(img.pixels.begin(), img.pixels.end(), a.mutable_data());
  return a;
}

std::vector<metrics::ScoreRecord> records_of(const std::vector<int>& labels, const std::vector<double>& scores,
                                             const std::vector<std::string>& ids) {
  if (labels.size() != scores.size()) throw ShapeError("labels and scores differ in length");
  if (!ids.empty() && ids.size() != scores.size()) throw ShapeError("ids and scores differ in length");
  std::vector<metrics::ScoreRecord> out(scores.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].label = labels[i];
    out[i].score = scores[i];
    out[i].id = ids.empty() ? std::to_string(i) : ids[i];
  }
  return out;
}

corpus::CorpusConfig corpus_config(std::uint64_t seed, const std::string& config_text) {
  RunConfig cfg = parse_config(config_text);
  cfg.seed = seed;
  return cfg.corpus_config();
}

}  // namespace

PYBIND11_MODULE(_himix, m) {
  m.doc() = "Synthetic-image detection toolkit: procedural corpus, mixup, detector and metrics.";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<ImageFormatError>(m, "ImageFormatError", PyExc_OSError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("read_image", [](const std::filesystem::path& p) { return to_array(read_image(p)); }, "path"_a);
  m.def(
      "write_image", [](const std::filesystem::path& p, const FloatArray& a) { write_image(p, to_image(a)); }, "path"_a,
      "image"_a);

  m.def(
      "gen_real",
      [](std::uint64_t seed, double sigma, double angle, std::size_t size) {
        return to_array(corpus::gen_real(seed, sigma, angle, size, corpus::CorpusConfig{}));
      },
      "seed"_a, "sigma"_a, "angle"_a = 0.0, "size"_a = 64);
  m.def(
      "gen_fake",
      [](const std::string& family, std::uint64_t seed) {
        return to_array(corpus::gen_fake(corpus::parse_family(family), seed, corpus::CorpusConfig{}));
      },
      "family"_a, "seed"_a);
  m.def(
      "build_corpus",
      [](const std::filesystem::path& out, std::uint64_t seed, const std::string& config_text, unsigned threads) {
        const auto manifest = corpus::build_corpus(corpus_config(seed, config_text), out, threads);
        return corpus::corpus_hash(out, manifest);
      },
      "out"_a, "seed"_a = 0, "config"_a = "", "threads"_a = 0,
      "Generates a corpus under `out`; returns its SHA-256 content hash.");
  m.def(
      "manifest",
      [](const std::filesystem::path& dir) {
        py::list rows;
        for (const auto& e : corpus::load_manifest(dir).entries) {
          rows.append(py::dict("path"_a = e.path, "label"_a = e.label == corpus::Label::kFake ? "fake" : "real",
                               "family"_a = corpus::to_string(e.family), "seed"_a = e.seed, "split"_a = e.split,
                               "sigma"_a = e.sigma));
        }
        return rows;
      },
      "corpus_dir"_a);

  m.def(
      "sample_lambda",
      [](double alpha, std::uint64_t seed, std::size_t n) {
        augment::MixupConfig{alpha, 0.5, augment::MixMode::kRealFake}.validate();
        Rng rng(seed);
        std::vector<double> out(n);
        for (double& v : out) v = augment::sample_lambda(alpha, rng);
        return out;
      },
      "alpha"_a, "seed"_a, "n"_a = 1);
  m.def(
      "mixup",
      [](const FloatArray& real, const FloatArray& fake, double lambda) {
        return to_array(augment::mixup(to_image(real), to_image(fake), lambda).image);
      },
      "real"_a, "fake"_a, "lam"_a);
  m.def(
      "gaussian_blur", [](const FloatArray& a, double sigma) { return to_array(gaussian_blur(to_image(a), sigma)); },
      "image"_a, "sigma"_a);
  m.def(
      "compress",
      [](const FloatArray& a, int q) {
        return to_array(eval::perturb(to_image(a), {eval::PerturbKind::kCompress, static_cast<double>(q)}));
      },
      "image"_a, "quality"_a);

  m.def(
      "accuracy",
      [](const std::vector<int>& labels, const std::vector<double>& scores, double threshold) {
        return metrics::accuracy(records_of(labels, scores, {}), threshold);
      },
      "labels"_a, "scores"_a, "threshold"_a = 0.5);
  m.def(
      "average_precision",
      [](const std::vector<int>& labels, const std::vector<double>& scores, const std::vector<std::string>& ids) {
        return metrics::average_precision(records_of(labels, scores, ids));
      },
      "labels"_a, "scores"_a, "ids"_a = std::vector<std::string>{});
  m.def(
      "ece",
      [](const std::vector<int>& labels, const std::vector<double>& scores, std::size_t bins) {
        return metrics::ece(records_of(labels, scores, {}), bins);
      },
      "labels"_a, "scores"_a, "bins"_a = 10);
  m.def(
      "threshold_at_fpr",
      [](const std::vector<double>& reals, double fpr) { return metrics::threshold_at_fpr(reals, fpr); },
      "real_scores"_a, "target_fpr"_a = 0.01);
  m.def(
      "tpr_rfpr_at",
      [](const std::vector<int>& labels, const std::vector<double>& scores, double tau) {
        const auto r = metrics::tpr_rfpr_at(records_of(labels, scores, {}), tau);
        return py::make_tuple(r.tpr ? py::cast(*r.tpr) : py::none(), r.rfpr ? py::cast(*r.rfpr) : py::none());
      },
      "labels"_a, "scores"_a, "tau"_a);

  m.def("default_config", [] { return serialize_config(RunConfig{}); }, "Every config key with its default value.");
  m.def(
      "resolve_config", [](const std::string& text) { return serialize_config(parse_config(text)); }, "text"_a,
      "Parses `key = value` text and returns the fully resolved config.");

  py::class_<ParamCensus>(m, "ParamCensus")
      .def_readonly("lora", &ParamCensus::lora)
      .def_readonly("fusion", &ParamCensus::fusion)
      .def_readonly("head", &ParamCensus::head)
      .def_readonly("backbone", &ParamCensus::backbone)
      .def_property_readonly("trainable", &ParamCensus::trainable)
      .def_property_readonly("total", &ParamCensus::total);
  m.def(
      "census", [](const std::string& text) { return census(parse_config(text).model); }, "config"_a = "",
      "Closed-form parameter counts for a config.");

  py::class_<Model>(m, "Model")
      .def(py::init([](const std::string& text, std::uint64_t seed) {
             RunConfig cfg = parse_config(text);
             cfg.seed = seed;
             auto model = std::make_unique<Model>(cfg.model, cfg.init_seed());
             train::freeze_backbone(*model);
             return model;
           }),
           "config"_a = "", "seed"_a = 0, "Untrained model with a random frozen backbone.")
      .def_static(
          "load",
          [](const std::filesystem::path& checkpoint, const std::string& text) {
            const auto resolved = pipeline::checkpoint_file(checkpoint).parent_path() / kResolvedConfigName;
            const RunConfig cfg =
                text.empty() && std::filesystem::exists(resolved) ? load_config(resolved) : parse_config(text);
            return pipeline::load_model(checkpoint, cfg);
          },
          "checkpoint"_a, "config"_a = "",
          "Loads a checkpoint; the config defaults to the run directory's resolved.cfg.")
      .def(
          "predict", [](const Model& m, const FloatArray& a) { return m.predict(to_image(a)); }, "image"_a,
          py::call_guard<py::gil_scoped_release>())
      .def(
          "features", [](const Model& m, const FloatArray& a) { return m.features(to_image(a)); }, "image"_a)
      .def_property_readonly("params_total", [](const Model& m) { return m.params().count_values(false); })
      .def_property_readonly("params_trainable", [](const Model& m) { return m.params().count_values(true); });

  m.def(
      "train",
      [](const std::filesystem::path& corpus_dir, const std::filesystem::path& out, const std::string& text,
         std::uint64_t seed) {
        RunConfig cfg = parse_config(text);
        cfg.seed = seed;
        const auto manifest = corpus::load_manifest(corpus_dir);
        py::gil_scoped_release release;
        const auto data = pipeline::load_training_data(corpus_dir, manifest, cfg.threads);
        auto run = pipeline::run_training(cfg, data);
        std::filesystem::create_directories(out);
        save_checkpoint(out / pipeline::kCheckpointName, run.model->params());
        write_file(out / kResolvedConfigName, serialize_config(cfg));
        py::gil_scoped_acquire acquire;
        py::list losses;
        for (const auto& row : run.train.log) losses.append(row.loss);
        return losses;
      },
      "corpus_dir"_a, "out"_a, "config"_a = "", "seed"_a = 0,
      "Pretrains, trains and writes model.hxc plus resolved.cfg to `out`; returns per-step losses.");
}
