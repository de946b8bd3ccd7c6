#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "temp_dir.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;  // stdout
  std::string err;  // stderr
};

std::string slurp(const fs::path& p);

Result run(const std::string& args) {
  static int counter = 0;
  const fs::path err_file =
      fs::temp_directory_path() / ("himix-cli-" + std::to_string(getpid()) + "-" + std::to_string(counter++) + ".err");
  const std::string cmd = std::string(HIMIX_CLI_PATH) + " " + args + " 2>" + err_file.string();
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) throw std::runtime_error("popen failed");
  Result r;
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = slurp(err_file);
  fs::remove(err_file);
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

constexpr const char* kTinyConfig = R"(# small settings for command-line tests
corpus.image_size = 16
corpus.train_real = 16
corpus.train_fake = 16
corpus.eval_per_family = 8
encoder.embed_dim = 16
encoder.heads = 2
encoder.layers = 2
encoder.patch_size = 4
encoder.selected_layers = 1,2
encoder.lora_rank = 2
fusion.scales = 2,4
head.hidden = 8
train.batch = 8
train.epochs = 1
pretext.epochs = 1
pretext.batch = 8
bench.images = 4
bench.warmup = 1
ablate.epochs = 1
)";

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("himix-cli");
    std::ofstream(cfg()) << kTinyConfig;
    const Result g = run("gen-corpus --config " + cfg().string() + " --seed 3 --threads 2 --out " + corpus().string());
    ASSERT_EQ(g.code, 0) << g.err;
    const Result t = run("train --config " + cfg().string() + " --seed 3 --corpus " + corpus().string() + " --out " +
                         (*dir_ / "run").string());
    ASSERT_EQ(t.code, 0) << t.err;
  }
  static void TearDownTestSuite() { delete dir_; }
  static fs::path cfg() { return *dir_ / "tiny.cfg"; }
  static fs::path corpus() { return *dir_ / "corpus"; }
  static fs::path runs() { return *dir_ / "run"; }
  static std::string base() { return "--config " + cfg().string() + " --seed 3 "; }
  static TempDir* dir_;
};
TempDir* Cli::dir_ = nullptr;

}  // namespace

TEST_F(Cli, GenCorpusIsReproducibleAndRefusesCollision) {
  const Result a = run("gen-corpus " + base() + "--threads 1 --out " + (*dir_ / "c2").string());
  ASSERT_EQ(a.code, 0) << a.out;
  EXPECT_EQ(slurp(corpus() / "manifest.jsonl"), slurp(*dir_ / "c2" / "manifest.jsonl"));
  const Result again = run("gen-corpus " + base() + "--out " + (*dir_ / "c2").string());
  EXPECT_EQ(again.code, 3) << again.out;
  const Result forced = run("gen-corpus " + base() + "--force --out " + (*dir_ / "c2").string());
  EXPECT_EQ(forced.code, 0) << forced.out;
  EXPECT_EQ(a.out, forced.out);
  EXPECT_NE(a.out.find("corpus_hash"), std::string::npos);
  EXPECT_TRUE(fs::exists(*dir_ / "c2" / "resolved.cfg"));
}

TEST_F(Cli, ConfigErrorsExitTwoNamingTheKey) {
  std::ofstream(*dir_ / "bad.cfg") << "seed = 1\nmixup.strength = 2\n";
  const Result r = run("gen-corpus --config " + (*dir_ / "bad.cfg").string() + " --out " + (*dir_ / "c3").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("mixup.strength"), std::string::npos) << r.err;
  EXPECT_EQ(run("gen-corpus --bogus-flag").code, 2);
  EXPECT_EQ(run("gen-corpus " + base() + "--set train.lr=oops --out " + (*dir_ / "c4").string()).code, 2);
}

TEST_F(Cli, TrainIsReproducibleAndTogglesWork) {
  const Result t =
      run("train " + base() + "--threads 2 --corpus " + corpus().string() + " --out " + (*dir_ / "run2").string());
  ASSERT_EQ(t.code, 0) << t.err;
  EXPECT_EQ(slurp(runs() / "model.hxc"), slurp(*dir_ / "run2" / "model.hxc"));
  EXPECT_EQ(slurp(runs() / "train_log.jsonl"), slurp(*dir_ / "run2" / "train_log.jsonl"));
  EXPECT_EQ(slurp(runs() / "resolved.cfg"), slurp(*dir_ / "run2" / "resolved.cfg"));
  EXPECT_EQ(slurp(runs() / "summary.json"), slurp(*dir_ / "run2" / "summary.json"));
  EXPECT_NE(t.out.find("checkpoint_sha256"), std::string::npos);

  const Result off = run("train " + base() + "--no-pretext --toggle mda=off --corpus " + corpus().string() + " --out " +
                         (*dir_ / "run-nomda").string());
  ASSERT_EQ(off.code, 0) << off.out;
  EXPECT_NE(slurp(*dir_ / "run-nomda" / "resolved.cfg").find("toggle.mda = off"), std::string::npos);

  EXPECT_EQ(
      run("train " + base() + "--corpus " + (*dir_ / "missing").string() + " --out " + (*dir_ / "run3").string()).code,
      3);
}

TEST_F(Cli, ResolvedConfigReproducesTheRun) {
  const Result t = run("train --config " + (runs() / "resolved.cfg").string() + " --corpus " + corpus().string() +
                       " --out " + (*dir_ / "run-replay").string());
  ASSERT_EQ(t.code, 0) << t.err;
  EXPECT_EQ(slurp(runs() / "model.hxc"), slurp(*dir_ / "run-replay" / "model.hxc"));
}

TEST_F(Cli, NonFiniteLossExitsFour) {
  const Result r = run("train " + base() + "--no-pretext --set train.lr=1e300 --set train.epochs=3 --corpus " +
                       corpus().string() + " --out " + (*dir_ / "run-nan").string());
  EXPECT_EQ(r.code, 4) << r.err;
  EXPECT_NE(r.err.find("batch"), std::string::npos) << r.err;
}

TEST_F(Cli, EvalReportIsDeterministicAndCalibrated) {
  const std::string args = "eval --checkpoint " + runs().string() + " --corpus " + corpus().string() +
                           " --calibrate-fpr 0.01 --calibrate-on eval-A";
  const Result a = run(args), b = run(args);
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  EXPECT_NE(a.err.find("unstable"), std::string::npos);
  // Header, three families, mean, ECE and tau trailers.
  EXPECT_EQ(lines(a.out), 7u) << a.out;
  EXPECT_NE(a.out.find("\neval-A,"), std::string::npos);
  // RFPR on the calibration split itself cannot exceed the target.
  const auto row = a.out.substr(a.out.find("\neval-A,") + 1);
  const std::string rfpr =
      row.substr(row.rfind(',', row.find('\n')) + 1, row.find('\n') - row.rfind(',', row.find('\n')) - 1);
  EXPECT_LE(std::stod(rfpr), 0.01) << row;
}

TEST_F(Cli, ExportsAreDeterministicAndRefuseOverwrite) {
  const fs::path out = *dir_ / "exports";
  const std::string logits =
      "export-logits --checkpoint " + runs().string() + " --corpus " + corpus().string() + " --out " + out.string();
  ASSERT_EQ(run(logits).code, 0);
  const std::string first = slurp(out / "logits.csv");
  EXPECT_EQ(lines(first), 1u + 3u * 16u);
  EXPECT_EQ(run(logits).code, 3);
  ASSERT_EQ(run(logits + " --force").code, 0);
  EXPECT_EQ(slurp(out / "logits.csv"), first);

  const std::string feats =
      "export-features --checkpoint " + runs().string() + " --corpus " + corpus().string() + " --out " + out.string();
  ASSERT_EQ(run(feats).code, 0);
  const std::string f1 = slurp(out / "features_pca.csv");
  ASSERT_EQ(run(feats + " --force").code, 0);
  EXPECT_EQ(slurp(out / "features_pca.csv"), f1);
  EXPECT_EQ(f1.rfind("id,label,family,pc1,pc2\n", 0), 0u);
}

TEST_F(Cli, RobustnessHasEightRows) {
  const fs::path out = *dir_ / "robust";
  const Result r =
      run("robustness --checkpoint " + runs().string() + " --corpus " + corpus().string() + " --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(lines(slurp(out / "robustness.csv")), 9u);
}

TEST_F(Cli, BenchReportsCensus) {
  const Result r = run("bench " + base() + "--checkpoint " + runs().string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("params-total"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("params-trainable"), std::string::npos);
  EXPECT_NE(r.out.find("images/sec"), std::string::npos);
}

TEST_F(Cli, AblationWritesThreeStudies) {
  const fs::path out = *dir_ / "ablate";
  const Result r = run("ablate " + base() + "--corpus " + corpus().string() + " --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.out;
  const std::string toggles = slurp(out / "ablation_toggles.csv");
  EXPECT_EQ(lines(toggles), 9u) << toggles;
  EXPECT_EQ(lines(slurp(out / "ablation_alpha.csv")), 6u);
  EXPECT_EQ(lines(slurp(out / "ablation_data.csv")), 6u);
  std::istringstream rows(toggles);
  std::string line;
  std::getline(rows, line);
  while (std::getline(rows, line)) {
    EXPECT_NE(line.find(",ok,"), std::string::npos) << line;
    EXPECT_EQ(line.substr(line.find(",ok,") + 4, 64).size(), 64u);
  }
}
