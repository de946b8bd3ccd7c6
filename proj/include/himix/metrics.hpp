#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace himix::metrics {

/// One scored sample. `family` is the artifact family ("none" for reals);
/// `group` is the evaluation subset the sample is reported under.
struct ScoreRecord {
  std::string id;
  int label = 0;
  double score = 0.0;
  std::string family;
  std::string group;
};

/// Fraction of records with (score >= threshold) == label.
double accuracy(std::span<const ScoreRecord> records, double threshold = 0.5);

/// Step-wise AP: records ranked by score descending, ties by id ascending;
/// AP = (1/P) * sum over positives of (positives at or above its rank) / rank.
double average_precision(std::span<const ScoreRecord> records);

/// Expected calibration error over uniform score bins, confidence
/// max(s, 1 - s) and predicted class s >= 0.5. Empty bins are skipped.
double ece(std::span<const ScoreRecord> records, std::size_t bins = 10);

/// Smallest value tau with #{s >= tau} <= floor(target_fpr * n): the float
/// just above the (k+1)-th largest score, or 0 when k >= n. Sets `unstable`
/// when fewer than 100 scores are given.
double threshold_at_fpr(std::span<const double> real_scores, double target_fpr = 0.01, bool* unstable = nullptr);

struct Rates {
  std::optional<double> tpr;   // over label-1 records
  std::optional<double> rfpr;  // over label-0 records
};
Rates tpr_rfpr_at(std::span<const ScoreRecord> records, double tau);

struct GroupReport {
  std::string group;
  std::size_t count = 0;
  double acc = 0.0;
  std::optional<double> ap;  // absent when the group holds one class only
  Rates at_tau;
};

struct Calibration {
  std::string split;
  double target_fpr = 0.01;
  double tau = 0.0;
  bool unstable = false;
};

struct EvalReport {
  std::vector<GroupReport> groups;
  double mean_acc = 0.0;
  std::optional<double> mean_ap;
  double ece = 0.0;
  std::optional<Calibration> calibration;
  Rates overall_at_tau;
};

/// Per-group Acc/AP in first-appearance order of `group`, arithmetic means
/// over groups, ECE over all records and, when `calibration` is set, TPR and
/// RFPR at its threshold.
EvalReport build_report(std::span<const ScoreRecord> records, std::optional<Calibration> calibration = {});

/// Shortest decimal with 6 significant digits.
std::string fmt(double v);

/// CSV with columns group,count,acc,ap,tpr,rfpr followed by "mean" and an ECE/tau trailer.
std::string report_csv(const EvalReport& r);

/// CSV id,label,score,family in record order.
std::string scores_csv(std::span<const ScoreRecord> records);

}  // namespace himix::metrics
