#include "himix/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "himix/error.hpp"

namespace himix::metrics {

double accuracy(std::span<const ScoreRecord> records, double threshold) {
  if (records.empty()) throw Error("accuracy: no records");
  std::size_t hits = 0;
  for (const auto& r : records) hits += static_cast<int>(r.score >= threshold) == r.label;
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

double average_precision(std::span<const ScoreRecord> records) {
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (records[a].score != records[b].score) return records[a].score > records[b].score;
    return records[a].id < records[b].id;
  });
  std::size_t positives = 0;
  double sum = 0.0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (records[order[rank]].label != 1) continue;
    ++positives;
    sum += static_cast<double>(positives) / static_cast<double>(rank + 1);
  }
  if (positives == 0 || positives == records.size()) throw Error("average_precision: need both classes");
  return sum / static_cast<double>(positives);
}

double ece(std::span<const ScoreRecord> records, std::size_t bins) {
  if (records.empty()) throw Error("ece: no records");
  if (bins == 0) throw Error("ece: zero bins");
  std::vector<double> conf(bins, 0.0), correct(bins, 0.0);
  std::vector<std::size_t> count(bins, 0);
  for (const auto& r : records) {
    auto b = static_cast<std::size_t>(r.score * static_cast<double>(bins));
    b = std::min(b, bins - 1);
    conf[b] += std::max(r.score, 1.0 - r.score);
    correct[b] += static_cast<int>(r.score >= 0.5) == r.label ? 1.0 : 0.0;
    ++count[b];
  }
  const double n = static_cast<double>(records.size());
  double total = 0.0;
  for (std::size_t b = 0; b < bins; ++b) {
    if (count[b] == 0) continue;
    const double nb = static_cast<double>(count[b]);
    total += nb / n * std::abs(conf[b] / nb - correct[b] / nb);
  }
  return total;
}

double threshold_at_fpr(std::span<const double> real_scores, double target_fpr, bool* unstable) {
  if (real_scores.empty()) throw Error("threshold_at_fpr: no real scores");
  if (!(target_fpr >= 0.0 && target_fpr <= 1.0)) throw Error("threshold_at_fpr: target FPR outside [0, 1]");
  if (unstable) *unstable = real_scores.size() < 100;
  std::vector<double> s(real_scores.begin(), real_scores.end());
  std::sort(s.begin(), s.end(), std::greater<>());
  const auto k = static_cast<std::size_t>(std::floor(target_fpr * static_cast<double>(s.size())));
  if (k >= s.size()) return 0.0;
  return std::nextafter(s[k], std::numeric_limits<double>::infinity());
}

Rates tpr_rfpr_at(std::span<const ScoreRecord> records, double tau) {
  std::size_t pos = 0, neg = 0, tp = 0, fp = 0;
  for (const auto& r : records) {
    const bool flagged = r.score >= tau;
    if (r.label == 1) {
      ++pos;
      tp += flagged;
    } else {
      ++neg;
      fp += flagged;
    }
  }
  Rates out;
  if (pos) out.tpr = static_cast<double>(tp) / static_cast<double>(pos);
  if (neg) out.rfpr = static_cast<double>(fp) / static_cast<double>(neg);
  return out;
}

EvalReport build_report(std::span<const ScoreRecord> records, std::optional<Calibration> calibration) {
  if (records.empty()) throw Error("build_report: no records");
  std::vector<std::string> names;
  std::vector<std::vector<ScoreRecord>> members;
  for (const auto& r : records) {
    auto it = std::find(names.begin(), names.end(), r.group);
    if (it == names.end()) {
      names.push_back(r.group);
      members.emplace_back();
      it = names.end() - 1;
    }
    members[static_cast<std::size_t>(it - names.begin())].push_back(r);
  }

  EvalReport rep;
  rep.calibration = calibration;
  double acc_sum = 0.0, ap_sum = 0.0;
  bool all_ap = true;
  for (std::size_t g = 0; g < names.size(); ++g) {
    GroupReport gr;
    gr.group = names[g];
    gr.count = members[g].size();
    gr.acc = accuracy(members[g]);
    const bool has_pos = std::any_of(members[g].begin(), members[g].end(), [](auto& r) { return r.label == 1; });
    const bool has_neg = std::any_of(members[g].begin(), members[g].end(), [](auto& r) { return r.label == 0; });
    if (has_pos && has_neg) {
      gr.ap = average_precision(members[g]);
      ap_sum += *gr.ap;
    } else {
      all_ap = false;
    }
    if (calibration) gr.at_tau = tpr_rfpr_at(members[g], calibration->tau);
    acc_sum += gr.acc;
    rep.groups.push_back(std::move(gr));
  }
  const double n = static_cast<double>(names.size());
  rep.mean_acc = acc_sum / n;
  if (all_ap) rep.mean_ap = ap_sum / n;
  rep.ece = ece(records);
  if (calibration) rep.overall_at_tau = tpr_rfpr_at(records, calibration->tau);
  return rep;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

namespace {

std::string opt(const std::optional<double>& v) { return v ? fmt(*v) : ""; }

}  // namespace

std::string report_csv(const EvalReport& r) {
  std::ostringstream out;
  out << "group,count,acc,ap,tpr,rfpr\n";
  std::size_t total = 0;
  for (const auto& g : r.groups) {
    out << g.group << ',' << g.count << ',' << fmt(g.acc) << ',' << opt(g.ap) << ',' << opt(g.at_tau.tpr) << ','
        << opt(g.at_tau.rfpr) << '\n';
    total += g.count;
  }
  out << "mean," << total << ',' << fmt(r.mean_acc) << ',' << opt(r.mean_ap) << ',' << opt(r.overall_at_tau.tpr) << ','
      << opt(r.overall_at_tau.rfpr) << '\n';
  out << "# ece," << fmt(r.ece) << '\n';
  if (r.calibration) {
    out << "# tau," << fmt(r.calibration->tau) << ",target_fpr," << fmt(r.calibration->target_fpr) << ",calibrated_on,"
        << r.calibration->split << (r.calibration->unstable ? ",unstable" : "") << '\n';
  }
  return out.str();
}

std::string scores_csv(std::span<const ScoreRecord> records) {
  std::ostringstream out;
  out << "id,label,score,family\n";
  for (const auto& r : records) out << r.id << ',' << r.label << ',' << fmt(r.score) << ',' << r.family << '\n';
  return out.str();
}

}  // namespace himix::metrics
