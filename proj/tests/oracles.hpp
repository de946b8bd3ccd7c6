#pragma once

// Reference implementations used only by tests. They are written as plain
// loops over the definitions and share no code with the library.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  const std::size_t m = a.size(), k = b.size(), n = b.front().size();
  Matrix c(m, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t t = 0; t < k; ++t) c[i][j] += a[i][t] * b[t][j];
  return c;
}

inline std::vector<double> softmax(const std::vector<double>& x) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : x) mx = std::max(mx, v);
  std::vector<double> e(x.size());
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) total += e[i] = std::exp(x[i] - mx);
  for (double& v : e) v /= total;
  return e;
}

/// tokens: grid*grid rows of d values, row-major grid.
inline std::vector<double> hirp(const Matrix& tokens, std::size_t grid, const std::vector<std::size_t>& scales,
                                const std::vector<double>& beta) {
  const std::size_t d = tokens.front().size();
  const auto w = softmax(beta);
  std::vector<double> out(d, 0.0);
  for (std::size_t r = 0; r < scales.size(); ++r) {
    const std::size_t s = scales[r];
    std::vector<double> best(d, -std::numeric_limits<double>::infinity());
    for (std::size_t wy = 0; wy < grid / s; ++wy) {
      for (std::size_t wx = 0; wx < grid / s; ++wx) {
        for (std::size_t c = 0; c < d; ++c) {
          double sum = 0.0;
          for (std::size_t y = wy * s; y < (wy + 1) * s; ++y)
            for (std::size_t x = wx * s; x < (wx + 1) * s; ++x) sum += tokens[y * grid + x][c];
          best[c] = std::max(best[c], sum / static_cast<double>(s * s));
        }
      }
    }
    for (std::size_t c = 0; c < d; ++c) out[c] += w[r] * best[c];
  }
  return out;
}

struct Rec {
  std::string id;
  int label;
  double score;
};

inline double accuracy(const std::vector<Rec>& r, double thr = 0.5) {
  std::size_t ok = 0;
  for (const auto& x : r) ok += (x.score >= thr ? 1 : 0) == x.label;
  return static_cast<double>(ok) / static_cast<double>(r.size());
}

/// Rank of i (1-based): records strictly ahead by score, or tied with a smaller id, plus one.
inline double average_precision(const std::vector<Rec>& r) {
  const std::size_t n = r.size();
  std::vector<std::size_t> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t ahead = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      if (r[j].score > r[i].score || (r[j].score == r[i].score && r[j].id < r[i].id)) ++ahead;
    }
    rank[i] = ahead + 1;
  }
  double sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t k = 1; k <= n; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      if (rank[i] != k || r[i].label != 1) continue;
      std::size_t above = 0;
      for (std::size_t j = 0; j < n; ++j) above += r[j].label == 1 && rank[j] <= k;
      sum += static_cast<double>(above) / static_cast<double>(k);
      ++positives;
    }
  }
  return sum / static_cast<double>(positives);
}

inline double ece(const std::vector<Rec>& r, std::size_t bins = 10) {
  double total = 0.0;
  for (std::size_t b = 0; b < bins; ++b) {
    const double lo = static_cast<double>(b) / static_cast<double>(bins);
    const double hi = static_cast<double>(b + 1) / static_cast<double>(bins);
    double conf = 0.0, acc = 0.0, n = 0.0;
    for (const auto& x : r) {
      const bool in = x.score >= lo && (x.score < hi || (b + 1 == bins && x.score <= hi));
      if (!in) continue;
      n += 1.0;
      conf += x.score >= 0.5 ? x.score : 1.0 - x.score;
      acc += (x.score >= 0.5 ? 1 : 0) == x.label ? 1.0 : 0.0;
    }
    if (n > 0) total += n / static_cast<double>(r.size()) * std::fabs(conf / n - acc / n);
  }
  return total;
}

inline void rates(const std::vector<Rec>& r, double tau, double& tpr, double& rfpr) {
  double pos = 0, neg = 0, tp = 0, fp = 0;
  for (const auto& x : r) {
    if (x.label == 1) {
      pos += 1;
      if (x.score >= tau) tp += 1;
    } else {
      neg += 1;
      if (x.score >= tau) fp += 1;
    }
  }
  tpr = tp / pos;
  rfpr = fp / neg;
}

/// Regularized incomplete beta I_x(a, b) by composite Simpson after the
/// substitution t = u^(1/a), which removes the t^(a-1) singularity at 0.
inline double incomplete_beta(double x, double a, double b, int intervals = 20000) {
  const double upper = std::pow(x, a);
  auto f = [&](double u) { return std::pow(1.0 - std::pow(u, 1.0 / a), b - 1.0) / a; };
  const double h = upper / intervals;
  double s = f(0.0) + f(upper);
  for (int i = 1; i < intervals; ++i) s += f(i * h) * (i % 2 ? 4.0 : 2.0);
  const double integral = s * h / 3.0;
  const double beta_fn = std::tgamma(a) * std::tgamma(b) / std::tgamma(a + b);
  return integral / beta_fn;
}

/// Kolmogorov-Smirnov statistic of a sample against Uniform(0, 1).
inline double ks_uniform(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    d = std::max(d, std::fabs((i + 1) / n - xs[i]));
    d = std::max(d, std::fabs(xs[i] - i / n));
  }
  return d;
}

/// Critical KS distance at significance 0.01 (asymptotic).
inline double ks_critical_001(std::size_t n) { return 1.6276 / std::sqrt(static_cast<double>(n)); }

}  // namespace oracle
