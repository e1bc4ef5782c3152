#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "pcl/stats.hpp"

using namespace pcl;
using Catch::Approx;

namespace {

// direct textbook formulas, the independent oracle for the implementations
double pearson_direct(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = double(x.size());
  double sx = 0, sy = 0, sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxy += x[i] * y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
  }
  return (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
}

std::vector<double> rank_direct(const std::vector<double>& v) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    int less = 0, equal = 0;
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (v[j] < v[i]) ++less;
      if (v[j] == v[i]) ++equal;
    }
    out[i] = double(less) + 1.0 + 0.5 * double(equal - 1);
  }
  return out;
}

}  // namespace

TEST_CASE("pearson closed forms") {
  std::vector<double> x = {1, 2, 3, 4, 5};
  std::vector<double> y;
  for (double v : x) y.push_back(2 * v + 1);
  REQUIRE(pearson(x, y) == Approx(1.0).epsilon(1e-12));
  std::vector<double> neg;
  for (double v : x) neg.push_back(-v);
  REQUIRE(pearson(x, neg) == Approx(-1.0).epsilon(1e-12));
  REQUIRE(pearson({1, 2, 3}, {1, 3, 2}) == Approx(0.5).epsilon(1e-12));
  REQUIRE_THROWS_AS(pearson({1, 1, 1}, {1, 2, 3}), NumericError);
  REQUIRE_THROWS_AS(pearson({1, 2}, {1, 2}), ParameterError);
}

TEST_CASE("spearman closed forms") {
  SECTION("strictly monotone map gives 1") {
    std::vector<double> x = {1, 2, 5, 9, 12};
    std::vector<double> y;
    for (double v : x) y.push_back(std::exp(v * 0.1));
    REQUIRE(spearman(x, y) == Approx(1.0).epsilon(1e-12));
  }
  SECTION("ties receive average ranks") {
    REQUIRE(spearman({1, 2, 3, 4}, {1, 1, 2, 3}) == Approx(0.9486832980505138).epsilon(1e-9));
  }
  SECTION("reversing y negates") {
    std::vector<double> x = {3, 7, 1, 9, 4};
    std::vector<double> y = {1, 5, 0, 8, 2};
    std::vector<double> ny;
    for (double v : y) ny.push_back(-v);
    REQUIRE(spearman(x, ny) == Approx(-spearman(x, y)).epsilon(1e-12));
  }
  SECTION("all-equal side is undefined") {
    REQUIRE_THROWS_AS(spearman({1, 1, 1}, {1, 2, 3}), NumericError);
  }
}

TEST_CASE("t statistic closed forms") {
  REQUIRE(t_statistic(0.5, 10) == Approx(0.5 * std::sqrt(8.0) / std::sqrt(0.75)).epsilon(1e-12));
  REQUIRE(t_statistic(0.5, 10) == Approx(1.6329931618554518).epsilon(1e-12));
  REQUIRE(t_statistic(0.0, 25) == 0.0);
  const double t998 = t_statistic(0.998, 10);
  REQUIRE(t998 == Approx(44.6).margin(0.2));
  REQUIRE(pearson_significant(t998, 10));
  REQUIRE(std::isinf(t_statistic(1.0, 10)));
  REQUIRE(pearson_significant(t_statistic(1.0, 10), 10));
}

TEST_CASE("bundled critical values and boundaries") {
  REQUIRE(t_critical_05(8) == 1.860);
  REQUIRE(spearman_critical_05(10) == 0.678);
  // boundaries quoted for n = 10
  REQUIRE(spearman_significant(0.679, 10));
  REQUIRE_FALSE(spearman_significant(0.677, 10));
  REQUIRE(spearman_significant(0.678, 10));
  REQUIRE(pearson_significant(1.86, 10));
  REQUIRE_FALSE(pearson_significant(1.85, 10));
  // r = 0.903 at n = 10: t about 5.94, significant
  REQUIRE(t_statistic(0.903, 10) == Approx(5.94).margin(0.02));
  REQUIRE(pearson_significant(t_statistic(0.903, 10), 10));
  REQUIRE_THROWS_AS(spearman_critical_05(31), UnsupportedError);
  REQUIRE_THROWS_AS(spearman_critical_05(3), UnsupportedError);
  REQUIRE_THROWS_AS(t_critical_05(49), UnsupportedError);
}

TEST_CASE("significance verdict composition") {
  std::vector<double> x, y;
  CounterRng rng(5, 0);
  for (int i = 0; i < 10; ++i) {
    x.push_back(double(i));
    y.push_back(double(i) * 1.5 + 0.01 * rng.next_gaussian());
  }
  auto v = significance(x, y);
  REQUIRE(v.n == 10);
  REQUIRE(v.significant_r);
  REQUIRE(v.significant_rs);
  REQUIRE(v.rs_in_table);

  // n beyond the bundled Spearman table still yields the Pearson verdict
  std::vector<double> lx, ly;
  for (int i = 0; i < 40; ++i) {
    lx.push_back(double(i));
    ly.push_back(double(i) + 0.1 * rng.next_gaussian());
  }
  auto lv = significance(lx, ly);
  REQUIRE(lv.significant_r);
  REQUIRE_FALSE(lv.rs_in_table);
}

TEST_CASE("ratio change") {
  REQUIRE(ratio_change({2.0, 1.0}) == std::vector<double>{-0.5});
  auto flat = ratio_change({3.0, 3.0, 3.0, 3.0});
  for (double v : flat) REQUIRE(v == 0.0);
  std::vector<double> geo = {1.0};
  for (int i = 0; i < 5; ++i) geo.push_back(geo.back() * 0.9);
  for (double v : ratio_change(geo)) REQUIRE(v == Approx(-0.1).epsilon(1e-12));
  REQUIRE_THROWS_AS(ratio_change({1.0}), ParameterError);
  REQUIRE_THROWS_AS(ratio_change({1.0, 0.0, 2.0}), NumericError);
}

TEST_CASE("summarize runs") {
  auto ones = summarize_runs({1, 1, 1});
  REQUIRE(ones.mean == 1.0);
  REQUIRE(ones.sd == 0.0);
  REQUIRE(ones.has_sd);

  auto t3 = summarize_runs({19.265, 19.921, 19.878, 20.358});
  REQUIRE(t3.mean == Approx(19.8555).margin(1e-10));
  REQUIRE(t3.sd == Approx(0.449).margin(5e-4));
  REQUIRE(format_fixed(t3.mean, 3) == "19.856");
  REQUIRE(format_fixed(t3.sd, 3) == "0.449");

  auto pairv = summarize_runs({3.0, 8.0});
  REQUIRE(pairv.mean == 5.5);
  REQUIRE(pairv.sd == Approx(5.0 / std::sqrt(2.0)).epsilon(1e-12));

  auto single = summarize_runs({42.0});
  REQUIRE(single.mean == 42.0);
  REQUIRE_FALSE(single.has_sd);
}

TEST_CASE("invariance properties") {
  CounterRng rng(17, 0);
  std::vector<double> x, y;
  for (int i = 0; i < 12; ++i) {
    x.push_back(rng.uniform(-5, 5));
    y.push_back(rng.uniform(-5, 5));
  }
  const double r = pearson(x, y);
  std::vector<double> ax;
  for (double v : x) ax.push_back(3.5 * v + 17.0);
  REQUIRE(pearson(ax, y) == Approx(r).epsilon(1e-10));
  std::vector<double> nx;
  for (double v : x) nx.push_back(-2.0 * v + 1.0);
  REQUIRE(pearson(nx, y) == Approx(-r).epsilon(1e-10));

  const double rs = spearman(x, y);
  std::vector<double> mx;
  for (double v : x) mx.push_back(std::exp(0.3 * v));  // strictly monotone
  REQUIRE(spearman(mx, y) == Approx(rs).epsilon(1e-12));

  // monotone rank match regardless of spacing
  std::vector<double> sx = {1, 10, 100, 1000, 10000};
  std::vector<double> sy = {-3, -2.9, 5, 6, 7000};
  REQUIRE(std::abs(spearman(sx, sy)) == Approx(1.0).epsilon(1e-12));

  // t is increasing in |r| and n
  REQUIRE(t_statistic(0.6, 10) > t_statistic(0.5, 10));
  REQUIRE(t_statistic(0.5, 20) > t_statistic(0.5, 10));
  REQUIRE(std::abs(t_statistic(-0.6, 10)) > std::abs(t_statistic(-0.5, 10)));
}

TEST_CASE("implementations match direct 64-bit evaluation to 1e-12") {
  CounterRng rng(23, 0);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 4 + int(rng.next_below(40));
    std::vector<double> x, y;
    for (int i = 0; i < n; ++i) {
      x.push_back(rng.uniform(-10, 10));
      y.push_back(rng.uniform(-10, 10));
    }
    const double r = pearson(x, y);
    const double rd = pearson_direct(x, y);
    REQUIRE(std::abs(r - rd) <= 1e-12 * std::max(1.0, std::abs(rd)));

    const double rs = spearman(x, y);
    const double rsd = pearson_direct(rank_direct(x), rank_direct(y));
    REQUIRE(std::abs(rs - rsd) <= 1e-12 * std::max(1.0, std::abs(rsd)));

    const double t = t_statistic(r, n);
    const double td = r * std::sqrt(double(n - 2)) / std::sqrt(1.0 - r * r);
    REQUIRE(std::abs(t - td) <= 1e-12 * std::max(1.0, std::abs(td)));
  }
}

TEST_CASE("correlation report CSV") {
  std::vector<CorrelationRow> rows(2);
  rows[0].model = "apc";
  rows[0].run = "1";
  rows[0].condition = "across";
  rows[0].verdict.r = 0.998;
  rows[0].verdict.r_s = 1.0;
  rows[0].verdict.significant_r = true;
  rows[0].verdict.significant_rs = true;
  rows[1].model = "cpc";
  rows[1].run = "pooled";
  rows[1].condition = "within";
  rows[1].verdict.r = -0.2;
  rows[1].verdict.r_s = -0.1;
  rows[1].verdict.rs_in_table = false;
  const std::string path =
      (std::filesystem::temp_directory_path() / "pcl_corr.csv").string();
  write_correlation_report(path, rows);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  REQUIRE(line == "model,run,condition,r,r_s,significant_r,significant_rs");
  std::getline(in, line);
  REQUIRE(line == "apc,1,across,0.998000,1.000000,yes,yes");
  std::getline(in, line);
  REQUIRE(line == "cpc,pooled,within,-0.200000,-0.100000,no,na");
}
