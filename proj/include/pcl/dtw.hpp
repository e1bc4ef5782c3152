#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "pcl/common.hpp"

namespace pcl {

enum class FrameMetric { angular, cosine, euclidean };

inline FrameMetric frame_metric_by_name(const std::string& name) {
  if (name == "angular") return FrameMetric::angular;
  if (name == "cosine") return FrameMetric::cosine;
  if (name == "euclidean") return FrameMetric::euclidean;
  throw ParameterError("unknown frame metric: " + name);
}

// Angular distance arccos(cos)/pi in [0,1]. Zero vectors: 0 against another
// zero vector, 1 against anything else.
inline double frame_distance(const float* a, const float* b, int dim, FrameMetric metric) {
  if (metric == FrameMetric::euclidean) {
    double acc = 0.0;
    for (int i = 0; i < dim; ++i) {
      const double d = double(a[i]) - double(b[i]);
      acc += d * d;
    }
    return std::sqrt(acc);
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (int i = 0; i < dim; ++i) {
    dot += double(a[i]) * double(b[i]);
    na += double(a[i]) * double(a[i]);
    nb += double(b[i]) * double(b[i]);
  }
  if (na == 0.0 && nb == 0.0) return 0.0;
  if (na == 0.0 || nb == 0.0) return 1.0;
  // exact parallel check keeps identical frames at distance exactly 0
  if (dot * dot >= na * nb) {
    if (metric == FrameMetric::cosine) return dot >= 0.0 ? 0.0 : 2.0;
    return dot >= 0.0 ? 0.0 : 1.0;
  }
  const double c = dot / std::sqrt(na * nb);
  if (metric == FrameMetric::cosine) return 1.0 - c;
  return std::acos(c) / 3.141592653589793238462643;
}

// DTW with steps {(1,0),(0,1),(1,1)}; returns the mean frame distance along
// the minimal-cumulative-cost path. Equal-cost predecessors resolve
// diagonal first, then the shorter-token axis, which pins the path length.
inline double dtw_distance(const float* a, int ta, const float* b, int tb, int dim,
                           FrameMetric metric = FrameMetric::angular) {
  if (ta <= 0 || tb <= 0) throw ContractError("dtw_distance: empty token");
  std::vector<double> cost(std::size_t(ta) * tb);
  std::vector<std::int32_t> len(std::size_t(ta) * tb);
  for (int i = 0; i < ta; ++i) {
    for (int j = 0; j < tb; ++j) {
      const double d =
          frame_distance(a + std::size_t(i) * dim, b + std::size_t(j) * dim, dim, metric);
      const std::size_t ix = std::size_t(i) * tb + j;
      if (i == 0 && j == 0) {
        cost[ix] = d;
        len[ix] = 1;
        continue;
      }
      double best = 0.0;
      std::int32_t best_len = 0;
      bool have = false;
      auto consider = [&](int pi, int pj) {
        if (pi < 0 || pj < 0) return;
        const std::size_t p = std::size_t(pi) * tb + pj;
        if (!have || cost[p] < best || (cost[p] == best && len[p] < best_len)) {
          best = cost[p];
          best_len = len[p];
          have = true;
        }
      };
      consider(i - 1, j - 1);
      consider(i - 1, j);
      consider(i, j - 1);
      cost[ix] = best + d;
      len[ix] = best_len + 1;
    }
  }
  const std::size_t last = std::size_t(ta) * tb - 1;
  return cost[last] / double(len[last]);
}

}  // namespace pcl
