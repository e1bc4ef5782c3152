#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "pcl/common.hpp"
#include "pcl/mfcc.hpp"

namespace pcl {

struct PcaTransform {
  std::vector<double> mean;        // D
  std::vector<double> projection;  // d x D, rows orthonormal
  std::vector<double> eigenvalues; // all D, descending
  int input_dim = 0;
  int output_dim = 0;
  double retained_variance = 0.0;
};

namespace detail {

// Cyclic Jacobi for symmetric matrices. `a` is destroyed; eigenvectors come
// back as rows of `vecs`, paired with `vals`, sorted descending.
inline void jacobi_eigen(std::vector<double>& a, int n, std::vector<double>& vals,
                         std::vector<double>& vecs) {
  vecs.assign(std::size_t(n) * n, 0.0);
  for (int i = 0; i < n; ++i) vecs[std::size_t(i) * n + i] = 1.0;
  auto at = [&](int i, int j) -> double& { return a[std::size_t(i) * n + j]; };

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off += at(i, j) * at(i, j);
    if (off < 1e-24 * n * n) break;
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = at(p, q);
        if (apq == 0.0) continue;
        const double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = at(k, p), akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = at(p, k), aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vpk = vecs[std::size_t(p) * n + k], vqk = vecs[std::size_t(q) * n + k];
          vecs[std::size_t(p) * n + k] = c * vpk - s * vqk;
          vecs[std::size_t(q) * n + k] = s * vpk + c * vqk;
        }
      }
    }
  }
  vals.resize(std::size_t(n));
  for (int i = 0; i < n; ++i) vals[std::size_t(i)] = at(i, i);
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int x, int y) { return vals[std::size_t(x)] > vals[std::size_t(y)]; });
  std::vector<double> sorted_vals(static_cast<std::size_t>(n));
  std::vector<double> sorted_vecs(std::size_t(n) * n);
  for (int i = 0; i < n; ++i) {
    sorted_vals[std::size_t(i)] = vals[std::size_t(order[std::size_t(i)])];
    std::copy_n(vecs.begin() + std::ptrdiff_t(order[std::size_t(i)]) * n, n,
                sorted_vecs.begin() + std::ptrdiff_t(i) * n);
  }
  vals = std::move(sorted_vals);
  vecs = std::move(sorted_vecs);
}

}  // namespace detail

// Covariance eigendecomposition; keeps the smallest leading set of
// components whose cumulative eigenvalue share reaches `target_variance`.
inline PcaTransform fit_pca(const float* frames, std::int64_t n, int dim,
                            double target_variance = 0.95) {
  if (n < dim + 1)
    throw ParameterError("fit_pca: need at least " + std::to_string(dim + 1) +
                         " frames for dimension " + std::to_string(dim) + ", got " +
                         std::to_string(n));
  PcaTransform pca;
  pca.input_dim = dim;
  pca.mean.assign(std::size_t(dim), 0.0);
  for (std::int64_t i = 0; i < n; ++i) {
    const float* row = frames + std::size_t(i) * dim;
    for (int d = 0; d < dim; ++d) pca.mean[std::size_t(d)] += row[d];
  }
  for (int d = 0; d < dim; ++d) pca.mean[std::size_t(d)] /= double(n);

  std::vector<double> cov(std::size_t(dim) * dim, 0.0);
  std::vector<double> centered(static_cast<std::size_t>(dim));
  for (std::int64_t i = 0; i < n; ++i) {
    const float* row = frames + std::size_t(i) * dim;
    for (int d = 0; d < dim; ++d) centered[std::size_t(d)] = row[d] - pca.mean[std::size_t(d)];
    for (int r = 0; r < dim; ++r) {
      const double cr = centered[std::size_t(r)];
      if (cr == 0.0) continue;
      double* covr = cov.data() + std::size_t(r) * dim;
      for (int c = r; c < dim; ++c) covr[c] += cr * centered[std::size_t(c)];
    }
  }
  for (int r = 0; r < dim; ++r)
    for (int c = r; c < dim; ++c) {
      cov[std::size_t(r) * dim + c] /= double(n - 1);
      cov[std::size_t(c) * dim + r] = cov[std::size_t(r) * dim + c];
    }

  std::vector<double> vecs;
  detail::jacobi_eigen(cov, dim, pca.eigenvalues, vecs);

  double total = 0.0;
  for (double v : pca.eigenvalues) total += std::max(v, 0.0);
  const double rank_tol = (pca.eigenvalues.empty() ? 0.0 : pca.eigenvalues[0]) * 1e-12;
  int rank = 0;
  for (double v : pca.eigenvalues) rank += v > rank_tol ? 1 : 0;
  if (rank < 2) throw NumericError("fit_pca: covariance is degenerate (rank < 2)");
  if (total <= 0.0) throw NumericError("fit_pca: zero total variance");

  double cum = 0.0;
  int d_keep = dim;
  for (int i = 0; i < dim; ++i) {
    cum += std::max(pca.eigenvalues[std::size_t(i)], 0.0);
    if (cum / total >= target_variance) {
      d_keep = i + 1;
      pca.retained_variance = cum / total;
      break;
    }
  }
  if (d_keep == dim) pca.retained_variance = 1.0;
  pca.output_dim = d_keep;
  pca.projection.assign(vecs.begin(), vecs.begin() + std::ptrdiff_t(d_keep) * dim);
  return pca;
}

inline FeatureSequence apply_pca(const PcaTransform& pca, const FeatureSequence& f) {
  if (f.dim != pca.input_dim)
    throw DimensionError("apply_pca: dimension " + std::to_string(f.dim) +
                         " does not match transform input " + std::to_string(pca.input_dim));
  FeatureSequence out;
  out.num_frames = f.num_frames;
  out.dim = pca.output_dim;
  out.frame_shift = f.frame_shift;
  out.frame_length = f.frame_length;
  out.start_time = f.start_time;
  out.source_id = f.source_id;
  out.speaker_id = f.speaker_id;
  out.frames.resize(std::size_t(f.num_frames) * pca.output_dim);
  for (int t = 0; t < f.num_frames; ++t) {
    const float* src = f.row(t);
    float* dst = out.row(t);
    for (int r = 0; r < pca.output_dim; ++r) {
      const double* proj = pca.projection.data() + std::size_t(r) * pca.input_dim;
      double acc = 0.0;
      for (int d = 0; d < pca.input_dim; ++d)
        acc += proj[d] * (double(src[d]) - pca.mean[std::size_t(d)]);
      dst[r] = float(acc);
    }
  }
  return out;
}

}  // namespace pcl
