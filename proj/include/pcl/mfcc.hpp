#pragma once

#include <cmath>
#include <complex>
#include <string>
#include <vector>

#include "pcl/common.hpp"
#include "pcl/wav.hpp"

namespace pcl {

struct MfccConfig {
  double window_s = 0.025;
  double shift_s = 0.010;
  double preemphasis = 0.97;
  int num_mel_filters = 40;
  int num_ceps = 13;  // keeps C0
  double log_floor = 1e-10;
};

struct FeatureSequence {
  std::vector<float> frames;  // row-major, num_frames x dim
  int num_frames = 0;
  int dim = 0;
  double frame_shift = 0.010;
  double frame_length = 0.025;
  double start_time = 0.0;
  std::string source_id;
  std::string speaker_id;

  float* row(int t) { return frames.data() + std::size_t(t) * dim; }
  const float* row(int t) const { return frames.data() + std::size_t(t) * dim; }
};

namespace detail {

inline void fft_inplace(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * 3.141592653589793238462643 / double(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

// Triangular filters, equally spaced in mel between 0 and Nyquist, as
// weights over power-spectrum bins.
inline std::vector<std::vector<double>> mel_filterbank(int num_filters, int fft_size,
                                                       int sample_rate) {
  const int bins = fft_size / 2 + 1;
  const double mel_max = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(std::size_t(num_filters) + 2);
  for (int i = 0; i < num_filters + 2; ++i)
    edges[std::size_t(i)] = mel_to_hz(mel_max * i / (num_filters + 1));
  std::vector<std::vector<double>> bank(static_cast<std::size_t>(num_filters),
                                        std::vector<double>(std::size_t(bins), 0.0));
  for (int m = 0; m < num_filters; ++m) {
    const double lo = edges[std::size_t(m)], mid = edges[std::size_t(m) + 1],
                 hi = edges[std::size_t(m) + 2];
    for (int b = 0; b < bins; ++b) {
      const double f = double(b) * sample_rate / fft_size;
      double w = 0.0;
      if (f > lo && f < mid)
        w = (f - lo) / (mid - lo);
      else if (f >= mid && f < hi)
        w = (hi - f) / (hi - mid);
      bank[std::size_t(m)][std::size_t(b)] = w;
    }
  }
  return bank;
}

}  // namespace detail

inline int mfcc_frame_count(std::size_t num_samples, int window, int shift) {
  if (num_samples < std::size_t(window)) return 0;
  return 1 + int((num_samples - std::size_t(window)) / std::size_t(shift));
}

// 13 static MFCCs per frame: pre-emphasis, Hamming window, power spectrum
// (FFT size = next power of two >= window), 40-filter mel bank to Nyquist,
// floored log, orthonormal DCT-II keeping coefficients 0..12.
inline FeatureSequence compute_mfcc(const WaveBuffer& w, const MfccConfig& cfg = {}) {
  if (w.sample_rate < 8000)
    throw ParameterError(w.source_id + ": sample rate " + std::to_string(w.sample_rate) +
                         " below 8000 Hz");
  const int window = int(std::lround(cfg.window_s * w.sample_rate));
  const int shift = int(std::lround(cfg.shift_s * w.sample_rate));
  if (w.samples.size() < std::size_t(window))
    throw LengthError(w.source_id + ": " + std::to_string(w.samples.size()) +
                      " samples is shorter than one " + std::to_string(window) +
                      "-sample window");
  int fft_size = 1;
  while (fft_size < window) fft_size <<= 1;
  const int bins = fft_size / 2 + 1;
  const int frames = mfcc_frame_count(w.samples.size(), window, shift);

  std::vector<double> emphasized(w.samples.size());
  emphasized[0] = double(w.samples[0]) * (1.0 - cfg.preemphasis);
  for (std::size_t i = 1; i < w.samples.size(); ++i)
    emphasized[i] = double(w.samples[i]) - cfg.preemphasis * double(w.samples[i - 1]);

  std::vector<double> hamming(static_cast<std::size_t>(window));
  for (int i = 0; i < window; ++i)
    hamming[std::size_t(i)] = 0.54 - 0.46 * std::cos(2.0 * 3.141592653589793238462643 * i /
                                                     (window - 1));

  const auto bank = detail::mel_filterbank(cfg.num_mel_filters, fft_size, w.sample_rate);
  // orthonormal DCT-II
  std::vector<double> dct(std::size_t(cfg.num_ceps) * cfg.num_mel_filters);
  const int M = cfg.num_mel_filters;
  for (int j = 0; j < cfg.num_ceps; ++j) {
    const double scale = std::sqrt((j == 0 ? 1.0 : 2.0) / M);
    for (int m = 0; m < M; ++m)
      dct[std::size_t(j) * M + m] =
          scale * std::cos(3.141592653589793238462643 * j * (m + 0.5) / M);
  }

  FeatureSequence out;
  out.num_frames = frames;
  out.dim = cfg.num_ceps;
  out.frame_shift = cfg.shift_s;
  out.frame_length = cfg.window_s;
  out.source_id = w.source_id;
  out.speaker_id = w.speaker_id;
  out.frames.resize(std::size_t(frames) * cfg.num_ceps);

  std::vector<std::complex<double>> spec(static_cast<std::size_t>(fft_size));
  std::vector<double> power(static_cast<std::size_t>(bins));
  std::vector<double> mel_log(static_cast<std::size_t>(M));
  for (int t = 0; t < frames; ++t) {
    const double* x = emphasized.data() + std::size_t(t) * shift;
    for (int i = 0; i < window; ++i) spec[std::size_t(i)] = x[i] * hamming[std::size_t(i)];
    for (int i = window; i < fft_size; ++i) spec[std::size_t(i)] = 0.0;
    detail::fft_inplace(spec);
    for (int b = 0; b < bins; ++b) power[std::size_t(b)] = std::norm(spec[std::size_t(b)]);
    for (int m = 0; m < M; ++m) {
      double e = 0.0;
      const auto& f = bank[std::size_t(m)];
      for (int b = 0; b < bins; ++b) e += f[std::size_t(b)] * power[std::size_t(b)];
      mel_log[std::size_t(m)] = std::log(std::max(e, cfg.log_floor));
    }
    float* row = out.row(t);
    for (int j = 0; j < cfg.num_ceps; ++j) {
      double c = 0.0;
      const double* d = dct.data() + std::size_t(j) * M;
      for (int m = 0; m < M; ++m) c += d[m] * mel_log[std::size_t(m)];
      row[j] = float(c);
    }
  }
  return out;
}

// Two-tap regression deltas with replicated edges; delta-deltas apply the
// same operator to the deltas. Output has 3x the input columns.
inline FeatureSequence append_deltas(const FeatureSequence& f) {
  if (f.num_frames < 5)
    throw LengthError(f.source_id + ": " + std::to_string(f.num_frames) +
                      " frames, need at least 5 for delta features");
  const int T = f.num_frames, D = f.dim;
  auto regress = [&](const std::vector<float>& src, std::vector<float>& dst) {
    auto at = [&](int t, int d) {
      t = std::clamp(t, 0, T - 1);
      return double(src[std::size_t(t) * D + d]);
    };
    const double denom = 2.0 * (1.0 + 4.0);  // 2 * sum n^2, n = 1..2
    for (int t = 0; t < T; ++t)
      for (int d = 0; d < D; ++d) {
        const double num =
            1.0 * (at(t + 1, d) - at(t - 1, d)) + 2.0 * (at(t + 2, d) - at(t - 2, d));
        dst[std::size_t(t) * D + d] = float(num / denom);
      }
  };
  std::vector<float> delta(f.frames.size()), ddelta(f.frames.size());
  regress(f.frames, delta);
  regress(delta, ddelta);

  FeatureSequence out = f;
  out.dim = 3 * D;
  out.frames.assign(std::size_t(T) * out.dim, 0.0f);
  for (int t = 0; t < T; ++t) {
    float* row = out.row(t);
    const float* s = f.frames.data() + std::size_t(t) * D;
    const float* d1 = delta.data() + std::size_t(t) * D;
    const float* d2 = ddelta.data() + std::size_t(t) * D;
    for (int d = 0; d < D; ++d) {
      row[d] = s[d];
      row[D + d] = d1[d];
      row[2 * D + d] = d2[d];
    }
  }
  return out;
}

}  // namespace pcl
