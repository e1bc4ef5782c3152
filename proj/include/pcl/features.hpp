#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pcl/common.hpp"
#include "pcl/mfcc.hpp"

namespace pcl {

inline constexpr int kSampleFrames = 200;  // 2 s at a 10 ms shift

struct TrainingSample {
  std::vector<float> frames;  // sample_frames x dim, zero-padded
  std::vector<float> mask;    // sample_frames, 1 = real frame
  std::string source_id;
  int chunk_index = 0;
  int valid_frames = 0;
};

// Consecutive non-overlapping windows; the final remainder is zero-padded and
// masked so that no frame of a small corpus is discarded.
inline std::vector<TrainingSample> chunk(const FeatureSequence& f,
                                         int sample_frames = kSampleFrames) {
  std::vector<TrainingSample> out;
  const int T = f.num_frames, D = f.dim;
  for (int begin = 0; begin < T; begin += sample_frames) {
    TrainingSample s;
    s.source_id = f.source_id;
    s.chunk_index = begin / sample_frames;
    s.valid_frames = std::min(sample_frames, T - begin);
    s.frames.assign(std::size_t(sample_frames) * D, 0.0f);
    s.mask.assign(std::size_t(sample_frames), 0.0f);
    for (int t = 0; t < s.valid_frames; ++t) {
      std::copy_n(f.row(begin + t), D, s.frames.data() + std::size_t(t) * D);
      s.mask[std::size_t(t)] = 1.0f;
    }
    out.push_back(std::move(s));
  }
  return out;
}

struct NormStats {
  std::vector<double> mean;
  std::vector<double> variance;

  int dim() const { return int(mean.size()); }
};

inline NormStats compute_norm_stats(const std::vector<const FeatureSequence*>& seqs) {
  if (seqs.empty()) throw ParameterError("compute_norm_stats: no sequences");
  const int D = seqs[0]->dim;
  NormStats st;
  st.mean.assign(std::size_t(D), 0.0);
  st.variance.assign(std::size_t(D), 0.0);
  double n = 0.0;
  for (const auto* f : seqs) {
    if (f->dim != D) throw DimensionError("compute_norm_stats: mixed dimensions");
    for (int t = 0; t < f->num_frames; ++t) {
      const float* row = f->row(t);
      for (int d = 0; d < D; ++d) st.mean[std::size_t(d)] += row[d];
    }
    n += f->num_frames;
  }
  for (int d = 0; d < D; ++d) st.mean[std::size_t(d)] /= n;
  for (const auto* f : seqs)
    for (int t = 0; t < f->num_frames; ++t) {
      const float* row = f->row(t);
      for (int d = 0; d < D; ++d) {
        const double c = row[d] - st.mean[std::size_t(d)];
        st.variance[std::size_t(d)] += c * c;
      }
    }
  for (int d = 0; d < D; ++d) st.variance[std::size_t(d)] /= n;
  return st;
}

// (x - mean) / sqrt(variance + 1e-8), in place
inline void normalize(FeatureSequence& f, const NormStats& st) {
  if (st.dim() != f.dim)
    throw ParameterError("normalize: stats dimension " + std::to_string(st.dim()) +
                         " does not match feature dimension " + std::to_string(f.dim));
  for (int d = 0; d < f.dim; ++d)
    if (st.variance[std::size_t(d)] < 0.0)
      throw ParameterError("normalize: negative variance in stats");
  std::vector<float> inv(static_cast<std::size_t>(f.dim)), mu(std::size_t(f.dim));
  for (int d = 0; d < f.dim; ++d) {
    inv[std::size_t(d)] = float(1.0 / std::sqrt(st.variance[std::size_t(d)] + 1e-8));
    mu[std::size_t(d)] = float(st.mean[std::size_t(d)]);
  }
  for (int t = 0; t < f.num_frames; ++t) {
    float* row = f.row(t);
    for (int d = 0; d < f.dim; ++d) row[d] = (row[d] - mu[std::size_t(d)]) * inv[std::size_t(d)];
  }
}

inline void save_norm_stats(const std::string& path, const NormStats& st) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot create " + path);
  out << "dim,mean,variance\n";
  char buf[96];
  for (int d = 0; d < st.dim(); ++d) {
    std::snprintf(buf, sizeof buf, "%d,%.12g,%.12g\n", d, st.mean[std::size_t(d)],
                  st.variance[std::size_t(d)]);
    out << buf;
  }
}

inline NormStats load_norm_stats(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  std::getline(in, line);  // header
  NormStats st;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string dim_s, mean_s, var_s;
    if (!std::getline(ss, dim_s, ',') || !std::getline(ss, mean_s, ',') ||
        !std::getline(ss, var_s))
      throw ParseError(path + ": malformed stats line: " + line);
    st.mean.push_back(std::stod(mean_s));
    st.variance.push_back(std::stod(var_s));
  }
  return st;
}

// ---------------------------------------------------------------------------
// PCF1 archive: magic, dimension, frame-count table, utterance/speaker string
// table, then 32-bit float frames per utterance in header order.
// ---------------------------------------------------------------------------

inline void write_feature_archive(const std::string& path,
                                  const std::vector<FeatureSequence>& seqs) {
  if (seqs.empty()) throw ParameterError("write_feature_archive: no sequences");
  const int D = seqs[0].dim;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot create " + path);
  out.write("PCF1", 4);
  write_u32(out, std::uint32_t(D));
  write_u32(out, std::uint32_t(seqs.size()));
  for (const auto& f : seqs) {
    if (f.dim != D) throw DimensionError("write_feature_archive: mixed dimensions");
    write_u32(out, std::uint32_t(f.num_frames));
  }
  for (const auto& f : seqs) {
    write_string(out, f.source_id);
    write_string(out, f.speaker_id);
  }
  for (const auto& f : seqs) write_f32_array(out, f.frames.data(), f.frames.size());
  if (!out) throw IoError("write failed: " + path);
}

inline std::vector<FeatureSequence> read_feature_archive(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[4];
  read_bytes(in, magic, 4);
  if (std::string(magic, 4) != "PCF1") throw FormatError(path + ": bad magic, expected PCF1");
  const int D = int(read_u32(in));
  const std::uint32_t count = read_u32(in);
  std::vector<FeatureSequence> seqs(count);
  for (auto& f : seqs) {
    f.dim = D;
    f.num_frames = int(read_u32(in));
  }
  for (auto& f : seqs) {
    f.source_id = read_string(in);
    f.speaker_id = read_string(in);
  }
  for (auto& f : seqs) {
    f.frames.resize(std::size_t(f.num_frames) * D);
    read_f32_array(in, f.frames.data(), f.frames.size());
  }
  return seqs;
}

// ---------------------------------------------------------------------------
// Corpus manifest CSV: path,speaker,duration_s. Paths are relative to the
// manifest's directory so corpora can be moved around.
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::string path;
  std::string speaker_id;
  double duration = 0.0;

  std::string utterance_id() const {
    auto slash = path.find_last_of('/');
    std::string base = slash == std::string::npos ? path : path.substr(slash + 1);
    auto dot = base.find_last_of('.');
    return dot == std::string::npos ? base : base.substr(0, dot);
  }
};

struct CorpusManifest {
  std::vector<ManifestEntry> entries;
  std::string base_dir;  // directory of the manifest file

  std::string resolve(const ManifestEntry& e) const {
    if (!e.path.empty() && e.path[0] == '/') return e.path;
    return base_dir.empty() ? e.path : base_dir + "/" + e.path;
  }
};

inline void write_manifest(const std::string& path, const CorpusManifest& m) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot create " + path);
  out << "path,speaker,duration_s\n";
  char buf[64];
  for (const auto& e : m.entries) {
    std::snprintf(buf, sizeof buf, "%.6f", e.duration);
    out << e.path << ',' << e.speaker_id << ',' << buf << '\n';
  }
}

inline CorpusManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  CorpusManifest m;
  auto slash = path.find_last_of('/');
  m.base_dir = slash == std::string::npos ? "" : path.substr(0, slash);
  std::string line;
  std::getline(in, line);
  if (line != "path,speaker,duration_s")
    throw ParseError(path + ": unexpected manifest header: " + line);
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    ManifestEntry e;
    std::string dur;
    if (!std::getline(ss, e.path, ',') || !std::getline(ss, e.speaker_id, ',') ||
        !std::getline(ss, dur))
      throw ParseError(path + ":" + std::to_string(line_no) + ": malformed manifest row");
    if (e.speaker_id.empty())
      throw ParseError(path + ":" + std::to_string(line_no) + ": empty speaker id");
    e.duration = std::stod(dur);
    if (e.duration <= 0)
      throw ParseError(path + ":" + std::to_string(line_no) + ": non-positive duration");
    m.entries.push_back(std::move(e));
  }
  return m;
}

}  // namespace pcl
