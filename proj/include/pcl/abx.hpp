#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "pcl/common.hpp"
#include "pcl/dtw.hpp"
#include "pcl/mfcc.hpp"
#include "pcl/pca.hpp"

namespace pcl {

// ---------------------------------------------------------------------------
// Item file: whitespace-separated with header
//   #file onset offset #phone prev-phone next-phone speaker
// ---------------------------------------------------------------------------

struct AbxItem {
  std::string utterance;
  double onset = 0.0, offset = 0.0;
  std::string phone, prev, next, speaker;
};

inline const char* kItemHeader = "#file onset offset #phone prev-phone next-phone speaker";

inline std::vector<AbxItem> parse_items(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line.substr(0, 5) != "#file")
    throw ParseError(path + ": missing item header line");
  std::vector<AbxItem> items;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    AbxItem it;
    if (!(ss >> it.utterance >> it.onset >> it.offset >> it.phone >> it.prev >> it.next >>
          it.speaker))
      throw ParseError(path + ":" + std::to_string(line_no) + ": malformed item line");
    if (it.offset <= it.onset)
      throw ParseError(path + ":" + std::to_string(line_no) + ": offset " +
                       std::to_string(it.offset) + " <= onset " + std::to_string(it.onset));
    if (it.phone.empty() || it.speaker.empty())
      throw ParseError(path + ":" + std::to_string(line_no) + ": empty phone or speaker");
    items.push_back(std::move(it));
  }
  return items;
}

inline void write_items(const std::string& path, const std::vector<AbxItem>& items) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot create " + path);
  out << kItemHeader << '\n';
  char buf[64];
  for (const auto& it : items) {
    std::snprintf(buf, sizeof buf, " %.4f %.4f ", it.onset, it.offset);
    out << it.utterance << buf << it.phone << ' ' << it.prev << ' ' << it.next << ' '
        << it.speaker << '\n';
  }
}

// Frames whose shift-period centers (t + 0.5) * shift fall in [onset,
// offset); at least one frame (the nearest) is always returned.
struct TokenSlice {
  int first_frame = 0;
  int num_frames = 0;
};

inline TokenSlice slice_token(const FeatureSequence& f, const AbxItem& item) {
  const double shift = f.frame_shift;
  const double utt_end = f.num_frames * shift;
  if (item.onset < -1e-9 || item.offset > utt_end + 1e-9)
    throw RangeError("token [" + std::to_string(item.onset) + "," + std::to_string(item.offset) +
                     ") outside utterance " + item.utterance + " of length " +
                     std::to_string(utt_end) + " s");
  // centers in [onset, offset): t in [onset/shift - 0.5, offset/shift - 0.5)
  int lo = int(std::ceil(item.onset / shift - 0.5 - 1e-9));
  int hi = int(std::ceil(item.offset / shift - 0.5 - 1e-9));  // exclusive
  lo = std::max(lo, 0);
  hi = std::min(hi, f.num_frames);
  if (lo >= hi) {
    const double mid = 0.5 * (item.onset + item.offset);
    int nearest = int(std::lround(mid / shift - 0.5));
    nearest = std::clamp(nearest, 0, f.num_frames - 1);
    return {nearest, 1};
  }
  return {lo, hi - lo};
}

// ---------------------------------------------------------------------------
// Cells and scoring
// ---------------------------------------------------------------------------

enum class AbxCondition { within, across };

inline std::string to_string(AbxCondition c) {
  return c == AbxCondition::within ? "within" : "across";
}

struct Token {
  int id = 0;  // global token index (cache key)
  std::vector<float> frames;
  int num_frames = 0;
  int dim = 0;
};

struct TripletCell {
  AbxCondition condition;
  std::string phone_a, phone_b;
  std::string prev, next;
  std::string speaker_ax;  // within: the shared speaker; across: the X speaker
  std::string speaker_b;   // within: same; across: the A/B speaker
  std::vector<int> a_tokens, b_tokens, x_tokens;  // token ids
};

struct CellScore {
  TripletCell cell;
  double score = 0.0;
  std::int64_t n_triplets = 0;
};

struct PairScore {
  std::string condition;
  std::string phone_a, phone_b;  // unordered, a < b
  double score = 0.0;
  std::int64_t n_triplets = 0;
};

struct AbxReport {
  // condition -> error percent; a condition with no scorable cells is absent
  std::map<std::string, double> error_percent;
  std::vector<PairScore> pairs;
  std::int64_t cells_scored = 0;
  std::int64_t cells_skipped = 0;
  std::int64_t tokens = 0;
  std::int64_t triplets = 0;
  std::vector<std::string> warnings;
};

struct AbxOptions {
  FrameMetric metric = FrameMetric::angular;
  bool use_pca = true;
  double pca_variance = 0.95;
  std::int64_t max_pca_frames = 200000;
  std::uint64_t seed = 1;
};

namespace detail {

struct DistanceCache {
  // keyed by unordered token pair; dtw is symmetric so order is irrelevant
  std::unordered_map<std::uint64_t, double> map;

  static std::uint64_t key(int a, int b) {
    if (a > b) std::swap(a, b);
    return (std::uint64_t(std::uint32_t(a)) << 32) | std::uint32_t(b);
  }
};

}  // namespace detail

// Exhaustive triplet scoring of one cell: 1 for d(A,X) < d(B,X), 0.5 for a
// tie; a token never plays A and X simultaneously.
inline CellScore score_cell(const TripletCell& cell, const std::vector<Token>& tokens,
                            detail::DistanceCache& cache, FrameMetric metric) {
  auto distance = [&](int ta, int tx) {
    const auto k = detail::DistanceCache::key(ta, tx);
    auto it = cache.map.find(k);
    if (it != cache.map.end()) return it->second;
    const Token& a = tokens[std::size_t(std::min(ta, tx))];
    const Token& b = tokens[std::size_t(std::max(ta, tx))];
    const double d = dtw_distance(a.frames.data(), a.num_frames, b.frames.data(), b.num_frames,
                                  a.dim, metric);
    cache.map.emplace(k, d);
    return d;
  };
  CellScore out;
  out.cell = cell;
  double acc = 0.0;
  std::int64_t n = 0;
  for (int x : cell.x_tokens)
    for (int a : cell.a_tokens) {
      if (a == x) continue;
      const double dax = distance(a, x);
      for (int b : cell.b_tokens) {
        const double dbx = distance(b, x);
        acc += dax < dbx ? 1.0 : (dax == dbx ? 0.5 : 0.0);
        ++n;
      }
    }
  out.n_triplets = n;
  out.score = n > 0 ? acc / double(n) : 0.0;
  return out;
}

// Aggregation order: symmetrize ordered phone pairs per (speakers, context)
// cell, then average over contexts, then over speakers (within) or ordered
// speaker pairs (across), then over phone pairs. Error % = 100 * (1 - score).
inline AbxReport aggregate(const std::vector<CellScore>& scores) {
  AbxReport report;
  for (AbxCondition cond : {AbxCondition::across, AbxCondition::within}) {
    // pair{a,b} -> speaker key -> context key -> list of ordered-cell scores
    std::map<std::pair<std::string, std::string>,
             std::map<std::string, std::map<std::string, std::vector<double>>>>
        grouped;
    std::map<std::pair<std::string, std::string>, std::int64_t> pair_triplets;
    for (const auto& s : scores) {
      if (s.cell.condition != cond || s.n_triplets == 0) continue;
      auto pair = std::minmax(s.cell.phone_a, s.cell.phone_b);
      const std::string spk = s.cell.speaker_b + "\x1f" + s.cell.speaker_ax;
      const std::string ctx = s.cell.prev + "\x1f" + s.cell.next;
      grouped[pair][spk][ctx].push_back(s.score);
      pair_triplets[pair] += s.n_triplets;
    }
    if (grouped.empty()) continue;
    double cond_acc = 0.0;
    for (const auto& [pair, by_speaker] : grouped) {
      double pair_acc = 0.0;
      for (const auto& [spk, by_ctx] : by_speaker) {
        double spk_acc = 0.0;
        for (const auto& [ctx, cell_scores] : by_ctx) {
          double s = 0.0;  // symmetrized over the (a,b)/(b,a) ordered cells
          for (double v : cell_scores) s += v;
          spk_acc += s / double(cell_scores.size());
        }
        pair_acc += spk_acc / double(by_ctx.size());
      }
      const double pair_score = pair_acc / double(by_speaker.size());
      cond_acc += pair_score;
      report.pairs.push_back(
          {to_string(cond), pair.first, pair.second, pair_score, pair_triplets[pair]});
    }
    report.error_percent[to_string(cond)] = 100.0 * (1.0 - cond_acc / double(grouped.size()));
  }
  return report;
}

// Build all cells from items. Within: one speaker supplies A, B and X.
// Across: A and B come from one speaker, X from a different one.
inline std::vector<TripletCell> build_cells(const std::vector<AbxItem>& items) {
  // (speaker, prev, next, phone) -> token indices
  std::map<std::string, std::vector<int>> groups;
  auto gkey = [](const std::string& spk, const std::string& prev, const std::string& next,
                 const std::string& phone) {
    return spk + "\x1f" + prev + "\x1f" + next + "\x1f" + phone;
  };
  std::map<std::string, std::map<std::string, std::vector<std::string>>> phones_by_ctx_spk;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& it = items[i];
    groups[gkey(it.speaker, it.prev, it.next, it.phone)].push_back(int(i));
    const std::string ctx = it.prev + "\x1f" + it.next;
    auto& phones = phones_by_ctx_spk[ctx][it.speaker];
    if (std::find(phones.begin(), phones.end(), it.phone) == phones.end())
      phones.push_back(it.phone);
  }
  for (auto& [ctx, by_spk] : phones_by_ctx_spk)
    for (auto& [spk, phones] : by_spk) std::sort(phones.begin(), phones.end());

  std::vector<TripletCell> cells;
  for (const auto& [ctx, by_spk] : phones_by_ctx_spk) {
    const auto sep = ctx.find('\x1f');
    const std::string prev = ctx.substr(0, sep), next = ctx.substr(sep + 1);
    for (const auto& [spk, phones] : by_spk) {
      // within-speaker cells: ordered pairs (a, b)
      for (const auto& a : phones)
        for (const auto& b : phones) {
          if (a == b) continue;
          TripletCell cell;
          cell.condition = AbxCondition::within;
          cell.phone_a = a;
          cell.phone_b = b;
          cell.prev = prev;
          cell.next = next;
          cell.speaker_ax = spk;
          cell.speaker_b = spk;
          cell.a_tokens = groups.at(gkey(spk, prev, next, a));
          cell.b_tokens = groups.at(gkey(spk, prev, next, b));
          cell.x_tokens = cell.a_tokens;
          if (cell.a_tokens.size() >= 2 && !cell.b_tokens.empty()) cells.push_back(cell);
        }
      // across-speaker cells: X from another speaker
      for (const auto& [spk_x, phones_x] : by_spk) {
        if (spk_x == spk) continue;
        for (const auto& a : phones)
          for (const auto& b : phones) {
            if (a == b) continue;
            if (std::find(phones_x.begin(), phones_x.end(), a) == phones_x.end()) continue;
            TripletCell cell;
            cell.condition = AbxCondition::across;
            cell.phone_a = a;
            cell.phone_b = b;
            cell.prev = prev;
            cell.next = next;
            cell.speaker_b = spk;
            cell.speaker_ax = spk_x;
            cell.a_tokens = groups.at(gkey(spk, prev, next, a));
            cell.b_tokens = groups.at(gkey(spk, prev, next, b));
            cell.x_tokens = groups.at(gkey(spk_x, prev, next, a));
            if (!cell.a_tokens.empty() && !cell.b_tokens.empty() && !cell.x_tokens.empty())
              cells.push_back(cell);
          }
      }
    }
  }
  return cells;
}

// Full evaluation: optional PCA (fit on a seeded subsample of the supplied
// latents), token slicing, cell scoring with a shared distance cache.
// Distances are computed in parallel; scoring and aggregation stay
// sequential, so the result is bit-identical at any thread count.
inline AbxReport run_abx(const std::vector<FeatureSequence>& latents,
                         const std::vector<AbxItem>& items, const AbxOptions& opt) {
  AbxReport report;
  if (items.empty()) {
    report.warnings.push_back("empty item list; nothing to score");
    return report;
  }
  std::map<std::string, const FeatureSequence*> by_utt;
  for (const auto& f : latents) by_utt[f.source_id] = &f;

  const int dim = latents.empty() ? 0 : latents[0].dim;
  PcaTransform pca;
  std::vector<FeatureSequence> projected;
  const std::vector<FeatureSequence>* source = &latents;
  if (opt.use_pca) {
    std::int64_t total = 0;
    for (const auto& f : latents) total += f.num_frames;
    std::vector<float> sample;
    std::int64_t n_fit = std::min<std::int64_t>(total, opt.max_pca_frames);
    sample.reserve(std::size_t(n_fit) * dim);
    if (total <= opt.max_pca_frames) {
      for (const auto& f : latents) sample.insert(sample.end(), f.frames.begin(), f.frames.end());
    } else {
      // seeded uniform subsample over the concatenated frame index space
      CounterRng rng(opt.seed, streams::pca);
      std::vector<std::int64_t> picks(static_cast<std::size_t>(n_fit));
      for (auto& p : picks) p = std::int64_t(rng.next_below(std::uint64_t(total)));
      std::sort(picks.begin(), picks.end());
      std::size_t seq = 0;
      std::int64_t base = 0;
      for (std::int64_t p : picks) {
        while (p >= base + latents[seq].num_frames) {
          base += latents[seq].num_frames;
          ++seq;
        }
        const float* row = latents[seq].row(int(p - base));
        sample.insert(sample.end(), row, row + dim);
      }
      n_fit = std::int64_t(sample.size()) / dim;
    }
    pca = fit_pca(sample.data(), n_fit, dim, opt.pca_variance);
    projected.reserve(latents.size());
    for (const auto& f : latents) projected.push_back(apply_pca(pca, f));
    source = &projected;
    by_utt.clear();
    for (const auto& f : projected) by_utt[f.source_id] = &f;
  }

  std::vector<Token> tokens(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto it = by_utt.find(items[i].utterance);
    if (it == by_utt.end())
      throw RangeError("item references unknown utterance " + items[i].utterance);
    const FeatureSequence& f = *it->second;
    const TokenSlice slice = slice_token(f, items[i]);
    Token& tok = tokens[i];
    tok.id = int(i);
    tok.dim = f.dim;
    tok.num_frames = slice.num_frames;
    tok.frames.assign(f.row(slice.first_frame),
                      f.row(slice.first_frame) + std::size_t(slice.num_frames) * f.dim);
  }
  report.tokens = std::int64_t(tokens.size());

  auto cells = build_cells(items);

  // distance pre-pass: dedup all pairs used by any cell, compute in parallel
  std::vector<std::uint64_t> pair_keys;
  for (const auto& cell : cells) {
    for (int x : cell.x_tokens) {
      for (int a : cell.a_tokens)
        if (a != x) pair_keys.push_back(detail::DistanceCache::key(a, x));
      for (int b : cell.b_tokens) pair_keys.push_back(detail::DistanceCache::key(b, x));
    }
  }
  std::sort(pair_keys.begin(), pair_keys.end());
  pair_keys.erase(std::unique(pair_keys.begin(), pair_keys.end()), pair_keys.end());
  std::vector<double> distances(pair_keys.size());
  parallel_for(
      std::int64_t(pair_keys.size()),
      [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t i = lo; i < hi; ++i) {
          const int a = int(pair_keys[std::size_t(i)] >> 32);
          const int b = int(pair_keys[std::size_t(i)] & 0xffffffffu);
          distances[std::size_t(i)] =
              dtw_distance(tokens[std::size_t(a)].frames.data(), tokens[std::size_t(a)].num_frames,
                           tokens[std::size_t(b)].frames.data(), tokens[std::size_t(b)].num_frames,
                           tokens[std::size_t(a)].dim, opt.metric);
        }
      },
      16);
  detail::DistanceCache cache;
  cache.map.reserve(pair_keys.size() * 2);
  for (std::size_t i = 0; i < pair_keys.size(); ++i) cache.map.emplace(pair_keys[i], distances[i]);

  std::vector<CellScore> scored;
  for (const auto& cell : cells) {
    auto s = score_cell(cell, tokens, cache, opt.metric);
    if (s.n_triplets == 0) {
      ++report.cells_skipped;
      continue;
    }
    ++report.cells_scored;
    report.triplets += s.n_triplets;
    scored.push_back(std::move(s));
  }
  auto agg = aggregate(scored);
  report.error_percent = std::move(agg.error_percent);
  report.pairs = std::move(agg.pairs);
  if (report.error_percent.count("across") == 0)
    report.warnings.push_back("no scorable across-speaker cells; condition absent");
  if (report.error_percent.count("within") == 0)
    report.warnings.push_back("no scorable within-speaker cells; condition absent");
  return report;
}

// ---------------------------------------------------------------------------
// Report CSV: per-pair rows, then a summary block shaped like the
// two-condition comparison tables.
// ---------------------------------------------------------------------------

inline void write_abx_report(const std::string& path, const AbxReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot create " + path);
  out << "condition,phone_a,phone_b,score,n_triplets\n";
  char buf[64];
  for (const auto& p : report.pairs) {
    std::snprintf(buf, sizeof buf, "%.6f", p.score);
    out << p.condition << ',' << p.phone_a << ',' << p.phone_b << ',' << buf << ','
        << p.n_triplets << '\n';
  }
  out << "# summary\n";
  out << "condition,error_percent\n";
  for (const auto& [cond, err] : report.error_percent) {
    std::snprintf(buf, sizeof buf, "%.6f", err);
    out << cond << ',' << buf << '\n';
  }
}

inline std::map<std::string, double> read_abx_summary(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  bool in_summary = false;
  std::map<std::string, double> out;
  while (std::getline(in, line)) {
    if (line == "# summary") {
      in_summary = true;
      std::getline(in, line);  // column header
      continue;
    }
    if (!in_summary || line.empty()) continue;
    auto comma = line.find(',');
    if (comma == std::string::npos) throw ParseError(path + ": malformed summary row: " + line);
    out[line.substr(0, comma)] = std::stod(line.substr(comma + 1));
  }
  if (out.empty()) throw ParseError(path + ": no summary block found");
  return out;
}

}  // namespace pcl
