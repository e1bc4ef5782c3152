#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pcl/abx.hpp"
#include "pcl/common.hpp"
#include "pcl/features.hpp"
#include "pcl/wav.hpp"

namespace pcl {

// Deterministic speech-like corpus: each phone category is a set of 2-3
// formant-like resonances applied to white noise; each speaker warps the
// resonance frequencies multiplicatively (so across-speaker comparisons are
// strictly harder) and jitters the gain.

struct SynthSpec {
  int num_phones = 6;
  int num_speakers = 5;
  int num_utterances = 100;
  double target_utterance_s = 2.0;
  double min_phone_s = 0.06;
  double max_phone_s = 0.20;
  int sample_rate = 16000;
  std::uint64_t seed = 1;

  void validate() const {
    if (num_phones < 2) throw ParameterError("synth: need at least 2 phone categories");
    if (num_speakers < 1) throw ParameterError("synth: need at least 1 speaker");
    if (num_utterances < 1) throw ParameterError("synth: need at least 1 utterance");
    if (sample_rate < 8000) throw ParameterError("synth: sample rate below 8 kHz");
    if (min_phone_s <= 0 || max_phone_s < min_phone_s)
      throw ParameterError("synth: bad phone duration range");
  }
};

struct AlignedPhone {
  std::string phone;
  double onset = 0.0, offset = 0.0;
};

struct SynthUtterance {
  std::string utterance_id;
  std::string speaker_id;
  std::vector<AlignedPhone> alignment;
  std::size_t num_samples = 0;
};

struct SynthResult {
  CorpusManifest manifest;
  std::vector<AbxItem> items;
  std::vector<SynthUtterance> ground_truth;
  std::vector<std::string> warnings;
};

namespace detail {

inline double frac(double x) { return x - std::floor(x); }

// pairwise-distinct formant templates spread over the speech band
inline std::vector<double> phone_template(int phone, int /*num_phones*/) {
  const double g = 0.6180339887498949;
  std::vector<double> f;
  f.push_back(280.0 + 460.0 * frac(0.13 + phone * g));
  f.push_back(900.0 + 1700.0 * frac(0.41 + phone * g));
  if (phone % 2 == 1) f.push_back(2600.0 + 1100.0 * frac(0.77 + phone * g));
  return f;
}

inline double speaker_warp(int speaker, int num_speakers) {
  if (num_speakers == 1) return 1.0;
  return 0.82 + 0.36 * double(speaker) / double(num_speakers - 1);
}

// two-pole resonator bank over shared white noise, RMS-normalized
inline std::vector<float> render_phone(const std::vector<double>& formants, double warp,
                                       int num_samples, int sample_rate, double gain,
                                       CounterRng& rng) {
  std::vector<double> noise(static_cast<std::size_t>(num_samples));
  for (auto& v : noise) v = rng.next_gaussian();
  std::vector<double> mix(static_cast<std::size_t>(num_samples), 0.0);
  double weight = 1.0;
  for (double f : formants) {
    const double fw = std::min(f * warp, 0.45 * sample_rate);
    const double bw = 80.0 + 0.05 * fw;
    const double r = std::exp(-3.141592653589793 * bw / sample_rate);
    const double theta = 2.0 * 3.141592653589793 * fw / sample_rate;
    const double a1 = 2.0 * r * std::cos(theta), a2 = -r * r;
    double y1 = 0.0, y2 = 0.0;
    for (int n = 0; n < num_samples; ++n) {
      const double y = noise[std::size_t(n)] + a1 * y1 + a2 * y2;
      y2 = y1;
      y1 = y;
      mix[std::size_t(n)] += weight * y;
    }
    weight *= 0.6;
  }
  double rms = 0.0;
  for (double v : mix) rms += v * v;
  rms = std::sqrt(rms / num_samples);
  const double scale = rms > 0 ? gain / rms : 0.0;
  std::vector<float> out(static_cast<std::size_t>(num_samples));
  for (int n = 0; n < num_samples; ++n) {
    double v = mix[std::size_t(n)] * scale;
    v = std::clamp(v, -0.99, 0.99);
    out[std::size_t(n)] = float(v);
  }
  return out;
}

}  // namespace detail

inline std::string synth_phone_name(int p) { return "ph" + std::to_string(p); }
inline std::string synth_speaker_name(int s) { return "spk" + std::to_string(s); }

// Renders one utterance: random phone sequence tiling ~target seconds, 10 ms
// linear cross-fades across boundaries. Per-utterance RNG streams keep the
// output byte-identical regardless of generation order.
inline std::pair<std::vector<float>, SynthUtterance> synth_utterance(const SynthSpec& spec,
                                                                     int index) {
  CounterRng rng(spec.seed, streams::synth, std::uint64_t(index));
  const int speaker = index % spec.num_speakers;
  const double warp = detail::speaker_warp(speaker, spec.num_speakers);
  const double mean_dur = 0.5 * (spec.min_phone_s + spec.max_phone_s);
  const int num_phones = std::max(3, int(std::lround(spec.target_utterance_s / mean_dur)));
  const double gain = 0.1 * (0.9 + 0.2 * rng.next_double());

  SynthUtterance utt;
  char id[32];
  std::snprintf(id, sizeof id, "u%04d_%s", index, synth_speaker_name(speaker).c_str());
  utt.utterance_id = id;
  utt.speaker_id = synth_speaker_name(speaker);

  std::vector<int> sequence(static_cast<std::size_t>(num_phones));
  std::vector<int> durations(static_cast<std::size_t>(num_phones));
  std::size_t total = 0;
  for (int i = 0; i < num_phones; ++i) {
    sequence[std::size_t(i)] = int(rng.next_below(std::uint64_t(spec.num_phones)));
    const double d = rng.uniform(spec.min_phone_s, spec.max_phone_s);
    durations[std::size_t(i)] = int(std::lround(d * spec.sample_rate));
    total += std::size_t(durations[std::size_t(i)]);
  }

  const int fade = spec.sample_rate / 100;  // 10 ms
  std::vector<float> wav(total, 0.0f);
  std::size_t pos = 0;
  for (int i = 0; i < num_phones; ++i) {
    const int dur = durations[std::size_t(i)];
    const int lead = i > 0 ? fade / 2 : 0;                    // extends into previous phone
    const int tail = i + 1 < num_phones ? fade - fade / 2 : 0;  // extends into next phone
    const int seg_len = lead + dur + tail;
    auto seg = detail::render_phone(detail::phone_template(sequence[std::size_t(i)],
                                                           spec.num_phones),
                                    warp, seg_len, spec.sample_rate, gain, rng);
    const std::ptrdiff_t seg_start = std::ptrdiff_t(pos) - lead;
    for (int n = 0; n < seg_len; ++n) {
      const std::ptrdiff_t at = seg_start + n;
      if (at < 0 || std::size_t(at) >= wav.size()) continue;
      double env = 1.0;
      if (i > 0 && n < fade) env = double(n) / fade;
      const int from_end = seg_len - 1 - n;
      if (i + 1 < num_phones && from_end < fade) env = std::min(env, double(from_end) / fade);
      wav[std::size_t(at)] += float(env) * seg[std::size_t(n)];
    }
    utt.alignment.push_back({synth_phone_name(sequence[std::size_t(i)]),
                             double(pos) / spec.sample_rate,
                             double(pos + std::size_t(dur)) / spec.sample_rate});
    pos += std::size_t(dur);
  }
  utt.num_samples = wav.size();
  return {std::move(wav), std::move(utt)};
}

// Emits WAVs, manifest CSV, item file (interior tokens with their true
// triphone contexts) and the alignment ground truth.
inline SynthResult generate_corpus(const SynthSpec& spec, const std::string& out_dir) {
  spec.validate();
  SynthResult result;
  if (spec.num_speakers < 2)
    result.warnings.push_back(
        "corpus has fewer than 2 speakers; the across-speaker ABX condition will be empty");
  std::filesystem::create_directories(out_dir + "/wav");

  std::vector<std::pair<std::vector<float>, SynthUtterance>> rendered(
      static_cast<std::size_t>(spec.num_utterances));
  parallel_for(
      spec.num_utterances,
      [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t i = lo; i < hi; ++i) rendered[std::size_t(i)] = synth_utterance(spec, int(i));
      },
      4);

  for (auto& [wav, utt] : rendered) {
    const std::string rel = "wav/" + utt.utterance_id + ".wav";
    write_wav(out_dir + "/" + rel, wav, spec.sample_rate);
    result.manifest.entries.push_back(
        {rel, utt.speaker_id, double(wav.size()) / spec.sample_rate});
    for (std::size_t i = 1; i + 1 < utt.alignment.size(); ++i) {
      AbxItem item;
      item.utterance = utt.utterance_id;
      item.onset = utt.alignment[i].onset;
      item.offset = utt.alignment[i].offset;
      item.phone = utt.alignment[i].phone;
      item.prev = utt.alignment[i - 1].phone;
      item.next = utt.alignment[i + 1].phone;
      item.speaker = utt.speaker_id;
      result.items.push_back(std::move(item));
    }
    result.ground_truth.push_back(utt);
  }
  result.manifest.base_dir = out_dir;
  write_manifest(out_dir + "/manifest.csv", result.manifest);
  write_items(out_dir + "/items.item", result.items);

  std::ofstream align(out_dir + "/alignment.csv");
  if (!align) throw IoError("cannot create " + out_dir + "/alignment.csv");
  align << "utterance,speaker,phone,onset,offset\n";
  char buf[64];
  for (const auto& utt : result.ground_truth)
    for (const auto& a : utt.alignment) {
      std::snprintf(buf, sizeof buf, "%.6f,%.6f", a.onset, a.offset);
      align << utt.utterance_id << ',' << utt.speaker_id << ',' << a.phone << ',' << buf << '\n';
    }
  return result;
}

}  // namespace pcl
