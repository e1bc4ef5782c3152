#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "pcl/common.hpp"

namespace pcl {

struct WaveBuffer {
  std::vector<float> samples;  // scaled into [-1, 1)
  int sample_rate = 0;
  std::string source_id;
  std::string speaker_id;

  double duration() const { return double(samples.size()) / sample_rate; }
};

// RIFF/WAVE reader restricted to PCM 16-bit mono, which is all the corpus
// tooling emits. Rejections name the offending header field.
inline WaveBuffer read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);

  char tag[4];
  read_bytes(in, tag, 4);
  if (std::string(tag, 4) != "RIFF") throw FormatError(path + ": missing RIFF magic");
  read_u32(in);  // riff payload size; not trusted, we read by chunk
  read_bytes(in, tag, 4);
  if (std::string(tag, 4) != "WAVE") throw FormatError(path + ": RIFF form is not WAVE");

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  WaveBuffer w;
  while (in.peek() != EOF) {
    char id[4];
    in.read(id, 4);
    if (in.gcount() == 0) break;
    if (in.gcount() != 4) throw FormatError(path + ": truncated chunk header");
    std::uint32_t size = read_u32(in);
    std::string cid(id, 4);
    if (cid == "fmt ") {
      if (size < 16) throw FormatError(path + ": fmt chunk too short");
      std::vector<char> buf(size);
      read_bytes(in, buf.data(), size);
      auto u16 = [&](std::size_t o) {
        return std::uint16_t(std::uint8_t(buf[o])) | std::uint16_t(std::uint8_t(buf[o + 1])) << 8;
      };
      auto u32at = [&](std::size_t o) {
        return std::uint32_t(u16(o)) | std::uint32_t(u16(o + 2)) << 16;
      };
      format = u16(0);
      channels = u16(2);
      rate = u32at(4);
      bits = u16(14);
      have_fmt = true;
    } else if (cid == "data") {
      if (!have_fmt) throw FormatError(path + ": data chunk precedes fmt chunk");
      if (format != 1) throw FormatError(path + ": AudioFormat=" + std::to_string(format) +
                                         " unsupported (PCM only)");
      if (channels != 1) throw FormatError(path + ": NumChannels=" + std::to_string(channels) +
                                           " unsupported (mono only)");
      if (bits != 16) throw FormatError(path + ": BitsPerSample=" + std::to_string(bits) +
                                        " unsupported (16-bit only)");
      const std::size_t n = size / 2;
      std::vector<char> raw(size);
      read_bytes(in, raw.data(), size);
      w.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const std::int16_t s = std::int16_t(std::uint16_t(std::uint8_t(raw[2 * i])) |
                                            std::uint16_t(std::uint8_t(raw[2 * i + 1])) << 8);
        w.samples[i] = float(s) / 32768.0f;
      }
      w.sample_rate = int(rate);
      return w;
    } else {
      in.seekg(std::streamoff(size + (size & 1)), std::ios::cur);
    }
  }
  throw FormatError(path + ": no data chunk");
}

inline void write_wav(const std::string& path, const std::vector<float>& samples,
                      int sample_rate) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot create " + path);
  const std::uint32_t data_size = std::uint32_t(samples.size() * 2);
  out.write("RIFF", 4);
  write_u32(out, 36 + data_size);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  write_u32(out, 16);
  const std::uint16_t one = 1, sixteen = 16;
  write_bytes(out, &one, 2);  // PCM
  write_bytes(out, &one, 2);  // mono
  write_u32(out, std::uint32_t(sample_rate));
  write_u32(out, std::uint32_t(sample_rate * 2));  // byte rate
  const std::uint16_t block = 2;
  write_bytes(out, &block, 2);
  write_bytes(out, &sixteen, 2);
  out.write("data", 4);
  write_u32(out, data_size);
  std::vector<std::int16_t> pcm(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    double v = double(samples[i]) * 32768.0;
    if (v > 32767.0) v = 32767.0;
    if (v < -32768.0) v = -32768.0;
    pcm[i] = std::int16_t(std::llround(v));
  }
  write_bytes(out, pcm.data(), pcm.size() * 2);
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace pcl
