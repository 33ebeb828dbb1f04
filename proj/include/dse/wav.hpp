// Copyright 2026 The dse authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef DSE_WAV_HPP
#define DSE_WAV_HPP

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "dse/common.hpp"
#include "dse/signal.hpp"

namespace dse {

enum class WavFormat { pcm16, float32 };

namespace detail {

inline std::uint32_t fourcc(const char* s) {
  return std::uint32_t(std::uint8_t(s[0])) | std::uint32_t(std::uint8_t(s[1])) << 8 |
         std::uint32_t(std::uint8_t(s[2])) << 16 | std::uint32_t(std::uint8_t(s[3])) << 24;
}

template <typename T>
void put_le(std::string& out, T v) {
  std::uint64_t bits = 0;
  std::memcpy(&bits, &v, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(char((bits >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const std::string& buf, std::size_t off) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= std::uint64_t(std::uint8_t(buf[off + i])) << (8 * i);
  T out;
  std::memcpy(&out, &v, sizeof(T));
  return out;
}

}  // namespace detail

// RIFF/WAVE reader. Accepts 16-bit signed PCM and 32-bit IEEE float, mono or
// stereo; everything else is rejected with a message naming the offender.
inline MultiChannelWaveform read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_wav: cannot open '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 44) throw IoError("read_wav: '" + path + "' too small to be a WAV file");

  using detail::fourcc;
  using detail::get_le;
  if (get_le<std::uint32_t>(buf, 0) != fourcc("RIFF") || get_le<std::uint32_t>(buf, 8) != fourcc("WAVE"))
    throw IoError("read_wav: '" + path + "' is not a RIFF/WAVE file");

  int channels = 0, sample_rate = 0, bits = 0, format = 0;
  std::size_t data_off = 0, data_len = 0;
  bool have_fmt = false;

  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const std::uint32_t id = get_le<std::uint32_t>(buf, pos);
    const std::uint32_t len = get_le<std::uint32_t>(buf, pos + 4);
    const std::size_t body = pos + 8;
    if (id == fourcc("fmt ")) {
      if (len < 16 || body + 16 > buf.size()) throw IoError("read_wav: malformed fmt chunk");
      format = get_le<std::uint16_t>(buf, body);
      channels = get_le<std::uint16_t>(buf, body + 2);
      sample_rate = static_cast<int>(get_le<std::uint32_t>(buf, body + 4));
      bits = get_le<std::uint16_t>(buf, body + 14);
      have_fmt = true;
    } else if (id == fourcc("data")) {
      data_off = body;
      data_len = std::min<std::size_t>(len, buf.size() - body);
    }
    pos = body + len + (len & 1);  // chunks are word-aligned
  }

  if (!have_fmt || data_off == 0) throw IoError("read_wav: missing fmt or data chunk in '" + path + "'");
  if (format != 1 && format != 3)
    throw IoError("read_wav: unsupported encoding tag " + std::to_string(format) +
                  " (only PCM=1 and IEEE float=3 are handled)");
  if (format == 1 && bits != 16)
    throw IoError("read_wav: PCM must be 16-bit, got " + std::to_string(bits) + "-bit");
  if (format == 3 && bits != 32)
    throw IoError("read_wav: IEEE float must be 32-bit, got " + std::to_string(bits) + "-bit");
  if (channels != 1 && channels != 2)
    throw IoError("read_wav: expected mono or stereo, got " + std::to_string(channels) + " channels");
  if (sample_rate <= 0) throw IoError("read_wav: bad sample rate");

  const std::size_t bytes_per = bits / 8;
  const std::size_t frames = data_len / (bytes_per * channels);

  std::vector<Waveform> ch(channels);
  for (auto& c : ch) {
    c.sample_rate = sample_rate;
    c.samples.resize(frames);
  }
  for (std::size_t i = 0; i < frames; ++i) {
    for (int c = 0; c < channels; ++c) {
      const std::size_t off = data_off + (i * channels + c) * bytes_per;
      if (format == 1) {
        ch[c].samples[i] = get_le<std::int16_t>(buf, off) / 32767.0;
      } else {
        ch[c].samples[i] = get_le<float>(buf, off);
      }
    }
  }
  return MultiChannelWaveform(std::move(ch));
}

inline void write_wav(const std::string& path, const MultiChannelWaveform& audio,
                      WavFormat fmt = WavFormat::float32) {
  if (audio.channels.empty() || audio.channels.size() > 2)
    throw IoError("write_wav: need 1 or 2 channels");
  audio.validate();

  const int channels = static_cast<int>(audio.channels.size());
  const int rate = audio.sample_rate();
  const std::size_t frames = audio.size();
  const int bits = fmt == WavFormat::pcm16 ? 16 : 32;
  const int bytes_per = bits / 8;
  const std::uint32_t data_len = std::uint32_t(frames * channels * bytes_per);

  std::string out;
  using detail::put_le;
  out += "RIFF";
  const bool fact = fmt == WavFormat::float32;
  put_le<std::uint32_t>(out, 4 + (8 + 16) + (fact ? 8 + 4 : 0) + 8 + data_len);
  out += "WAVE";
  out += "fmt ";
  put_le<std::uint32_t>(out, 16);
  put_le<std::uint16_t>(out, fmt == WavFormat::pcm16 ? 1 : 3);
  put_le<std::uint16_t>(out, std::uint16_t(channels));
  put_le<std::uint32_t>(out, std::uint32_t(rate));
  put_le<std::uint32_t>(out, std::uint32_t(rate * channels * bytes_per));
  put_le<std::uint16_t>(out, std::uint16_t(channels * bytes_per));
  put_le<std::uint16_t>(out, std::uint16_t(bits));
  if (fact) {
    out += "fact";
    put_le<std::uint32_t>(out, 4);
    put_le<std::uint32_t>(out, std::uint32_t(frames));
  }
  out += "data";
  put_le<std::uint32_t>(out, data_len);

  for (std::size_t i = 0; i < frames; ++i) {
    for (int c = 0; c < channels; ++c) {
      const double v = audio.channels[c].samples[i];
      if (fmt == WavFormat::pcm16) {
        const double clamped = std::max(-1.0, std::min(1.0, v));
        put_le<std::int16_t>(out, std::int16_t(std::lrint(clamped * 32767.0)));
      } else {
        put_le<float>(out, static_cast<float>(v));
      }
    }
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("write_wav: cannot open '" + path + "' for writing");
  f.write(out.data(), std::streamsize(out.size()));
  if (!f) throw IoError("write_wav: short write to '" + path + "'");
}

inline void write_wav(const std::string& path, const Waveform& mono,
                      WavFormat fmt = WavFormat::float32) {
  write_wav(path, MultiChannelWaveform({mono}), fmt);
}

}  // namespace dse

#endif  // DSE_WAV_HPP
