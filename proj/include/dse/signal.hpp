// Copyright 2026 The dse authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef DSE_SIGNAL_HPP
#define DSE_SIGNAL_HPP

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "dse/common.hpp"

namespace dse {

// ---------------------------------------------------------------------------
// Time-domain types
// ---------------------------------------------------------------------------

struct Waveform {
  std::vector<double> samples;
  int sample_rate = 16000;

  Waveform() = default;
  Waveform(std::vector<double> s, int rate) : samples(std::move(s)), sample_rate(rate) {
    if (sample_rate <= 0) throw ConfigError("Waveform: sample_rate must be positive");
  }

  std::size_t size() const { return samples.size(); }
  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }

  double energy() const {
    double e = 0.0;
    for (double v : samples) e += v * v;
    return e;
  }

  bool finite() const {
    for (double v : samples)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

struct MultiChannelWaveform {
  std::vector<Waveform> channels;  // channel 0 = first microphone

  MultiChannelWaveform() = default;
  explicit MultiChannelWaveform(std::vector<Waveform> ch) : channels(std::move(ch)) { validate(); }

  void validate() const {
    if (channels.empty()) return;
    for (const auto& c : channels) {
      if (c.sample_rate != channels[0].sample_rate)
        throw DimensionError("MultiChannelWaveform: channels disagree on sample rate");
      if (c.size() != channels[0].size())
        throw DimensionError("MultiChannelWaveform: channels disagree on length");
    }
  }

  int sample_rate() const { return channels.empty() ? 0 : channels[0].sample_rate; }
  std::size_t size() const { return channels.empty() ? 0 : channels[0].size(); }
};

// ---------------------------------------------------------------------------
// FFT (iterative radix-2, power-of-two sizes)
// ---------------------------------------------------------------------------

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

inline void fft_inplace(std::vector<std::complex<double>>& a, bool inverse) {
  const std::size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0)
    throw ConfigError("fft: size must be a nonzero power of two, got " + std::to_string(n));

  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * kPi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
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
  if (inverse) {
    const double inv = 1.0 / static_cast<double>(n);
    for (auto& x : a) x *= inv;
  }
}

// Full linear convolution, length |a|+|b|-1.
inline std::vector<double> fft_convolve(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.empty() || b.empty()) return {};
  const std::size_t out_len = a.size() + b.size() - 1;
  const std::size_t n = next_pow2(out_len);
  std::vector<std::complex<double>> fa(n), fb(n);
  for (std::size_t i = 0; i < a.size(); ++i) fa[i] = a[i];
  for (std::size_t i = 0; i < b.size(); ++i) fb[i] = b[i];
  fft_inplace(fa, false);
  fft_inplace(fb, false);
  for (std::size_t i = 0; i < n; ++i) fa[i] *= fb[i];
  fft_inplace(fa, true);
  std::vector<double> out(out_len);
  for (std::size_t i = 0; i < out_len; ++i) out[i] = fa[i].real();
  return out;
}

// ---------------------------------------------------------------------------
// Windows and framing
// ---------------------------------------------------------------------------

// Periodic Hann: w[n] = 0.5 - 0.5 cos(2 pi n / N). Sums to exactly 1 at hop N/2.
inline std::vector<double> make_hann(int window_size) {
  if (window_size < 2 || window_size % 2 != 0)
    throw ConfigError("make_hann: window_size must be even and >= 2, got " +
                      std::to_string(window_size));
  std::vector<double> w(window_size);
  for (int n = 0; n < window_size; ++n)
    w[n] = 0.5 - 0.5 * std::cos(2.0 * kPi * n / window_size);
  return w;
}

struct StftConfig {
  int window_size = 512;
  int hop_size = 256;
  std::vector<double> window;  // analysis window, window_size coefficients

  StftConfig() : window(make_hann(512)) {}
  StftConfig(int win, int hop) : window_size(win), hop_size(hop), window(make_hann(win)) {
    validate();
  }
  StftConfig(int win, int hop, std::vector<double> w)
      : window_size(win), hop_size(hop), window(std::move(w)) {
    validate();
  }

  int bins() const { return window_size / 2 + 1; }

  // Overlap-add of the analysis window must be flat (constant-overlap-add);
  // the constant is returned so istft can normalize by it.
  double cola_constant() const {
    std::vector<double> acc(hop_size, 0.0);
    for (int n = 0; n < window_size; ++n) acc[n % hop_size] += window[n];
    double mean = 0.0;
    for (double v : acc) mean += v;
    mean /= hop_size;
    for (double v : acc) {
      if (std::abs(v - mean) > 1e-6 * std::abs(mean))
        throw ConfigError("StftConfig: window is not constant-overlap-add at hop " +
                          std::to_string(hop_size));
    }
    return mean;
  }

  void validate() const {
    if (window_size < 2) throw ConfigError("StftConfig: window_size too small");
    if (hop_size <= 0 || hop_size > window_size)
      throw ConfigError("StftConfig: need 0 < hop_size <= window_size");
    if (static_cast<int>(window.size()) != window_size)
      throw ConfigError("StftConfig: window length does not match window_size");
    if ((window_size & (window_size - 1)) != 0)
      throw ConfigError("StftConfig: window_size must be a power of two");
    (void)cola_constant();
  }
};

// One-sided complex spectrogram, bins() = window_size/2 + 1.
// Frame t is the DFT of the windowed segment starting at t*hop of the
// pre-padded signal [zeros(window-hop), x, zeros(tail)]; the pre-pad makes
// istft(stft(x)) exact over the whole signal, not just the interior.
struct ComplexSpectrogram {
  std::vector<std::complex<double>> data;  // frame-major: data[frame * bins + bin]
  int num_bins = 0;
  int num_frames = 0;
  int num_samples = 0;  // original waveform length, istft restores it exactly
  StftConfig config;
  int sample_rate = 16000;

  std::complex<double>& at(int bin, int frame) { return data[std::size_t(frame) * num_bins + bin]; }
  const std::complex<double>& at(int bin, int frame) const {
    return data[std::size_t(frame) * num_bins + bin];
  }

  bool same_shape(const ComplexSpectrogram& o) const {
    return num_bins == o.num_bins && num_frames == o.num_frames;
  }

  bool finite() const {
    for (const auto& z : data)
      if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) return false;
    return true;
  }
};

inline int stft_num_frames(int num_samples, const StftConfig& cfg) {
  return static_cast<int>((num_samples + cfg.hop_size - 1) / cfg.hop_size) + 1;
}

inline ComplexSpectrogram stft(const Waveform& w, const StftConfig& cfg) {
  cfg.validate();
  if (static_cast<int>(w.size()) < cfg.window_size)
    throw DimensionError("stft: input shorter than one window (" + std::to_string(w.size()) +
                         " < " + std::to_string(cfg.window_size) + ")");

  const int n = static_cast<int>(w.size());
  const int pad = cfg.window_size - cfg.hop_size;
  const int frames = stft_num_frames(n, cfg);

  ComplexSpectrogram spec;
  spec.num_bins = cfg.bins();
  spec.num_frames = frames;
  spec.num_samples = n;
  spec.config = cfg;
  spec.sample_rate = w.sample_rate;
  spec.data.assign(std::size_t(frames) * spec.num_bins, {0.0, 0.0});

  std::vector<std::complex<double>> buf(cfg.window_size);
  for (int t = 0; t < frames; ++t) {
    const int start = t * cfg.hop_size - pad;  // position in the un-padded signal
    for (int i = 0; i < cfg.window_size; ++i) {
      const int src = start + i;
      const double v = (src >= 0 && src < n) ? w.samples[src] : 0.0;
      buf[i] = cfg.window[i] * v;
    }
    fft_inplace(buf, false);
    for (int k = 0; k < spec.num_bins; ++k) spec.data[std::size_t(t) * spec.num_bins + k] = buf[k];
  }
  return spec;
}

inline Waveform istft(const ComplexSpectrogram& spec) {
  const StftConfig& cfg = spec.config;
  cfg.validate();
  const double cola = cfg.cola_constant();
  if (spec.num_bins != cfg.bins())
    throw DimensionError("istft: bin count does not match config");

  const int pad = cfg.window_size - cfg.hop_size;
  const int total = pad + (spec.num_frames - 1) * cfg.hop_size + cfg.window_size;
  std::vector<double> acc(total, 0.0);

  std::vector<std::complex<double>> buf(cfg.window_size);
  for (int t = 0; t < spec.num_frames; ++t) {
    for (int k = 0; k < spec.num_bins; ++k) buf[k] = spec.at(k, t);
    for (int k = 1; k < cfg.window_size / 2; ++k)
      buf[cfg.window_size - k] = std::conj(spec.at(k, t));
    fft_inplace(buf, true);
    double* dst = acc.data() + std::size_t(t) * cfg.hop_size;
    for (int i = 0; i < cfg.window_size; ++i) dst[i] += buf[i].real();
  }

  Waveform out;
  out.sample_rate = spec.sample_rate;
  out.samples.resize(spec.num_samples);
  const double norm = 1.0 / cola;
  for (int i = 0; i < spec.num_samples; ++i) out.samples[i] = acc[pad + i] * norm;
  return out;
}

}  // namespace dse

#endif  // DSE_SIGNAL_HPP
