// Copyright 2026 The dse authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef DSE_TESTS_HELPERS_HPP
#define DSE_TESTS_HELPERS_HPP

#include <algorithm>
#include <cmath>
#include <complex>
#include <vector>

#include "dse/common.hpp"
#include "dse/signal.hpp"

namespace dse::test {

inline Waveform random_waveform(Rng& rng, int n, int sample_rate = 16000) {
  std::normal_distribution<double> g(0.0, 0.25);
  Waveform w;
  w.sample_rate = sample_rate;
  w.samples.resize(n);
  for (auto& v : w.samples) v = g(rng);
  return w;
}

inline double rel_l2(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, den = 0.0;
  const std::size_t n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    num += d * d;
  }
  for (std::size_t i = 0; i < n; ++i) den += a[i] * a[i];
  return std::sqrt(num / std::max(den, 1e-300));
}

// Reverberation time from backward-integrated energy decay: fit the -5 dB to
// -25 dB span and extrapolate to -60. Independent of the RIR generator's own
// bookkeeping on purpose.
inline double schroeder_t60(const std::vector<double>& taps, int sample_rate) {
  std::vector<double> edc(taps.size());
  double acc = 0.0;
  for (std::size_t i = taps.size(); i-- > 0;) {
    acc += taps[i] * taps[i];
    edc[i] = acc;
  }
  if (acc <= 0.0) return 0.0;
  const double top = edc[0];

  auto crossing = [&](double level_db) {
    const double want = top * std::pow(10.0, level_db / 10.0);
    for (std::size_t i = 1; i < edc.size(); ++i) {
      if (edc[i] <= want) {
        const double e0 = edc[i - 1], e1 = edc[i];
        const double frac = e0 == e1 ? 0.0 : (e0 - want) / (e0 - e1);
        return (double(i - 1) + frac) / sample_rate;
      }
    }
    return double(edc.size()) / sample_rate;
  };

  const double t5 = crossing(-5.0);
  const double t25 = crossing(-25.0);
  return 3.0 * (t25 - t5);
}

// Lag of b relative to a (positive when b is delayed) by exhaustive
// cross-correlation over integer lags.
inline int xcorr_peak_lag(const std::vector<double>& a, const std::vector<double>& b,
                          int max_lag) {
  int best_lag = 0;
  double best = -1e300;
  for (int lag = -max_lag; lag <= max_lag; ++lag) {
    double c = 0.0;
    for (std::size_t n = 0; n < a.size(); ++n) {
      const long long j = static_cast<long long>(n) + lag;
      if (j >= 0 && j < static_cast<long long>(b.size())) c += a[n] * b[j];
    }
    if (c > best) {
      best = c;
      best_lag = lag;
    }
  }
  return best_lag;
}

// Two-channel plane-wave pair with an exact fractional inter-mic delay,
// applied in the frequency domain. Returns interior-cropped channels so the
// circular wrap never shows.
inline std::pair<Waveform, Waveform> plane_wave_pair(const Waveform& s, double azimuth_deg,
                                                     double spacing, int crop = 512) {
  const double tau = spacing * std::cos(azimuth_deg * kPi / 180.0) / kSpeedOfSound;
  const std::size_t n = next_pow2(s.size() + 4096);
  auto delayed = [&](double delay_s) {
    std::vector<std::complex<double>> f(n);
    for (std::size_t i = 0; i < s.size(); ++i) f[i] = s.samples[i];
    fft_inplace(f, false);
    for (std::size_t k = 0; k <= n / 2; ++k) {
      const double w = 2.0 * kPi * k / n * s.sample_rate;
      const std::complex<double> rot = std::polar(1.0, -w * delay_s);
      f[k] *= rot;
      if (k != 0 && k != n / 2) f[n - k] = std::conj(f[k]);
    }
    fft_inplace(f, true);
    Waveform out;
    out.sample_rate = s.sample_rate;
    out.samples.resize(s.size() - 2 * crop);
    for (std::size_t i = 0; i < out.samples.size(); ++i) out.samples[i] = f[i + crop].real();
    return out;
  };
  // mic 0 sits on the 0-degree side: for azimuth < 90 the wave reaches it
  // first, so mic 1 lags by tau.
  return {delayed(0.0), delayed(tau)};
}

}  // namespace dse::test

#endif  // DSE_TESTS_HELPERS_HPP
