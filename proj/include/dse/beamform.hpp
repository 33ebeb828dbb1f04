// Copyright 2026 The dse authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef DSE_BEAMFORM_HPP
#define DSE_BEAMFORM_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <vector>

#include "dse/common.hpp"
#include "dse/room.hpp"
#include "dse/signal.hpp"

namespace dse {

// Far-field phase weights aligning the two-mic array to one azimuth.
// Mic 0 is the reference (weight 1 at every bin); mic 1's weight at bin k is
// exp(-j 2 pi f_k tau) with tau = spacing cos(azimuth)/c.
struct SteeringVector {
  double azimuth = 90.0;
  double tau = 0.0;                             // inter-mic delay, seconds
  std::vector<std::complex<double>> mic2;       // per-bin weight for mic 1
  int num_bins = 0;

  std::complex<double> weight(int mic, int bin) const {
    return mic == 0 ? std::complex<double>(1.0, 0.0) : mic2[bin];
  }
};

struct SteeringSet {
  SteeringVector lower;   // azimuth clamped to [0, 180]
  SteeringVector center;
  SteeringVector upper;
};

inline SteeringVector steering_vector(double azimuth_deg, const ArrayGeometry& geometry,
                                      const StftConfig& cfg, int sample_rate) {
  SteeringVector sv;
  sv.azimuth = azimuth_deg;
  sv.tau = geometry.spacing * std::cos(azimuth_deg * kPi / 180.0) / kSpeedOfSound;
  sv.num_bins = cfg.bins();
  sv.mic2.resize(sv.num_bins);
  for (int k = 0; k < sv.num_bins; ++k) {
    const double fk = double(k) * sample_rate / cfg.window_size;
    const double ang = -2.0 * kPi * fk * sv.tau;
    sv.mic2[k] = {std::cos(ang), std::sin(ang)};
  }
  return sv;
}

// Align-then-average of one bin. noinline so the DAS and GSC fixed branches
// run the same machine code and agree bit for bit (FP contraction would
// otherwise differ between inlining contexts).
[[gnu::noinline]] inline std::complex<double> das_bin(const std::complex<double>& c1,
                                                      const std::complex<double>& c2,
                                                      const std::complex<double>& w2) {
  return 0.5 * (c1 + std::conj(w2) * c2);
}

// Delay-and-sum: align each channel to the steering direction, then average.
inline ComplexSpectrogram das_beamform(const ComplexSpectrogram& ch1,
                                       const ComplexSpectrogram& ch2,
                                       const SteeringVector& sv) {
  if (!ch1.same_shape(ch2))
    throw DimensionError("das_beamform: channel spectrograms disagree in shape");
  if (ch1.num_bins != sv.num_bins)
    throw DimensionError("das_beamform: steering vector bin count mismatch");
  ComplexSpectrogram out = ch1;
  for (int t = 0; t < out.num_frames; ++t)
    for (int k = 0; k < out.num_bins; ++k)
      out.at(k, t) = das_bin(ch1.at(k, t), ch2.at(k, t), sv.mic2[k]);
  return out;
}

inline ComplexSpectrogram das_beamform(const MultiChannelWaveform& audio,
                                       const SteeringVector& sv, const StftConfig& cfg) {
  if (audio.channels.size() != 2) throw DimensionError("das_beamform: need exactly 2 channels");
  return das_beamform(stft(audio.channels[0], cfg), stft(audio.channels[1], cfg), sv);
}

// Generalized sidelobe canceller: DAS fixed branch minus an adaptively
// filtered blocked reference. One complex NLMS tap per bin, adapted frame by
// frame, so the whole thing stays causal. Carries per-stream state; use one
// instance per stream.
class GscBeamformer {
 public:
  GscBeamformer(SteeringVector sv, double mu = 0.1, double eps = 1e-6, bool record_history = false)
      : sv_(std::move(sv)), mu_(mu), eps_(eps), record_(record_history) {
    if (mu_ < 0.0 || mu_ > 1.0) throw ConfigError("GscBeamformer: need 0 <= mu <= 1");
    filters_.assign(sv_.num_bins, {0.0, 0.0});
  }

  ComplexSpectrogram process(const ComplexSpectrogram& ch1, const ComplexSpectrogram& ch2) {
    if (!ch1.same_shape(ch2)) throw DimensionError("gsc: channel spectrograms disagree in shape");
    if (ch1.num_bins != sv_.num_bins) throw DimensionError("gsc: steering bin count mismatch");
    ComplexSpectrogram out = ch1;
    for (int t = 0; t < ch1.num_frames; ++t) {
      for (int k = 0; k < ch1.num_bins; ++k) {
        const std::complex<double> a1 = ch1.at(k, t);
        const std::complex<double> a2 = std::conj(sv_.mic2[k]) * ch2.at(k, t);
        const std::complex<double> fixed = das_bin(ch1.at(k, t), ch2.at(k, t), sv_.mic2[k]);
        const std::complex<double> blocked = 0.5 * (a1 - a2);
        const std::complex<double> e = fixed - filters_[k] * blocked;
        out.at(k, t) = e;
        if (mu_ > 0.0) {
          const double p = std::norm(blocked) + eps_;
          std::complex<double> h = filters_[k] + mu_ * e * std::conj(blocked) / p;
          if (!std::isfinite(h.real()) || !std::isfinite(h.imag())) h = {0.0, 0.0};
          filters_[k] = h;
        }
      }
      if (record_) history_.push_back(filters_);
    }
    return out;
  }

  // Replays a recorded adaptation trajectory on a different input pair.
  // Linear in the input, so per-source output components of a mixture can be
  // measured separately.
  ComplexSpectrogram replay(const ComplexSpectrogram& ch1, const ComplexSpectrogram& ch2) const {
    if (!record_ || history_.size() < std::size_t(ch1.num_frames))
      throw Error("gsc replay: no recorded history of matching length");
    ComplexSpectrogram out = ch1;
    const std::vector<std::complex<double>> zeros(sv_.num_bins, {0.0, 0.0});
    for (int t = 0; t < ch1.num_frames; ++t) {
      const auto& h_prev = t == 0 ? zeros : history_[t - 1];
      for (int k = 0; k < ch1.num_bins; ++k) {
        const std::complex<double> a1 = ch1.at(k, t);
        const std::complex<double> a2 = std::conj(sv_.mic2[k]) * ch2.at(k, t);
        const std::complex<double> fixed = das_bin(ch1.at(k, t), ch2.at(k, t), sv_.mic2[k]);
        const std::complex<double> blocked = 0.5 * (a1 - a2);
        out.at(k, t) = fixed - h_prev[k] * blocked;
      }
    }
    return out;
  }

  const std::vector<std::vector<std::complex<double>>>& history() const { return history_; }

 private:
  SteeringVector sv_;
  double mu_;
  double eps_;
  bool record_;
  std::vector<std::complex<double>> filters_;
  std::vector<std::vector<std::complex<double>>> history_;
};

inline ComplexSpectrogram gsc_beamform(const ComplexSpectrogram& ch1,
                                       const ComplexSpectrogram& ch2, const SteeringVector& sv,
                                       double nlms_mu = 0.1, double nlms_eps = 1e-6) {
  GscBeamformer g(sv, nlms_mu, nlms_eps);
  return g.process(ch1, ch2);
}

// The three beams backing the directional features: target angle plus both
// edge angles, edges clamped to [0, 180].
struct TripleBeams {
  SteeringSet steering;
  ComplexSpectrogram lower;
  ComplexSpectrogram center;
  ComplexSpectrogram upper;
};

inline SteeringSet make_steering_set(double target_deg, double width_deg,
                                     const ArrayGeometry& geometry, const StftConfig& cfg,
                                     int sample_rate) {
  if (target_deg < 0.0 || target_deg > 180.0)
    throw ConfigError("steering set: target azimuth must lie in [0, 180]");
  if (width_deg < 0.0) throw ConfigError("steering set: width must be >= 0");
  SteeringSet set;
  set.lower = steering_vector(std::clamp(target_deg - width_deg, 0.0, 180.0), geometry, cfg,
                              sample_rate);
  set.center = steering_vector(target_deg, geometry, cfg, sample_rate);
  set.upper = steering_vector(std::clamp(target_deg + width_deg, 0.0, 180.0), geometry, cfg,
                              sample_rate);
  return set;
}

inline TripleBeams triple_steering(const ComplexSpectrogram& ch1, const ComplexSpectrogram& ch2,
                                   double target_deg, double width_deg,
                                   const ArrayGeometry& geometry, const StftConfig& cfg) {
  TripleBeams tb;
  tb.steering = make_steering_set(target_deg, width_deg, geometry, cfg, ch1.sample_rate);
  tb.lower = das_beamform(ch1, ch2, tb.steering.lower);
  tb.center = das_beamform(ch1, ch2, tb.steering.center);
  tb.upper = das_beamform(ch1, ch2, tb.steering.upper);
  return tb;
}

}  // namespace dse

#endif  // DSE_BEAMFORM_HPP
