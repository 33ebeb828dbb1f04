// Copyright 2026 The dse authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef DSE_FEATURES_HPP
#define DSE_FEATURES_HPP

#include <cmath>
#include <complex>
#include <string>
#include <vector>

#include "dse/beamform.hpp"
#include "dse/common.hpp"
#include "dse/signal.hpp"

namespace dse {

// Network input planes. Channel order is a wire contract (trained weights
// depend on it): magnitudes of mic1, mic2, lower beam, center beam, upper
// beam, then the matching five phase planes. Phases are principal values in
// (-pi, pi], with arg(0) taken as 0.
struct FeatureBlock {
  std::vector<float> data;  // [channels x bins x frames], frame index innermost
  int channels = 0;
  int bins = 0;
  int frames = 0;
  double target_deg = 90.0;
  double width_deg = 7.0;

  float& at(int c, int k, int t) {
    return data[(std::size_t(c) * bins + k) * frames + t];
  }
  float at(int c, int k, int t) const {
    return data[(std::size_t(c) * bins + k) * frames + t];
  }
};

enum class FeatureLayout {
  directional,  // 10ch: mic pair + three beams, magnitude and phase
  plain,        // 4ch: mic pair magnitude and phase
  plain_ipd,    // 5ch: plain + inter-mic phase difference
  plain_beam,   // 6ch: plain + center-beam magnitude and phase
};

inline int feature_channel_count(FeatureLayout layout) {
  switch (layout) {
    case FeatureLayout::directional: return 10;
    case FeatureLayout::plain: return 4;
    case FeatureLayout::plain_ipd: return 5;
    case FeatureLayout::plain_beam: return 6;
  }
  throw ConfigError("feature_channel_count: bad layout");
}

// Leading channels hold magnitudes, the rest phases (and the IPD plane).
inline int feature_magnitude_count(FeatureLayout layout) {
  switch (layout) {
    case FeatureLayout::directional: return 5;
    case FeatureLayout::plain: return 2;
    case FeatureLayout::plain_ipd: return 2;
    case FeatureLayout::plain_beam: return 3;
  }
  throw ConfigError("feature_magnitude_count: bad layout");
}

namespace detail {

inline void write_mag_phase(FeatureBlock& fb, int mag_channel, int phase_channel,
                            const ComplexSpectrogram& spec) {
  for (int k = 0; k < fb.bins; ++k)
    for (int t = 0; t < fb.frames; ++t) {
      const std::complex<double> z = spec.at(k, t);
      fb.at(mag_channel, k, t) = static_cast<float>(std::abs(z));
      fb.at(phase_channel, k, t) =
          z == std::complex<double>(0.0, 0.0) ? 0.0f : static_cast<float>(std::arg(z));
    }
}

}  // namespace detail

// 2 raw + 3 steered complex spectra -> 5 magnitude + 5 phase planes.
inline FeatureBlock assemble_features(const ComplexSpectrogram& mic1,
                                      const ComplexSpectrogram& mic2, const TripleBeams& beams) {
  const ComplexSpectrogram* specs[5] = {&mic1, &mic2, &beams.lower, &beams.center, &beams.upper};
  for (int i = 1; i < 5; ++i)
    if (!specs[0]->same_shape(*specs[i]))
      throw DimensionError("assemble_features: spectrogram shapes disagree");

  FeatureBlock fb;
  fb.channels = 10;
  fb.bins = mic1.num_bins;
  fb.frames = mic1.num_frames;
  fb.target_deg = beams.steering.center.azimuth;
  fb.width_deg = beams.steering.upper.azimuth - beams.steering.center.azimuth;
  fb.data.assign(std::size_t(fb.channels) * fb.bins * fb.frames, 0.0f);
  for (int i = 0; i < 5; ++i) detail::write_mag_phase(fb, i, 5 + i, *specs[i]);
  return fb;
}

// Baseline feature layouts share the first four planes (mic magnitudes and
// phases) so the variants differ only in what is appended.
inline FeatureBlock assemble_features(FeatureLayout layout, const ComplexSpectrogram& mic1,
                                      const ComplexSpectrogram& mic2,
                                      const TripleBeams* beams) {
  if (layout == FeatureLayout::directional) {
    if (!beams) throw ConfigError("assemble_features: directional layout needs beams");
    return assemble_features(mic1, mic2, *beams);
  }
  if (!mic1.same_shape(mic2))
    throw DimensionError("assemble_features: spectrogram shapes disagree");

  FeatureBlock fb;
  fb.channels = feature_channel_count(layout);
  fb.bins = mic1.num_bins;
  fb.frames = mic1.num_frames;
  fb.data.assign(std::size_t(fb.channels) * fb.bins * fb.frames, 0.0f);

  if (layout == FeatureLayout::plain_beam) {
    // magnitudes first (mic1, mic2, center beam), then the phases
    if (!beams) throw ConfigError("assemble_features: plain_beam layout needs a center beam");
    detail::write_mag_phase(fb, 0, 3, mic1);
    detail::write_mag_phase(fb, 1, 4, mic2);
    detail::write_mag_phase(fb, 2, 5, beams->center);
    return fb;
  }

  detail::write_mag_phase(fb, 0, 2, mic1);
  detail::write_mag_phase(fb, 1, 3, mic2);
  if (layout == FeatureLayout::plain_ipd) {
    for (int k = 0; k < fb.bins; ++k)
      for (int t = 0; t < fb.frames; ++t) {
        const std::complex<double> z = mic1.at(k, t) * std::conj(mic2.at(k, t));
        fb.at(4, k, t) =
            z == std::complex<double>(0.0, 0.0) ? 0.0f : static_cast<float>(std::arg(z));
      }
  }
  return fb;
}

// Mask carrier selection: below 90 degrees the first channel is nearer,
// otherwise the second. Returns a 0-based channel index.
inline int near_mic_select(double target_deg) {
  if (target_deg < 0.0 || target_deg > 180.0)
    throw ConfigError("near_mic_select: azimuth must lie in [0, 180]");
  return near_mic_index(target_deg);
}

}  // namespace dse

#endif  // DSE_FEATURES_HPP
