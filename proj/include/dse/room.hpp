// Copyright 2026 The dse authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef DSE_ROOM_HPP
#define DSE_ROOM_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "dse/common.hpp"
#include "dse/signal.hpp"

namespace dse {

struct Vec3 {
  double x = 0, y = 0, z = 0;
  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double norm() const { return std::sqrt(x * x + y * y + z * z); }
};

inline double distance(const Vec3& a, const Vec3& b) { return (a - b).norm(); }

// Shoebox room, walls at x in [0,width], y in [0,length], z in [0,height].
struct RoomSpec {
  double width = 4.0;
  double length = 6.0;
  double height = 2.8;
  double t60 = 0.3;

  void validate() const {
    if (width <= 0 || length <= 0 || height <= 0 || t60 <= 0)
      throw ConfigError("RoomSpec: dimensions and t60 must be positive");
  }
  double volume() const { return width * length * height; }
  double surface_area() const {
    return 2.0 * (width * length + width * height + length * height);
  }
  bool contains(const Vec3& p, double clearance = 0.0) const {
    return p.x >= clearance && p.x <= width - clearance && p.y >= clearance &&
           p.y <= length - clearance && p.z >= clearance && p.z <= height - clearance;
  }
};

// Two-microphone array on a horizontal line. Azimuth 0 points along +axis0
// (toward mic 1), 90 degrees is broadside (+y side of the mic line).
struct ArrayGeometry {
  Vec3 center{2.0, 3.0, 1.5};
  double spacing = 0.030;
  Vec3 axis0{1.0, 0.0, 0.0};      // unit vector toward azimuth 0, horizontal
  Vec3 broadside{0.0, 1.0, 0.0};  // unit vector toward azimuth 90, horizontal

  Vec3 mic(int index) const {  // index 0 = first microphone, on the 0-degree side
    const double sign = index == 0 ? 0.5 : -0.5;
    return center + axis0 * (sign * spacing);
  }

  Vec3 direction(double azimuth_deg) const {
    const double a = azimuth_deg * kPi / 180.0;
    return axis0 * std::cos(a) + broadside * std::sin(a);
  }

  double azimuth_of(const Vec3& p) const {
    const Vec3 d = p - center;
    const double u = d.x * axis0.x + d.y * axis0.y + d.z * axis0.z;
    const double v = d.x * broadside.x + d.y * broadside.y + d.z * broadside.z;
    return std::atan2(v, u) * 180.0 / kPi;
  }
};

struct SourcePlacement {
  double azimuth = 90.0;  // degrees in [0, 180], 90 = broadside
  double distance = 1.5;  // m from array center
  double height = 1.6;    // m
  Vec3 position;          // derived from the three fields above

  static SourcePlacement at(const ArrayGeometry& array, double azimuth_deg, double dist,
                            double height) {
    SourcePlacement s;
    s.azimuth = azimuth_deg;
    s.distance = dist;
    s.height = height;
    const Vec3 dir = array.direction(azimuth_deg);
    s.position = {array.center.x + dist * dir.x, array.center.y + dist * dir.y, height};
    return s;
  }
};

struct Rir {
  std::vector<std::vector<double>> taps;  // one sequence per microphone
  int sample_rate = 16000;

  bool finite() const {
    for (const auto& ch : taps)
      for (double v : ch)
        if (!std::isfinite(v)) return false;
    return true;
  }
};

struct SceneSpec {
  RoomSpec room;
  ArrayGeometry array;
  SourcePlacement target;
  SourcePlacement interferer;
  double snr_db = 0.0;
  std::uint64_t seed = 0;
};

struct MixtureExample {
  MultiChannelWaveform mixture;  // 2 channels
  Waveform target_reference;    // early-reverberated target at the near mic
  SceneSpec metadata;
};

// ---------------------------------------------------------------------------
// Room sampling and absorption
// ---------------------------------------------------------------------------

// Uniform draw over the simulation ranges: width 2.5-5 m, length 3-9 m,
// height 2.2-3.5 m, T60 0.2-0.5 s.
inline RoomSpec sample_room(std::uint64_t rng_seed) {
  Rng rng(rng_seed);
  RoomSpec r;
  r.width = uniform(rng, 2.5, 5.0);
  r.length = uniform(rng, 3.0, 9.0);
  r.height = uniform(rng, 2.2, 3.5);
  r.t60 = uniform(rng, 0.2, 0.5);
  return r;
}

// Sabine's formula mapped to a uniform wall absorption coefficient.
inline double sabine_absorption(const RoomSpec& room) {
  room.validate();
  const double alpha = 0.1611 * room.volume() / (room.t60 * room.surface_area());
  if (alpha > 1.0) {
    std::fprintf(stderr,
                 "sabine_absorption: room too small for T60=%.3f s (alpha=%.3f), clamping to 1\n",
                 room.t60, alpha);
    return 1.0;
  }
  return alpha;
}

// ---------------------------------------------------------------------------
// Image-source impulse responses
// ---------------------------------------------------------------------------

// Uniform wall absorption that makes the image-source decay actually measure
// room.t60. Sabine underestimates the absorption needed: late image energy is
// dominated by near-axial image chains along the long dimensions, so the
// realized decay runs slower than the diffuse-field prediction (badly so for
// elongated rooms). Enumerate the image lattice once, bin the per-image
// energies 1/d^2 by (arrival time, reflection count), then bisect the
// reflection loss so the Schroeder fit of that histogram (-5..-25 dB,
// extrapolated to -60) hits the requested T60.
inline double image_absorption_for_t60(const RoomSpec& room) {
  room.validate();
  const double sabine = 0.1611 * room.volume() / (room.t60 * room.surface_area());
  if (sabine >= 1.0) return 1.0;

  const double dim[3] = {room.width, room.length, room.height};
  // Off-center probe points; exact placement washes out of the decay fit.
  const double sp[3] = {0.43 * dim[0], 0.56 * dim[1], 0.52 * dim[2]};
  const double mp[3] = {0.57 * dim[0], 0.44 * dim[1], 0.48 * dim[2]};

  const double max_dist = kSpeedOfSound * room.t60 * 1.45 + 2.0;
  int n_img[3];
  for (int a = 0; a < 3; ++a) n_img[a] = static_cast<int>(std::ceil(max_dist / (2.0 * dim[a])));
  const int max_refl = 2 * (n_img[0] + n_img[1] + n_img[2]) + 3;
  constexpr int kBins = 512;
  std::vector<double> hist(std::size_t(kBins) * (max_refl + 1), 0.0);

  for (int mx = -n_img[0]; mx <= n_img[0]; ++mx)
    for (int my = -n_img[1]; my <= n_img[1]; ++my)
      for (int mz = -n_img[2]; mz <= n_img[2]; ++mz)
        for (int q = 0; q <= 1; ++q)
          for (int j = 0; j <= 1; ++j)
            for (int k = 0; k <= 1; ++k) {
              const int refl = std::abs(2 * mx - q) + std::abs(2 * my - j) + std::abs(2 * mz - k);
              const double ix = (1 - 2 * q) * sp[0] + 2.0 * mx * dim[0] - mp[0];
              const double iy = (1 - 2 * j) * sp[1] + 2.0 * my * dim[1] - mp[1];
              const double iz = (1 - 2 * k) * sp[2] + 2.0 * mz * dim[2] - mp[2];
              const double d2 = ix * ix + iy * iy + iz * iz;
              const double dist = std::sqrt(d2);
              if (dist >= max_dist || dist < 0.05) continue;
              const int bin = static_cast<int>(dist / max_dist * kBins);
              hist[std::size_t(bin) * (max_refl + 1) + refl] += 1.0 / d2;
            }

  std::vector<double> loss_pow(max_refl + 1), energy(kBins);
  auto fitted_t60 = [&](double g) {
    loss_pow[0] = 1.0;
    const double loss = std::exp(-g);
    for (int r = 1; r <= max_refl; ++r) loss_pow[r] = loss_pow[r - 1] * loss;
    for (int b = 0; b < kBins; ++b) {
      double e = 0.0;
      const double* row = hist.data() + std::size_t(b) * (max_refl + 1);
      for (int r = 0; r <= max_refl; ++r) e += row[r] * loss_pow[r];
      energy[b] = e;
    }
    double acc = 0.0;
    std::vector<double> edc(kBins);
    for (int b = kBins; b-- > 0;) {
      acc += energy[b];
      edc[b] = acc;
    }
    auto crossing = [&](double db) {
      const double want = edc[0] * std::pow(10.0, db / 10.0);
      for (int b = 1; b < kBins; ++b)
        if (edc[b] <= want) {
          const double frac = (edc[b - 1] - want) / (edc[b - 1] - edc[b]);
          return (b - 1 + frac) / kBins * max_dist / kSpeedOfSound;
        }
      return max_dist / kSpeedOfSound;
    };
    return 3.0 * (crossing(-25.0) - crossing(-5.0));
  };

  // Bracket around the Sabine guess; lattice geometry can push the realized
  // decay either way (slow axial chains vs the Eyring effect at high alpha).
  double lo = -std::log(1.0 - sabine);
  double hi = lo;
  while (fitted_t60(lo) < room.t60 && lo > 1e-4) lo *= 0.625;
  while (fitted_t60(hi) > room.t60 && hi < 20.0) hi *= 1.6;
  for (int it = 0; it < 40; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (fitted_t60(mid) > room.t60)
      lo = mid;
    else
      hi = mid;
  }
  return std::min(1.0, 1.0 - std::exp(-0.5 * (lo + hi)));
}

struct RirOptions {
  int sample_rate = 16000;
  int max_order = -1;        // cap on total reflection count; -1 = no cap
  double duration = -1.0;    // seconds of response to keep; -1 = t60 + margin
  double absorption = -1.0;  // uniform wall absorption; -1 = calibrated from t60
  int sinc_half_width = 40;  // 81-tap windowed sinc for fractional delays
  // Removes the DC buildup of the all-positive image amplitudes; without it
  // the dense late field accumulates a non-decaying low-frequency floor.
  bool highpass_100hz = true;
};

inline Rir image_source_rir(const RoomSpec& room, const ArrayGeometry& array,
                            const SourcePlacement& src, const RirOptions& opt) {
  room.validate();
  if (!room.contains(src.position)) throw GeometryError("image_source_rir: source outside room");
  for (int m = 0; m < 2; ++m)
    if (!room.contains(array.mic(m)))
      throw GeometryError("image_source_rir: microphone outside room");

  const double fs = opt.sample_rate;
  const double alpha = opt.absorption >= 0.0 ? opt.absorption : image_absorption_for_t60(room);
  const double beta = std::sqrt(std::max(0.0, 1.0 - alpha));
  double dur = opt.duration > 0 ? opt.duration : room.t60 + 0.05;
  const double direct = distance(src.position, array.mic(0)) / kSpeedOfSound;
  dur = std::max(dur, direct + 0.02);

  const double max_dist = kSpeedOfSound * dur;
  const int half = opt.sinc_half_width;
  const int taps_len = static_cast<int>(std::ceil(dur * fs)) + half + 1;
  const double room_dim[3] = {room.width, room.length, room.height};
  const double src_pos[3] = {src.position.x, src.position.y, src.position.z};

  int n_img[3];
  for (int a = 0; a < 3; ++a)
    n_img[a] = static_cast<int>(std::ceil(max_dist / (2.0 * room_dim[a])));

  Rir rir;
  rir.sample_rate = opt.sample_rate;
  rir.taps.assign(2, std::vector<double>(taps_len, 0.0));

  // Per-tap tables turn the windowed-sinc build into one sin/cos pair per
  // image:  sin(pi(n-f)) = -(-1)^n sin(pi f)  and the Hann factor expands by
  // the angle-sum identity over precomputed cos/sin(2 pi n / ntaps).
  const int ntaps = 2 * half + 1;
  std::vector<double> win_cos(ntaps), win_sin(ntaps), sign_n(ntaps);
  for (int n = -half; n <= half; ++n) {
    win_cos[n + half] = std::cos(2.0 * kPi * n / ntaps);
    win_sin[n + half] = std::sin(2.0 * kPi * n / ntaps);
    sign_n[n + half] = (n & 1) ? -1.0 : 1.0;
  }
  const int max_refl = 2 * (n_img[0] + n_img[1] + n_img[2]) + 3;
  std::vector<double> beta_pow(max_refl + 1);
  beta_pow[0] = 1.0;
  for (int r = 1; r <= max_refl; ++r) beta_pow[r] = beta_pow[r - 1] * beta;

  double mic_pos[2][3];
  for (int m = 0; m < 2; ++m) {
    const Vec3 mic = array.mic(m);
    mic_pos[m][0] = mic.x;
    mic_pos[m][1] = mic.y;
    mic_pos[m][2] = mic.z;
  }

  for (int mx = -n_img[0]; mx <= n_img[0]; ++mx)
    for (int my = -n_img[1]; my <= n_img[1]; ++my)
      for (int mz = -n_img[2]; mz <= n_img[2]; ++mz)
        for (int q = 0; q <= 1; ++q)
          for (int j = 0; j <= 1; ++j)
            for (int k = 0; k <= 1; ++k) {
              const int refl = std::abs(2 * mx - q) + std::abs(2 * my - j) + std::abs(2 * mz - k);
              if (opt.max_order >= 0 && refl > opt.max_order) continue;
              const double amp = beta_pow[refl];
              if (amp == 0.0) continue;
              const double img[3] = {(1 - 2 * q) * src_pos[0] + 2.0 * mx * room_dim[0],
                                     (1 - 2 * j) * src_pos[1] + 2.0 * my * room_dim[1],
                                     (1 - 2 * k) * src_pos[2] + 2.0 * mz * room_dim[2]};
              for (int m = 0; m < 2; ++m) {
                double d2 = 0.0;
                for (int a = 0; a < 3; ++a) {
                  const double dd = img[a] - mic_pos[m][a];
                  d2 += dd * dd;
                }
                const double dist = std::sqrt(d2);
                if (dist > max_dist) continue;
                const double gain = amp / (4.0 * kPi * std::max(dist, 1e-3));

                const double delay = dist / kSpeedOfSound * fs;
                const int i0 = static_cast<int>(std::floor(delay));
                const double frac = delay - i0;
                const double sin_pf = std::sin(kPi * frac);
                const double wc = std::cos(2.0 * kPi * frac / ntaps);
                const double ws = std::sin(2.0 * kPi * frac / ntaps);
                double* out = rir.taps[m].data();
                const int start = i0 - half;
                const int lo = std::max(0, -start);
                const int hi = std::min(ntaps, taps_len - start);
                for (int n = lo; n < hi; ++n) {
                  const double t = (n - half) - frac;
                  const double win = 0.5 * (1.0 + win_cos[n] * wc + win_sin[n] * ws);
                  const double s =
                      frac == 0.0 ? (t == 0.0 ? 1.0 : 0.0) : -sign_n[n] * sin_pf / (kPi * t);
                  out[start + n] += gain * win * s;
                }
              }
            }

  if (opt.highpass_100hz) {
    const double w0 = 2.0 * kPi * 100.0 / fs;
    const double r1 = std::exp(-w0);
    const double b1 = 2.0 * r1 * std::cos(w0);
    const double b2 = -r1 * r1;
    const double a1 = -(1.0 + r1);
    for (auto& taps : rir.taps) {
      double y0 = 0.0, y1 = 0.0, y2 = 0.0;
      for (double& v : taps) {
        y2 = y1;
        y1 = y0;
        y0 = b1 * y1 + b2 * y2 + v;
        v = y0 + a1 * y1 + r1 * y2;
      }
    }
  }
  return rir;
}

inline Rir image_source_rir(const RoomSpec& room, const ArrayGeometry& array,
                            const SourcePlacement& src, int max_order, int sample_rate) {
  RirOptions opt;
  opt.sample_rate = sample_rate;
  opt.max_order = max_order;
  return image_source_rir(room, array, src, opt);
}

// ---------------------------------------------------------------------------
// Ground truth and mixing
// ---------------------------------------------------------------------------

inline int rir_direct_index(const std::vector<double>& taps) {
  int best = 0;
  double best_mag = 0.0;
  for (std::size_t i = 0; i < taps.size(); ++i) {
    const double m = std::abs(taps[i]);
    if (m > best_mag) {
      best_mag = m;
      best = static_cast<int>(i);
    }
  }
  return best;
}

// Source convolved with the RIR truncated cutoff_ms after the direct-path
// arrival. Keeps taps [0, direct + cutoff_samples); this is the training
// reference.
inline Waveform early_reverb_target(const Waveform& target_speech,
                                    const std::vector<double>& rir_taps, int sample_rate,
                                    double cutoff_ms = 150.0) {
  if (cutoff_ms <= 0) throw ConfigError("early_reverb_target: cutoff must be positive");
  std::vector<double> taps = rir_taps;
  const int direct = rir_direct_index(taps);
  const std::size_t keep = std::size_t(direct) + std::size_t(std::lround(cutoff_ms / 1000.0 * sample_rate));
  if (keep < taps.size()) taps.resize(keep);
  Waveform out;
  out.sample_rate = target_speech.sample_rate;
  out.samples = fft_convolve(target_speech.samples, taps);
  return out;
}

inline Waveform early_reverb_target(const Waveform& target_speech, const Rir& rir, int mic,
                                    double cutoff_ms = 150.0) {
  return early_reverb_target(target_speech, rir.taps.at(mic), rir.sample_rate, cutoff_ms);
}

// Near microphone for a target azimuth: channel 0 below 90 degrees, else 1.
inline int near_mic_index(double target_azimuth_deg) {
  return target_azimuth_deg < 90.0 ? 0 : 1;
}

struct SynthesisOptions {
  double noise_level_db = -30.0;  // white noise relative to target; <= -200 disables
  double early_cutoff_ms = 150.0;
  RirOptions rir;
};

// Implements the two-channel mixing model: each source convolved with its
// RIR, interferer scaled to hit scene.snr_db measured on the early-reverb
// components at the near mic, plus low-level white Gaussian noise.
inline MixtureExample synthesize_example(const SceneSpec& scene, const Waveform& target_speech,
                                         const Waveform& interferer_speech,
                                         const SynthesisOptions& opt = {}) {
  if (target_speech.sample_rate != interferer_speech.sample_rate ||
      target_speech.sample_rate != opt.rir.sample_rate)
    throw DimensionError("synthesize_example: sample rates disagree");
  if (target_speech.energy() <= 0.0)
    throw Error("synthesize_example: target speech has zero energy");

  const Rir rir_t = image_source_rir(scene.room, scene.array, scene.target, opt.rir);
  const Rir rir_i = image_source_rir(scene.room, scene.array, scene.interferer, opt.rir);
  const int near = near_mic_index(scene.target.azimuth);
  const int fs = opt.rir.sample_rate;

  const std::size_t len = target_speech.size() + rir_t.taps[0].size() - 1;

  // Interferer gain from early-component energies at the near mic.
  const Waveform early_t = early_reverb_target(target_speech, rir_t, near, opt.early_cutoff_ms);
  const Waveform early_i =
      early_reverb_target(interferer_speech, rir_i, near, opt.early_cutoff_ms);
  const double et = early_t.energy();
  const double ei = early_i.energy();
  double gain_i = 0.0;
  if (ei > 0.0) gain_i = std::sqrt(et / (ei * std::pow(10.0, scene.snr_db / 10.0)));

  std::vector<Waveform> channels(2);
  Rng noise_rng(mix_seed(scene.seed, 0x6e6f6973ULL));  // independent noise stream
  std::normal_distribution<double> gauss(0.0, 1.0);
  const bool add_noise = opt.noise_level_db > -200.0;
  const double noise_std =
      add_noise ? std::sqrt(et * std::pow(10.0, opt.noise_level_db / 10.0) / double(len)) : 0.0;

  for (int m = 0; m < 2; ++m) {
    std::vector<double> xt = fft_convolve(target_speech.samples, rir_t.taps[m]);
    std::vector<double> xi = fft_convolve(interferer_speech.samples, rir_i.taps[m]);
    xt.resize(len, 0.0);
    xi.resize(len, 0.0);
    Waveform ch;
    ch.sample_rate = fs;
    ch.samples.resize(len);
    for (std::size_t i = 0; i < len; ++i) {
      double v = xt[i] + gain_i * xi[i];
      if (add_noise) v += noise_std * gauss(noise_rng);
      ch.samples[i] = v;
    }
    channels[m] = std::move(ch);
  }

  MixtureExample ex;
  ex.mixture = MultiChannelWaveform(std::move(channels));
  ex.target_reference = early_t;
  ex.target_reference.samples.resize(len, 0.0);
  ex.metadata = scene;
  return ex;
}

}  // namespace dse

#endif  // DSE_ROOM_HPP
