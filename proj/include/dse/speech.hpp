// Copyright 2026 The dse authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#ifndef DSE_SPEECH_HPP
#define DSE_SPEECH_HPP

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "dse/common.hpp"
#include "dse/signal.hpp"
#include "dse/wav.hpp"

namespace dse {

// Speech-like test material: pulse-train + noise excitation through a cascade
// of formant resonators, with syllabic amplitude modulation. Not speech, but
// close enough in spectrum and envelope to drive mixing and training tests
// without shipping a corpus.
inline Waveform synth_speech(std::uint64_t seed, double duration, int sample_rate) {
  Rng rng(seed);
  const int n = static_cast<int>(duration * sample_rate);
  Waveform out;
  out.sample_rate = sample_rate;
  out.samples.assign(n, 0.0);

  const double f0_base = uniform(rng, 95.0, 230.0);
  const double f0_vibrato = uniform(rng, 2.0, 5.0);
  const double am1_hz = uniform(rng, 1.8, 3.2);
  const double am2_hz = uniform(rng, 4.0, 6.5);
  const double am1_ph = uniform(rng, 0.0, 2.0 * kPi);
  const double am2_ph = uniform(rng, 0.0, 2.0 * kPi);

  // Syllable/pause gating: speech is sparse in time, and the mixtures only
  // behave like speech mixtures if the sources actually take turns.
  std::vector<double> gate(n, 0.0);
  {
    const double edge = 0.020 * sample_rate;  // raised-cosine on/off ramps
    int pos = static_cast<int>(uniform(rng, 0.0, 0.12) * sample_rate);
    bool voiced = true;
    while (pos < n) {
      const double dur_s = voiced ? uniform(rng, 0.15, 0.40) : uniform(rng, 0.06, 0.30);
      const int dur = static_cast<int>(dur_s * sample_rate);
      if (voiced) {
        for (int i = 0; i < dur && pos + i < n; ++i) {
          double v = 1.0;
          if (i < edge) v = 0.5 - 0.5 * std::cos(kPi * i / edge);
          if (dur - 1 - i < edge) v = std::min(v, 0.5 - 0.5 * std::cos(kPi * (dur - 1 - i) / edge));
          gate[pos + i] = v;
        }
      }
      pos += dur;
      voiced = !voiced;
    }
  }

  struct Resonator {
    double b0, a1, a2, y1 = 0.0, y2 = 0.0;
    double step(double x) {
      const double y = b0 * x + a1 * y1 + a2 * y2;
      y2 = y1;
      y1 = y;
      return y;
    }
  };
  auto make_resonator = [&](double fc, double bw) {
    Resonator r;
    const double pr = std::exp(-kPi * bw / sample_rate);
    const double th = 2.0 * kPi * fc / sample_rate;
    r.a1 = 2.0 * pr * std::cos(th);
    r.a2 = -pr * pr;
    r.b0 = 1.0 - pr;
    return r;
  };
  Resonator f1 = make_resonator(uniform(rng, 320.0, 850.0), uniform(rng, 60.0, 110.0));
  Resonator f2 = make_resonator(uniform(rng, 950.0, 2100.0), uniform(rng, 90.0, 160.0));
  Resonator f3 = make_resonator(uniform(rng, 2300.0, 3300.0), uniform(rng, 120.0, 220.0));

  std::normal_distribution<double> gauss(0.0, 1.0);
  double phase = uniform(rng, 0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    const double t = double(i) / sample_rate;
    const double f0 = f0_base * (1.0 + 0.04 * std::sin(2.0 * kPi * f0_vibrato * t));
    phase += f0 / sample_rate;
    double exc = 0.12 * gauss(rng);
    if (phase >= 1.0) {
      phase -= 1.0;
      exc += 1.0;
    }
    double v = f3.step(f2.step(f1.step(exc)));
    const double env = 0.25 + 0.75 * (0.5 + 0.5 * std::sin(2.0 * kPi * am1_hz * t + am1_ph)) *
                                  (0.6 + 0.4 * std::sin(2.0 * kPi * am2_hz * t + am2_ph));
    out.samples[i] = v * env * gate[i];
  }

  double peak = 1e-12;
  for (double v : out.samples) peak = std::max(peak, std::abs(v));
  const double g = 0.3 / peak;
  for (double& v : out.samples) v *= g;
  return out;
}

// Source of mono clips for dataset synthesis.
class SpeechPool {
 public:
  virtual ~SpeechPool() = default;
  virtual Waveform draw(Rng& rng, double duration, int sample_rate) const = 0;
};

class SyntheticSpeechPool final : public SpeechPool {
 public:
  Waveform draw(Rng& rng, double duration, int sample_rate) const override {
    return synth_speech(rng(), duration, sample_rate);
  }
};

// Draws random segments from mono WAV files in a directory.
class WavDirPool final : public SpeechPool {
 public:
  explicit WavDirPool(const std::string& dir) {
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
      if (e.path().extension() == ".wav") files_.push_back(e.path().string());
    }
    std::sort(files_.begin(), files_.end());
    if (files_.empty()) throw Error("WavDirPool: no .wav files in '" + dir + "'");
  }

  Waveform draw(Rng& rng, double duration, int sample_rate) const override {
    const auto& path = files_[rng() % files_.size()];
    MultiChannelWaveform w = read_wav(path);
    if (w.sample_rate() != sample_rate)
      throw Error("WavDirPool: '" + path + "' is " + std::to_string(w.sample_rate()) +
                  " Hz, expected " + std::to_string(sample_rate));
    Waveform mono = w.channels[0];
    const std::size_t want = std::size_t(duration * sample_rate);
    if (mono.size() <= want) {
      mono.samples.resize(want, 0.0);
      return mono;
    }
    const std::size_t start = rng() % (mono.size() - want);
    Waveform seg;
    seg.sample_rate = sample_rate;
    seg.samples.assign(mono.samples.begin() + start, mono.samples.begin() + start + want);
    return seg;
  }

 private:
  std::vector<std::string> files_;
};

}  // namespace dse

#endif  // DSE_SPEECH_HPP
