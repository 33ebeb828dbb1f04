// Copyright 2026 The dse authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "dse/wav.hpp"

#include <catch2/catch.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "helpers.hpp"

using namespace dse;

namespace {
std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}
}  // namespace

TEST_CASE("float32 stereo round trip is exact", "[wav]") {
  Rng rng(1);
  MultiChannelWaveform a({test::random_waveform(rng, 1234), test::random_waveform(rng, 1234)});
  const auto path = temp_path("dse_f32.wav");
  write_wav(path, a, WavFormat::float32);
  const auto b = read_wav(path);
  REQUIRE(b.channels.size() == 2);
  REQUIRE(b.size() == 1234);
  CHECK(b.sample_rate() == 16000);
  for (int c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < 1234; ++i)
      CHECK(b.channels[c].samples[i] == double(float(a.channels[c].samples[i])));
  std::remove(path.c_str());
}

TEST_CASE("pcm16 mono round trip within one quantization step", "[wav]") {
  Rng rng(2);
  auto w = test::random_waveform(rng, 999, 8000);
  for (auto& v : w.samples) v = std::clamp(v, -0.9, 0.9);
  const auto path = temp_path("dse_pcm.wav");
  write_wav(path, w, WavFormat::pcm16);
  const auto b = read_wav(path);
  REQUIRE(b.channels.size() == 1);
  CHECK(b.sample_rate() == 8000);
  for (std::size_t i = 0; i < w.size(); ++i)
    CHECK(std::abs(b.channels[0].samples[i] - w.samples[i]) < 1.0 / 32767.0);
  std::remove(path.c_str());
}

TEST_CASE("writes are byte-stable", "[wav][determinism]") {
  Rng rng(3);
  auto w = test::random_waveform(rng, 500);
  const auto p1 = temp_path("dse_det1.wav");
  const auto p2 = temp_path("dse_det2.wav");
  write_wav(p1, w);
  write_wav(p2, w);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), {});
  std::string s2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(s1 == s2);
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("rejects foreign encodings with a descriptive error", "[wav][errors]") {
  Rng rng(4);
  const auto path = temp_path("dse_bad.wav");
  write_wav(path, test::random_waveform(rng, 100), WavFormat::pcm16);

  // Flip the encoding tag (offset 20) to 2 = ADPCM.
  {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(20);
    const char two = 2;
    f.write(&two, 1);
  }
  try {
    read_wav(path);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("encoding") != std::string::npos);
  }

  // Not a RIFF file at all.
  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f << "definitely not audio, just sixty-some bytes of filler text....";
  }
  CHECK_THROWS_AS(read_wav(path), IoError);
  CHECK_THROWS_AS(read_wav(temp_path("dse_missing.wav")), IoError);
  std::remove(path.c_str());
}

TEST_CASE("rejects unsupported channel counts and depths", "[wav][errors]") {
  Rng rng(5);
  const auto path = temp_path("dse_bad2.wav");
  write_wav(path, test::random_waveform(rng, 64), WavFormat::pcm16);
  {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(22);  // channel count
    const char three = 3;
    f.write(&three, 1);
  }
  CHECK_THROWS_AS(read_wav(path), IoError);

  write_wav(path, test::random_waveform(rng, 64), WavFormat::pcm16);
  {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(34);  // bits per sample
    const char depth = 24;
    f.write(&depth, 1);
  }
  CHECK_THROWS_AS(read_wav(path), IoError);
  std::remove(path.c_str());
}
