// Copyright 2026 The dse authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "dse/model.hpp"

#include <catch2/catch.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dse/speech.hpp"
#include "gradcheck.hpp"
#include "helpers.hpp"

using namespace dse;
using dse::test::DTape;
using dse::test::DTensor;
using dse::test::max_rel_grad_error;
using dse::test::project;
using dse::test::random_tensor;

namespace {

// Toy config exercising every block at gradcheck-friendly sizes.
ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.features = FeatureLayout::plain;  // 4 input channels
  cfg.encoder_channels = {4, 8, 8};
  cfg.kernel_f = 3;
  cfg.kernel_t = 2;
  cfg.lstm_hidden = 8;
  cfg.freq_hidden = 4;
  cfg.spatial_kernel = 3;
  cfg.bins = 9;
  return cfg;
}

std::string temp_file(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("default parameter budget", "[model]") {
  ModelConfig cfg;  // directional features, [16,32,48], 5x3
  const auto w = init_weights<float>(cfg, 7);
  const auto count = param_count(w);
  INFO("parameter count " << count);
  CHECK(count >= 66960);  // 74.4k - 10%
  CHECK(count <= 81840);  // 74.4k + 10%
  CHECK(count == 77637);  // layer-plan regression pin
}

TEST_CASE("param_count arithmetic", "[model]") {
  WeightMap<float> w;
  CHECK(param_count(w) == 0);
  w.add("conv.w", ad::Tensor<float>::zeros({16, 10, 5, 3}));
  w.add("conv.b", ad::Tensor<float>::zeros({16}));
  CHECK(param_count(w) == 2416);
}

TEST_CASE("config validation", "[model][errors]") {
  ModelConfig bad = tiny_config();
  bad.encoder_channels = {4, 8};  // needs 3 blocks
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = tiny_config();
  bad.encoder_channels = {6, 8, 8};  // 6 not divisible by reduction 4
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = tiny_config();
  bad.freq_hidden = 3;  // 2*3 != 8
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("channel attention gate", "[model][cbam]") {
  Rng rng(31);
  ModelConfig cfg = tiny_config();
  auto w = init_weights<double>(cfg, 3);

  SECTION("zero weights give a gate of exactly one half") {
    for (const char* n : {"dec0.att.fc1.w", "dec0.att.fc1.b", "dec0.att.fc2.w", "dec0.att.fc2.b"})
      for (auto& v : w.at(n).values()) v = 0.0;
    DTensor x = random_tensor(rng, {1, 8, 5, 6}, false);
    const auto gate = dse::detail::cbam_channel_gate<double>(nullptr, x, w, "dec0.att");
    REQUIRE(gate.shape() == ad::Shape{1, 8, 1, 6});
    for (std::int64_t i = 0; i < gate.numel(); ++i) CHECK(gate.data()[i] == Approx(0.5));
  }

  SECTION("constant-per-channel input makes avg and max paths agree") {
    DTensor x = DTensor::zeros({1, 8, 5, 6});
    Rng r2(5);
    for (int c = 0; c < 8; ++c) {
      const double v = uniform(r2, -1.0, 1.0);
      for (int i = 0; i < 5 * 6; ++i) x.data()[c * 30 + i] = v;
    }
    const auto gate = dse::detail::cbam_channel_gate<double>(nullptr, x, w, "dec0.att");

    // sigma(2 * mlp(pooled)) with both pooling paths equal to the constant.
    DTensor pooled = DTensor::zeros({1, 8});
    for (int c = 0; c < 8; ++c) pooled.data()[c] = x.data()[c * 30];
    auto h = ad::relu<double>(nullptr,
                              ad::add_row_bias<double>(nullptr,
                                                       ad::matmul<double>(nullptr, pooled,
                                                                          w.at("dec0.att.fc1.w")),
                                                       w.at("dec0.att.fc1.b")));
    auto z = ad::add_row_bias<double>(
        nullptr, ad::matmul<double>(nullptr, h, w.at("dec0.att.fc2.w")), w.at("dec0.att.fc2.b"));
    for (int c = 0; c < 8; ++c) {
      const double expect = 1.0 / (1.0 + std::exp(-2.0 * z.data()[c]));
      for (int t = 0; t < 6; ++t)
        CHECK(gate.data()[std::size_t(c) * 6 + t] == Approx(expect).epsilon(1e-9));
    }
  }

  SECTION("gate values live strictly inside (0,1)") {
    DTensor x = random_tensor(rng, {2, 8, 4, 5}, false, -3.0, 3.0);
    const auto gate = dse::detail::cbam_channel_gate<double>(nullptr, x, w, "skip1.att");
    for (std::int64_t i = 0; i < gate.numel(); ++i) {
      REQUIRE(gate.data()[i] > 0.0);
      REQUIRE(gate.data()[i] < 1.0);
    }
  }
}

TEST_CASE("spatial attention gate", "[model][cbam]") {
  Rng rng(32);
  ModelConfig cfg = tiny_config();
  auto w = init_weights<double>(cfg, 4);

  SECTION("zero input and zero conv give one half everywhere") {
    for (auto& v : w.at("dec1.att.spatial.w").values()) v = 0.0;
    for (auto& v : w.at("dec1.att.spatial.b").values()) v = 0.0;
    DTensor x = DTensor::zeros({1, 4, 5, 6});
    const auto gate = dse::detail::cbam_spatial_gate<double>(nullptr, x, w, "dec1.att");
    REQUIRE(gate.shape() == ad::Shape{1, 1, 5, 6});
    for (std::int64_t i = 0; i < gate.numel(); ++i) CHECK(gate.data()[i] == Approx(0.5));
  }

  SECTION("gate is [B,1,F,T] regardless of channel count") {
    DTensor x = random_tensor(rng, {2, 8, 5, 6}, false);
    const auto gate = dse::detail::cbam_spatial_gate<double>(nullptr, x, w, "dec0.att");
    REQUIRE(gate.shape() == ad::Shape{2, 1, 5, 6});
  }

  SECTION("single-channel input: mean map equals max map") {
    DTensor x = random_tensor(rng, {1, 1, 4, 5}, false);
    const auto avg = ad::reduce_mean_axes<double>(nullptr, x, {1});
    const auto mx = ad::reduce_max_axes<double>(nullptr, x, {1});
    for (std::int64_t i = 0; i < avg.numel(); ++i) REQUIRE(avg.data()[i] == mx.data()[i]);
  }
}

TEST_CASE("cbam gates pass gradcheck", "[model][cbam][gradcheck]") {
  Rng rng(33);
  ModelConfig cfg = tiny_config();
  auto w = init_weights<double>(cfg, 5);
  DTensor x = random_tensor(rng, {1, 8, 4, 5}, true);
  DTensor proj = random_tensor(rng, {1, 8, 4, 5}, false);

  auto loss = [&](DTape* tp) { return project(tp, dse::detail::cbam(tp, x, w, "dec0.att"), proj); };
  std::vector<DTensor> params{x,
                              w.at("dec0.att.fc1.w"),
                              w.at("dec0.att.fc1.b"),
                              w.at("dec0.att.fc2.w"),
                              w.at("dec0.att.fc2.b"),
                              w.at("dec0.att.spatial.w"),
                              w.at("dec0.att.spatial.b")};
  CHECK(max_rel_grad_error(loss, params) < 1e-4);
}

TEST_CASE("dprnn bottleneck", "[model][dprnn]") {
  Rng rng(34);
  ModelConfig cfg = tiny_config();
  auto w = init_weights<double>(cfg, 6);

  SECTION("zero input stays zero") {
    DTensor x = DTensor::zeros({1, 8, 3, 5});
    const auto y = dse::detail::dprnn_bottleneck<double>(nullptr, x, w);
    for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == Approx(0.0).margin(1e-12));
  }

  SECTION("causal along time") {
    DTensor x = random_tensor(rng, {1, 8, 3, 7}, false);
    const auto y0 = dse::detail::dprnn_bottleneck<double>(nullptr, x, w);
    DTensor xp = DTensor::from(x.shape(), x.values());
    for (int c = 0; c < 8; ++c)
      for (int f = 0; f < 3; ++f)
        for (int t = 5; t < 7; ++t) xp.data()[(std::size_t(c) * 3 + f) * 7 + t] += 2.0;
    const auto y1 = dse::detail::dprnn_bottleneck<double>(nullptr, xp, w);
    for (int c = 0; c < 8; ++c)
      for (int f = 0; f < 3; ++f)
        for (int t = 0; t < 5; ++t)
          REQUIRE(y0.data()[(std::size_t(c) * 3 + f) * 7 + t] ==
                  y1.data()[(std::size_t(c) * 3 + f) * 7 + t]);
  }

  SECTION("gradcheck at toy dims") {
    DTensor x = random_tensor(rng, {1, 8, 3, 4}, true);
    DTensor proj = random_tensor(rng, {1, 8, 3, 4}, false);
    auto loss = [&](DTape* tp) {
      return project(tp, dse::detail::dprnn_bottleneck(tp, x, w), proj);
    };
    std::vector<DTensor> params{x, w.at("freq.fwd.w"), w.at("freq.bwd.u"), w.at("time.w"),
                                w.at("time.u"), w.at("time.ln.g")};
    CHECK(max_rel_grad_error(loss, params) < 1e-4);
  }
}

TEST_CASE("mask network output and gradient flow", "[model]") {
  Rng rng(35);
  ModelConfig cfg = tiny_config();
  auto w = init_weights<float>(cfg, 7);
  ad::Tensor<float> x = ad::Tensor<float>::zeros({2, 4, 9, 6});
  for (std::int64_t i = 0; i < x.numel(); ++i) x.data()[i] = float(uniform(rng, -1.0, 1.0));

  ad::Tape<float> tape;
  auto mask = mask_network(&tape, x, cfg, w);
  REQUIRE(mask.shape() == ad::Shape{2, 1, 9, 6});
  for (std::int64_t i = 0; i < mask.numel(); ++i) {
    REQUIRE(mask.data()[i] > 0.0f);
    REQUIRE(mask.data()[i] < 1.0f);
  }

  // Generic input: the loss gradient reaches every trainable tensor.
  auto loss = ad::reduce_sum(&tape, mask);
  for (auto& [name, t] : w.entries()) t.zero_grad();
  tape.backward(loss);
  for (auto& [name, t] : w.entries()) {
    double mag = 0.0;
    for (std::int64_t i = 0; i < t.numel(); ++i) mag += std::abs(double(t.grad()[i]));
    INFO("layer " << name);
    REQUIRE(mag > 0.0);
  }
}

TEST_CASE("mask network is frame-causal", "[model][property]") {
  Rng rng(36);
  ModelConfig cfg = tiny_config();
  auto w = init_weights<float>(cfg, 8);
  ad::Tensor<float> x = ad::Tensor<float>::zeros({1, 4, 9, 8});
  for (std::int64_t i = 0; i < x.numel(); ++i) x.data()[i] = float(uniform(rng, -1.0, 1.0));
  const auto m0 = mask_network<float>(nullptr, x, cfg, w);

  ad::Tensor<float> xp = ad::Tensor<float>::from(x.shape(), x.values());
  const int cut = 5;
  for (int c = 0; c < 4; ++c)
    for (int f = 0; f < 9; ++f)
      for (int t = cut + 1; t < 8; ++t) xp.data()[(std::size_t(c) * 9 + f) * 8 + t] = 3.0f;
  const auto m1 = mask_network<float>(nullptr, xp, cfg, w);
  for (int f = 0; f < 9; ++f)
    for (int t = 0; t <= cut; ++t)
      REQUIRE(m0.data()[std::size_t(f) * 8 + t] == m1.data()[std::size_t(f) * 8 + t]);
}

TEST_CASE("near-mic routing carries the mask", "[model]") {
  Rng rng(37);
  ModelConfig cfg;  // full-size directional model
  auto w = init_weights<float>(cfg, 9);
  auto speech = synth_speech(rng(), 0.6, 16000);
  auto [c1, c2] = test::plane_wave_pair(speech, 45.0, 0.03);

  auto silent = c1;
  std::fill(silent.samples.begin(), silent.samples.end(), 0.0);

  SECTION("target below 90: channel 1 carries the output") {
    EnhancementRequest req{MultiChannelWaveform({c1, silent}), 45.0, 7.0};
    const auto with_ch1 = enhance<float>(req, cfg, w);
    CHECK(with_ch1.energy() > 1e-8);

    EnhancementRequest req2{MultiChannelWaveform({silent, c2}), 45.0, 7.0};
    const auto without_ch1 = enhance<float>(req2, cfg, w);
    CHECK(without_ch1.energy() == 0.0);  // mask times zero spectrum
  }

  SECTION("target above 90: channel 2 carries the output") {
    EnhancementRequest req{MultiChannelWaveform({c1, silent}), 135.0, 7.0};
    const auto without_ch2 = enhance<float>(req, cfg, w);
    CHECK(without_ch2.energy() == 0.0);
  }
}

TEST_CASE("enhancement request validation", "[model][errors]") {
  Rng rng(38);
  auto mono = test::random_waveform(rng, 2000);
  EnhancementRequest req;
  req.mixture = MultiChannelWaveform({mono});
  CHECK_THROWS_AS(req.validate(), DimensionError);

  req.mixture = MultiChannelWaveform({mono, mono});
  req.target_deg = 200.0;
  CHECK_THROWS_AS(req.validate(), ConfigError);
  req.target_deg = 90.0;
  req.width_deg = -1.0;
  CHECK_THROWS_AS(req.validate(), ConfigError);
}

TEST_CASE("weights round trip bit-exactly", "[model][weights]") {
  ModelConfig cfg = tiny_config();
  auto w = init_weights<float>(cfg, 11);
  const auto path = temp_file("dse_weights.bin");
  save_weights(w, path);
  const auto r = load_weights(path);
  REQUIRE(r.entries().size() == w.entries().size());
  for (const auto& [name, t] : w.entries()) {
    const auto& u = r.at(name);
    REQUIRE(u.shape() == t.shape());
    for (std::int64_t i = 0; i < t.numel(); ++i) REQUIRE(u.data()[i] == t.data()[i]);
  }
  validate_weights(r, cfg);
  std::remove(path.c_str());
}

TEST_CASE("weights file corruption is rejected", "[model][weights][errors]") {
  ModelConfig cfg = tiny_config();
  auto w = init_weights<float>(cfg, 12);
  const auto path = temp_file("dse_weights_bad.bin");
  save_weights(w, path);

  SECTION("truncation") {
    const auto full = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, full / 2);
    CHECK_THROWS_AS(load_weights(path), IoError);
  }

  SECTION("bad magic") {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.write("NOPE", 4);
    f.close();
    CHECK_THROWS_AS(load_weights(path), IoError);
  }

  SECTION("unsupported version") {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(4);
    const char v2[4] = {2, 0, 0, 0};
    f.write(v2, 4);
    f.close();
    try {
      load_weights(path);
      FAIL("expected version error");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find("version") != std::string::npos);
    }
  }

  SECTION("flipped payload byte fails the checksum") {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(64);
    const char junk = 0x5A;
    f.write(&junk, 1);
    f.close();
    try {
      load_weights(path);
      FAIL("expected checksum error");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find("checksum") != std::string::npos);
    }
  }

  SECTION("shape mismatch against a different config") {
    const auto r = load_weights(path);
    ModelConfig other = tiny_config();
    other.encoder_channels = {8, 8, 8};
    CHECK_THROWS_AS(validate_weights(r, other), Error);
  }
  std::remove(path.c_str());
}

TEST_CASE("width changes only edge beams in the feature path", "[model][property]") {
  Rng rng(39);
  auto speech = synth_speech(rng(), 0.5, 16000);
  auto [c1raw, c2raw] = test::plane_wave_pair(speech, 80.0, 0.03);
  MultiChannelWaveform mix({c1raw, c2raw});
  const StftConfig cfg;
  const auto fa = build_features(mix, 90.0, 5.0, FeatureLayout::directional, cfg);
  const auto fb = build_features(mix, 90.0, 25.0, FeatureLayout::directional, cfg);
  // mic planes and center-beam planes identical; edge planes differ
  for (int c : {0, 1, 3, 5, 6, 8})
    for (std::size_t i = 0; i < fa.data.size() / 10; ++i)
      REQUIRE(fa.data[std::size_t(c) * (fa.data.size() / 10) + i] ==
              fb.data[std::size_t(c) * (fa.data.size() / 10) + i]);
}
