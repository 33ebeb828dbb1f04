// Copyright 2026 The dse authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// The directional mask-estimation network: a 3-level causal conv U-Net over
// [B, channels, bins, frames] features, a dual-path recurrent bottleneck
// (bidirectional GRU over frequency, unidirectional LSTM over time), and
// attention gates on the skip paths and decoder stages. The decoder emits a
// sigmoid magnitude mask that multiplies the near microphone's STFT.

#ifndef DSE_MODEL_HPP
#define DSE_MODEL_HPP

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "dse/features.hpp"
#include "dse/nn.hpp"
#include "dse/tensor.hpp"

namespace dse {

struct ModelConfig {
  FeatureLayout features = FeatureLayout::directional;
  std::vector<int> encoder_channels{16, 32, 48};
  int kernel_f = 5, kernel_t = 3;   // encoder conv kernel
  int stride_f = 2, stride_t = 1;
  int lstm_hidden = 48;             // time-path LSTM
  int freq_hidden = 24;             // frequency-path GRU, per direction
  int cbam_reduction = 4;
  int spatial_kernel = 7;           // CBAM spatial gate conv
  int bins = 257;
  // Parameter-free log1p squash of the magnitude planes at the model input.
  // Raw linear magnitudes span several decades, which starves the shared
  // conv weights; the feature block itself stays uncompressed.
  bool compress_magnitudes = false;

  int in_channels() const { return feature_channel_count(features); }

  void validate() const {
    if (encoder_channels.size() != 3) throw ConfigError("ModelConfig: need 3 encoder blocks");
    for (int c : encoder_channels) {
      if (c <= 0) throw ConfigError("ModelConfig: non-positive channel width");
      if (c % cbam_reduction != 0)
        throw ConfigError("ModelConfig: channels must divide by the attention reduction " +
                          std::to_string(cbam_reduction));
    }
    if (2 * freq_hidden != encoder_channels[2])
      throw ConfigError("ModelConfig: bidirectional frequency hidden must rebuild C3");
    if (lstm_hidden != encoder_channels[2])
      throw ConfigError("ModelConfig: time LSTM hidden must match C3 for the residual path");
  }
};

// ---------------------------------------------------------------------------
// Named weights
// ---------------------------------------------------------------------------

template <typename T>
class WeightMap {
 public:
  void add(const std::string& name, ad::Tensor<T> t) {
    if (has(name)) throw Error("WeightMap: duplicate tensor '" + name + "'");
    entries_.emplace_back(name, std::move(t));
  }

  bool has(const std::string& name) const {
    for (const auto& [n, t] : entries_)
      if (n == name) return true;
    return false;
  }

  const ad::Tensor<T>& at(const std::string& name) const {
    for (const auto& [n, t] : entries_)
      if (n == name) return t;
    throw Error("WeightMap: missing tensor '" + name + "'");
  }
  ad::Tensor<T>& at(const std::string& name) {
    for (auto& [n, t] : entries_)
      if (n == name) return t;
    throw Error("WeightMap: missing tensor '" + name + "'");
  }

  const std::vector<std::pair<std::string, ad::Tensor<T>>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, ad::Tensor<T>>>& entries() { return entries_; }

  std::int64_t param_count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : entries_) n += t.numel();
    return n;
  }

 private:
  std::vector<std::pair<std::string, ad::Tensor<T>>> entries_;
};

template <typename T>
std::int64_t param_count(const WeightMap<T>& w) {
  return w.param_count();
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
ad::Tensor<T> uniform_tensor(Rng& rng, ad::Shape shape, double limit) {
  ad::Tensor<T> t = ad::Tensor<T>::zeros(std::move(shape), /*requires_grad=*/true);
  for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] = T(uniform(rng, -limit, limit));
  return t;
}

template <typename T>
ad::Tensor<T> const_tensor(ad::Shape shape, T v) {
  ad::Tensor<T> t = ad::Tensor<T>::zeros(std::move(shape), /*requires_grad=*/true);
  std::fill(t.values().begin(), t.values().end(), v);
  return t;
}

template <typename T>
void add_conv(WeightMap<T>& w, Rng& rng, const std::string& name, int co, int ci, int kf, int kt) {
  const double limit = std::sqrt(6.0 / (double(ci) * kf * kt + double(co) * kf * kt));
  w.add(name + ".w", uniform_tensor<T>(rng, {co, ci, kf, kt}, limit));
  w.add(name + ".b", const_tensor<T>({co}, T(0)));
}

// Transposed conv layout is [in, out, kf, kt].
template <typename T>
void add_convt(WeightMap<T>& w, Rng& rng, const std::string& name, int ci, int co, int kf,
               int kt) {
  const double limit = std::sqrt(6.0 / (double(ci) * kf * kt + double(co) * kf * kt));
  w.add(name + ".w", uniform_tensor<T>(rng, {ci, co, kf, kt}, limit));
  w.add(name + ".b", const_tensor<T>({co}, T(0)));
}

template <typename T>
void add_norm(WeightMap<T>& w, const std::string& name, int c) {
  w.add(name + ".g", const_tensor<T>({c}, T(1)));
  w.add(name + ".b", const_tensor<T>({c}, T(0)));
}

template <typename T>
void add_linear(WeightMap<T>& w, Rng& rng, const std::string& name, int in, int out) {
  const double limit = std::sqrt(6.0 / (in + out));
  w.add(name + ".w", uniform_tensor<T>(rng, {in, out}, limit));
  w.add(name + ".b", const_tensor<T>({out}, T(0)));
}

template <typename T>
void add_cbam(WeightMap<T>& w, Rng& rng, const std::string& name, int c, int r, int sk) {
  add_linear(w, rng, name + ".fc1", c, c / r);
  add_linear(w, rng, name + ".fc2", c / r, c);
  add_conv(w, rng, name + ".spatial", 1, 2, sk, sk);
}

template <typename T>
void add_lstm(WeightMap<T>& w, Rng& rng, const std::string& name, int in, int hidden) {
  const double limit = 1.0 / std::sqrt(double(hidden));
  w.add(name + ".w", uniform_tensor<T>(rng, {in, 4 * hidden}, limit));
  w.add(name + ".u", uniform_tensor<T>(rng, {hidden, 4 * hidden}, limit));
  ad::Tensor<T> b = const_tensor<T>({4 * hidden}, T(0));
  for (int i = hidden; i < 2 * hidden; ++i) b.data()[i] = T(1);  // open forget gates
  w.add(name + ".b", std::move(b));
}

template <typename T>
void add_gru(WeightMap<T>& w, Rng& rng, const std::string& name, int in, int hidden) {
  const double limit = 1.0 / std::sqrt(double(hidden));
  w.add(name + ".w", uniform_tensor<T>(rng, {in, 3 * hidden}, limit));
  w.add(name + ".u", uniform_tensor<T>(rng, {hidden, 3 * hidden}, limit));
  w.add(name + ".b", const_tensor<T>({3 * hidden}, T(0)));
}

}  // namespace detail

template <typename T>
WeightMap<T> init_weights(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(mix_seed(seed, 0x774554ULL));
  WeightMap<T> w;
  const int c1 = cfg.encoder_channels[0], c2 = cfg.encoder_channels[1],
            c3 = cfg.encoder_channels[2];
  const int kf = cfg.kernel_f, kt = cfg.kernel_t, r = cfg.cbam_reduction;

  detail::add_conv(w, rng, "enc0", c1, cfg.in_channels(), kf, kt);
  detail::add_norm(w, "enc0.ln", c1);
  detail::add_conv(w, rng, "enc1", c2, c1, kf, kt);
  detail::add_norm(w, "enc1.ln", c2);
  detail::add_conv(w, rng, "enc2", c3, c2, kf, kt);
  detail::add_norm(w, "enc2.ln", c3);

  detail::add_gru(w, rng, "freq.fwd", c3, cfg.freq_hidden);
  detail::add_gru(w, rng, "freq.bwd", c3, cfg.freq_hidden);
  detail::add_norm(w, "freq.ln", c3);
  detail::add_lstm(w, rng, "time", c3, cfg.lstm_hidden);
  detail::add_norm(w, "time.ln", c3);

  // Decoder transposed convs carry frequency-only kernels; the causal time
  // context already lives in the encoder and the time LSTM.
  detail::add_convt(w, rng, "dec0", c3, c2, kf, 1);
  detail::add_norm(w, "dec0.ln", c2);
  detail::add_cbam(w, rng, "dec0.att", c2, r, cfg.spatial_kernel);
  detail::add_cbam(w, rng, "skip1.att", c2, r, cfg.spatial_kernel);
  detail::add_convt(w, rng, "dec1", 2 * c2, c1, kf, 1);
  detail::add_norm(w, "dec1.ln", c1);
  detail::add_cbam(w, rng, "dec1.att", c1, r, cfg.spatial_kernel);
  detail::add_cbam(w, rng, "skip0.att", c1, r, cfg.spatial_kernel);
  detail::add_convt(w, rng, "mask", 2 * c1, 1, kf, 1);
  return w;
}

// ---------------------------------------------------------------------------
// Blocks
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void check_finite(const ad::Tensor<T>& t, const char* layer, bool enabled) {
  if (enabled && !t.finite())
    throw Error(std::string("forward: non-finite activations in layer '") + layer + "'");
}

// Channel attention gate, causal over time: pooling runs over all of
// frequency but only over frames seen so far, so the gate is [B,C,1,T].
template <typename T>
ad::Tensor<T> cbam_channel_gate(ad::Tape<T>* tp, const ad::Tensor<T>& x, const WeightMap<T>& w,
                                const std::string& name) {
  const int B = x.dim(0), C = x.dim(1), Tt = x.dim(3);
  auto avg = ad::cummean_last(tp, ad::reduce_mean_axes(tp, x, {2}));  // [B,C,1,T]
  auto mx = ad::cummax_last(tp, ad::reduce_max_axes(tp, x, {2}));

  auto mlp = [&](const ad::Tensor<T>& pooled) {
    auto flat = ad::reshape(tp, ad::permute(tp, pooled, {0, 3, 1, 2}), {B * Tt, C});
    auto h = ad::relu(tp, ad::add_row_bias(tp, ad::matmul(tp, flat, w.at(name + ".fc1.w")),
                                           w.at(name + ".fc1.b")));
    return ad::add_row_bias(tp, ad::matmul(tp, h, w.at(name + ".fc2.w")), w.at(name + ".fc2.b"));
  };
  auto gate = ad::sigmoid(tp, ad::add(tp, mlp(avg), mlp(mx)));  // [B*T, C]
  return ad::permute(tp, ad::reshape(tp, gate, {B, Tt, C, 1}), {0, 2, 3, 1});  // [B,C,1,T]
}

template <typename T>
ad::Tensor<T> cbam_spatial_gate(ad::Tape<T>* tp, const ad::Tensor<T>& x, const WeightMap<T>& w,
                                const std::string& name) {
  auto avg = ad::reduce_mean_axes(tp, x, {1});  // [B,1,F,T]
  auto mx = ad::reduce_max_axes(tp, x, {1});
  auto stacked = ad::concat(tp, {avg, mx}, 1);  // [B,2,F,T]
  auto conv = ad::conv2d(tp, stacked, w.at(name + ".spatial.w"), w.at(name + ".spatial.b"));
  return ad::sigmoid(tp, conv);  // [B,1,F,T]
}

// Channel gate then spatial gate, both multiplied into x.
template <typename T>
ad::Tensor<T> cbam(ad::Tape<T>* tp, const ad::Tensor<T>& x, const WeightMap<T>& w,
                   const std::string& name) {
  auto xc = ad::scale_channels_time(tp, x, cbam_channel_gate(tp, x, w, name));
  return ad::scale_map(tp, xc, cbam_spatial_gate(tp, xc, w, name));
}

// Frequency-direction bidirectional GRU and time-direction LSTM, each with a
// residual connection and channel layer norm.
template <typename T>
ad::Tensor<T> dprnn_bottleneck(ad::Tape<T>* tp, const ad::Tensor<T>& x, const WeightMap<T>& w) {
  const int B = x.dim(0), C = x.dim(1), F = x.dim(2), Tt = x.dim(3);

  ad::GruParams<T> fwd{w.at("freq.fwd.w"), w.at("freq.fwd.u"), w.at("freq.fwd.b")};
  ad::GruParams<T> bwd{w.at("freq.bwd.w"), w.at("freq.bwd.u"), w.at("freq.bwd.b")};
  auto seq_f = ad::reshape(tp, ad::permute(tp, x, {2, 0, 3, 1}), {F, B * Tt, C});
  auto freq_out = ad::bigru(tp, seq_f, fwd, bwd);  // [F, B*T, C]
  auto freq_spat =
      ad::permute(tp, ad::reshape(tp, freq_out, {F, B, Tt, C}), {1, 3, 0, 2});  // [B,C,F,T]
  auto y = ad::layer_norm_channels(tp, ad::add(tp, x, freq_spat), w.at("freq.ln.g"),
                                   w.at("freq.ln.b"));

  ad::LstmParams<T> tparams{w.at("time.w"), w.at("time.u"), w.at("time.b")};
  auto seq_t = ad::reshape(tp, ad::permute(tp, y, {3, 0, 2, 1}), {Tt, B * F, C});
  auto time_out = ad::lstm(tp, seq_t, tparams);  // [T, B*F, H=C]
  auto time_spat =
      ad::permute(tp, ad::reshape(tp, time_out, {Tt, B, F, C}), {1, 3, 2, 0});  // [B,C,F,T]
  return ad::layer_norm_channels(tp, ad::add(tp, y, time_spat), w.at("time.ln.g"),
                                 w.at("time.ln.b"));
}

}  // namespace detail

// Feature tensor [B, in_channels, bins, frames] -> sigmoid mask
// [B, 1, bins, frames].
template <typename T>
ad::Tensor<T> mask_network(ad::Tape<T>* tp, const ad::Tensor<T>& features, const ModelConfig& cfg,
                           const WeightMap<T>& w, bool finite_checks = false) {
  cfg.validate();
  using detail::check_finite;
  if (features.rank() != 4 || features.dim(1) != cfg.in_channels())
    throw DimensionError("mask_network: features must be [B," +
                         std::to_string(cfg.in_channels()) + ",F,T]");

  auto block = [&](const ad::Tensor<T>& in, const std::string& name) {
    auto c = ad::conv2d(tp, in, w.at(name + ".w"), w.at(name + ".b"), cfg.stride_f, cfg.stride_t);
    return ad::relu(tp, ad::layer_norm_channels(tp, c, w.at(name + ".ln.g"), w.at(name + ".ln.b")));
  };

  ad::Tensor<T> x = features;
  if (cfg.compress_magnitudes) {
    const int nmag = feature_magnitude_count(cfg.features);
    auto mags = ad::relu(tp, ad::slice(tp, x, 1, 0, nmag));  // magnitudes are >= 0 by contract
    auto rest = ad::slice(tp, x, 1, nmag, cfg.in_channels() - nmag);
    auto squashed = ad::log_op(tp, ad::add_const(tp, ad::scale(tp, mags, T(100)), T(1)));
    x = ad::concat(tp, {squashed, rest}, 1);
  }

  auto e0 = block(x, "enc0");
  check_finite(e0, "enc0", finite_checks);
  auto e1 = block(e0, "enc1");
  check_finite(e1, "enc1", finite_checks);
  auto e2 = block(e1, "enc2");
  check_finite(e2, "enc2", finite_checks);

  auto z = detail::dprnn_bottleneck(tp, e2, w);
  check_finite(z, "bottleneck", finite_checks);

  // dec0: C3 -> C2, upsample back to e1's frequency size.
  auto up0 = [&](const ad::Tensor<T>& in) {
    const int target_f = e1.dim(2);
    const int pf = (cfg.kernel_f - 1) / 2;
    const int base = (in.dim(2) - 1) * cfg.stride_f - 2 * pf + cfg.kernel_f;
    return ad::conv_transpose2d(tp, in, w.at("dec0.w"), w.at("dec0.b"), cfg.stride_f, 1,
                                target_f - base, 0);
  };
  auto d0 = ad::relu(
      tp, ad::layer_norm_channels(tp, up0(z), w.at("dec0.ln.g"), w.at("dec0.ln.b")));
  d0 = detail::cbam(tp, d0, w, "dec0.att");
  check_finite(d0, "dec0", finite_checks);
  auto j0 = ad::concat(tp, {d0, detail::cbam(tp, e1, w, "skip1.att")}, 1);

  auto up1 = [&](const ad::Tensor<T>& in) {
    const int target_f = e0.dim(2);
    const int pf = (cfg.kernel_f - 1) / 2;
    const int base = (in.dim(2) - 1) * cfg.stride_f - 2 * pf + cfg.kernel_f;
    return ad::conv_transpose2d(tp, in, w.at("dec1.w"), w.at("dec1.b"), cfg.stride_f, 1,
                                target_f - base, 0);
  };
  auto d1 = ad::relu(
      tp, ad::layer_norm_channels(tp, up1(j0), w.at("dec1.ln.g"), w.at("dec1.ln.b")));
  d1 = detail::cbam(tp, d1, w, "dec1.att");
  check_finite(d1, "dec1", finite_checks);
  auto j1 = ad::concat(tp, {d1, detail::cbam(tp, e0, w, "skip0.att")}, 1);

  const int pf = (cfg.kernel_f - 1) / 2;
  const int base = (j1.dim(2) - 1) * cfg.stride_f - 2 * pf + cfg.kernel_f;
  auto logits = ad::conv_transpose2d(tp, j1, w.at("mask.w"), w.at("mask.b"), cfg.stride_f, 1,
                                     features.dim(2) - base, 0);
  auto mask = ad::sigmoid(tp, logits);
  check_finite(mask, "mask", finite_checks);
  return mask;
}

// ---------------------------------------------------------------------------
// Whole-utterance enhancement
// ---------------------------------------------------------------------------

struct EnhancementRequest {
  MultiChannelWaveform mixture;  // exactly 2 channels
  double target_deg = 90.0;
  double width_deg = 7.0;

  void validate() const {
    if (mixture.channels.size() != 2)
      throw DimensionError("enhance: need a 2-channel mixture, got " +
                           std::to_string(mixture.channels.size()));
    if (target_deg < 0.0 || target_deg > 180.0)
      throw ConfigError("enhance: target azimuth must lie in [0, 180]");
    if (width_deg < 0.0) throw ConfigError("enhance: width must be >= 0");
  }
};

template <typename T>
ad::Tensor<T> feature_tensor(const FeatureBlock& fb) {
  ad::Tensor<T> t = ad::Tensor<T>::zeros({1, fb.channels, fb.bins, fb.frames});
  for (std::size_t i = 0; i < fb.data.size(); ++i) t.data()[i] = T(fb.data[i]);
  return t;
}

// Feature assembly for any model variant from a 2-channel mixture.
inline FeatureBlock build_features(const MultiChannelWaveform& mixture, double target_deg,
                                   double width_deg, FeatureLayout layout, const StftConfig& cfg,
                                   const ArrayGeometry& geometry = ArrayGeometry{}) {
  const auto s1 = stft(mixture.channels[0], cfg);
  const auto s2 = stft(mixture.channels[1], cfg);
  if (layout == FeatureLayout::plain || layout == FeatureLayout::plain_ipd)
    return assemble_features(layout, s1, s2, nullptr);
  const TripleBeams beams = triple_steering(s1, s2, target_deg, width_deg, geometry, cfg);
  FeatureBlock fb = assemble_features(layout, s1, s2, &beams);
  fb.target_deg = target_deg;
  fb.width_deg = width_deg;
  return fb;
}

// End-to-end enhancement: STFT both mics, steer, mask, apply to the near
// mic, resynthesize. The only lookahead is the STFT framing (window - hop).
template <typename T>
Waveform enhance(const EnhancementRequest& req, const ModelConfig& cfg, const WeightMap<T>& w,
                 const StftConfig& stft_cfg = StftConfig(), bool finite_checks = true) {
  req.validate();
  const int n = static_cast<int>(req.mixture.size());
  const FeatureBlock fb =
      build_features(req.mixture, req.target_deg, req.width_deg, cfg.features, stft_cfg);

  ad::Tensor<T> x = feature_tensor<T>(fb);
  detail::check_finite(x, "features", finite_checks);
  ad::Tensor<T> mask = mask_network<T>(nullptr, x, cfg, w, finite_checks);

  const int near = near_mic_select(req.target_deg);
  const auto near_spec = stft(req.mixture.channels[near], stft_cfg);
  const int K = near_spec.num_bins, F = near_spec.num_frames;
  ad::Tensor<T> mre = ad::Tensor<T>::zeros({2, K, F});
  for (int k = 0; k < K; ++k)
    for (int t = 0; t < F; ++t) {
      const T m = mask.data()[std::size_t(k) * F + t];
      mre.data()[std::size_t(k) * F + t] = m * T(near_spec.at(k, t).real());
      mre.data()[std::size_t(K + k) * F + t] = m * T(near_spec.at(k, t).imag());
    }
  ad::Tensor<T> y = ad::istft_op<T>(nullptr, mre, stft_cfg, n);
  detail::check_finite(y, "istft", finite_checks);

  Waveform out;
  out.sample_rate = req.mixture.sample_rate();
  out.samples.resize(n);
  for (int i = 0; i < n; ++i) out.samples[i] = double(y.data()[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Weights file: "CDUW", u32 version, u32 count, then per tensor u16 name
// length, name, u8 rank, u32 dims, f32 values; trailing CRC-32 of everything
// before it.
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint32_t crc32(const unsigned char* data, std::size_t n) {
  static const std::array<std::uint32_t, 256> table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t crc = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

template <typename V>
void append_le(std::string& out, V v) {
  std::uint64_t bits = 0;
  std::memcpy(&bits, &v, sizeof(V));
  for (std::size_t i = 0; i < sizeof(V); ++i) out.push_back(char((bits >> (8 * i)) & 0xFF));
}

}  // namespace detail

inline constexpr std::uint32_t kWeightsVersion = 1;

inline void save_weights(const WeightMap<float>& w, const std::string& path) {
  std::string buf = "CDUW";
  detail::append_le<std::uint32_t>(buf, kWeightsVersion);
  detail::append_le<std::uint32_t>(buf, std::uint32_t(w.entries().size()));
  for (const auto& [name, t] : w.entries()) {
    detail::append_le<std::uint16_t>(buf, std::uint16_t(name.size()));
    buf += name;
    detail::append_le<std::uint8_t>(buf, std::uint8_t(t.rank()));
    for (int i = 0; i < t.rank(); ++i) detail::append_le<std::uint32_t>(buf, std::uint32_t(t.dim(i)));
    for (std::int64_t i = 0; i < t.numel(); ++i) detail::append_le<float>(buf, t.data()[i]);
  }
  detail::append_le<std::uint32_t>(
      buf, detail::crc32(reinterpret_cast<const unsigned char*>(buf.data()), buf.size()));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("save_weights: cannot open '" + path + "'");
  f.write(buf.data(), std::streamsize(buf.size()));
  if (!f) throw IoError("save_weights: short write to '" + path + "'");
}

inline WeightMap<float> load_weights(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("load_weights: cannot open '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (pos + n > buf.size()) throw IoError("load_weights: truncated file '" + path + "'");
  };
  auto read_u = [&](auto& v) {
    need(sizeof(v));
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(v); ++i)
      bits |= std::uint64_t(std::uint8_t(buf[pos + i])) << (8 * i);
    std::memcpy(&v, &bits, sizeof(v));
    pos += sizeof(v);
  };

  need(4);
  if (buf.compare(0, 4, "CDUW") != 0) throw IoError("load_weights: bad magic in '" + path + "'");
  pos = 4;
  std::uint32_t version = 0, count = 0;
  read_u(version);
  if (version != kWeightsVersion)
    throw IoError("load_weights: unsupported format version " + std::to_string(version));
  read_u(count);

  if (buf.size() < 4) throw IoError("load_weights: truncated file '" + path + "'");
  const std::uint32_t stored_crc = [&] {
    std::uint32_t c = 0;
    for (int i = 0; i < 4; ++i) c |= std::uint32_t(std::uint8_t(buf[buf.size() - 4 + i])) << (8 * i);
    return c;
  }();
  const std::uint32_t computed =
      detail::crc32(reinterpret_cast<const unsigned char*>(buf.data()), buf.size() - 4);
  if (stored_crc != computed) throw IoError("load_weights: checksum mismatch in '" + path + "'");

  WeightMap<float> w;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint16_t name_len = 0;
    read_u(name_len);
    need(name_len);
    std::string name = buf.substr(pos, name_len);
    pos += name_len;
    std::uint8_t rank = 0;
    read_u(rank);
    ad::Shape shape(rank);
    for (int d = 0; d < rank; ++d) {
      std::uint32_t dim = 0;
      read_u(dim);
      shape[d] = int(dim);
    }
    const std::int64_t n = ad::shape_numel(shape);
    std::vector<float> values(n);
    for (std::int64_t j = 0; j < n; ++j) {
      float v = 0;
      read_u(v);
      values[j] = v;
    }
    ad::Tensor<float> t = ad::Tensor<float>::from(std::move(shape), std::move(values),
                                                  /*requires_grad=*/true);
    w.add(name, std::move(t));
  }
  if (pos != buf.size() - 4) throw IoError("load_weights: trailing garbage in '" + path + "'");
  return w;
}

// Shape/name agreement with a config's layer plan.
template <typename T>
void validate_weights(const WeightMap<T>& w, const ModelConfig& cfg) {
  const WeightMap<T> expect = init_weights<T>(cfg, 0);
  if (w.entries().size() != expect.entries().size())
    throw Error("weights: tensor count mismatch vs model config");
  for (const auto& [name, t] : expect.entries()) {
    if (!w.has(name)) throw Error("weights: missing tensor '" + name + "'");
    if (w.at(name).shape() != t.shape())
      throw Error("weights: shape mismatch for '" + name + "': got " +
                  ad::shape_str(w.at(name).shape()) + ", want " + ad::shape_str(t.shape()));
  }
}

}  // namespace dse

#endif  // DSE_MODEL_HPP
