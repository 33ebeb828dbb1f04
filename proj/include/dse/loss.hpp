// Copyright 2026 The dse authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Objectives and evaluation metrics. Each loss exists twice: a double
// precision metric on Waveforms for evaluation, and a tensor version wired
// through the tape for training. Both share the same formulas.

#ifndef DSE_LOSS_HPP
#define DSE_LOSS_HPP

#include <cmath>
#include <utility>
#include <vector>

#include "dse/nn.hpp"
#include "dse/signal.hpp"
#include "dse/tensor.hpp"

namespace dse {

struct LossConfig {
  double alpha_mrstft = 0.5;
  double alpha_sisnr = 0.5;
  std::vector<std::pair<int, int>> resolutions{{512, 256}, {1024, 512}, {256, 128}};
  double epsilon = 1e-8;

  void validate() const {
    if (alpha_mrstft < 0 || alpha_sisnr < 0 || (alpha_mrstft == 0 && alpha_sisnr == 0))
      throw ConfigError("LossConfig: weights must be >= 0 and not both zero");
    if (resolutions.empty()) throw ConfigError("LossConfig: need at least one resolution");
  }
};

// ---------------------------------------------------------------------------
// Scale-invariant SNR. The estimate is zero-meaned and rescaled to the
// reference norm before projecting, and epsilon enters both numerator and
// denominator relative to the reference energy; that keeps the value exactly
// scale invariant with a symmetric +-10*log10(1/eps) cap (~80 dB at 1e-8).
// ---------------------------------------------------------------------------

inline double si_snr(const Waveform& reference, const Waveform& estimate, double eps = 1e-8) {
  if (reference.size() != estimate.size())
    throw DimensionError("si_snr: length mismatch " + std::to_string(reference.size()) + " vs " +
                         std::to_string(estimate.size()));
  const std::size_t n = reference.size();
  if (n == 0) throw DimensionError("si_snr: empty inputs");

  double mr = 0.0, me = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mr += reference.samples[i];
    me += estimate.samples[i];
  }
  mr /= double(n);
  me /= double(n);

  double e_ref = 0.0, e_est = 0.0, dot = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = reference.samples[i] - mr;
    const double e = estimate.samples[i] - me;
    e_ref += r * r;
    e_est += e * e;
    dot += r * e;
  }
  if (e_ref <= 0.0) throw Error("si_snr: reference has zero energy");
  if (e_est <= 0.0) return 10.0 * std::log10(eps / (1.0 + eps));  // silent estimate: floor

  const double scale = std::sqrt(e_ref / e_est);
  const double dot_s = dot * scale;
  const double target_energy = dot_s * dot_s / e_ref;
  const double error_energy = e_ref - target_energy;  // |s_hat'|^2 = e_ref after rescale
  const double floor_term = eps * e_ref;
  return 10.0 * std::log10((target_energy + floor_term) /
                           (std::max(error_energy, 0.0) + floor_term));
}

// Improvement of the estimate over the unprocessed near-mic mixture.
inline double si_snri(const Waveform& reference, const Waveform& estimate,
                      const Waveform& mixture_near, double eps = 1e-8) {
  return si_snr(reference, estimate, eps) - si_snr(reference, mixture_near, eps);
}

// ---------------------------------------------------------------------------
// Single-resolution STFT loss: spectral convergence plus log-magnitude L1.
// ---------------------------------------------------------------------------

inline double stft_loss_single(const Waveform& reference, const Waveform& estimate, int window,
                               int hop, double eps = 1e-8) {
  if (reference.size() != estimate.size()) throw DimensionError("stft_loss: length mismatch");
  const StftConfig cfg(window, hop);
  const auto sr = stft(reference, cfg);
  const auto se = stft(estimate, cfg);

  double num = 0.0, den = 0.0, l1 = 0.0;
  for (std::size_t i = 0; i < sr.data.size(); ++i) {
    const double mr = std::abs(sr.data[i]);
    const double me = std::abs(se.data[i]);
    num += (mr - me) * (mr - me);
    den += mr * mr;
    l1 += std::abs(std::log(mr + eps) - std::log(me + eps));
  }
  const double sc = std::sqrt(num) / std::sqrt(std::max(den, 1e-300));
  return sc + l1 / double(sr.data.size());
}

inline double combined_loss(const Waveform& reference, const Waveform& estimate,
                            const LossConfig& cfg = {}) {
  cfg.validate();
  double mr = 0.0;
  for (const auto& [win, hop] : cfg.resolutions)
    mr += stft_loss_single(reference, estimate, win, hop, cfg.epsilon);
  return cfg.alpha_mrstft * mr - cfg.alpha_sisnr * si_snr(reference, estimate, cfg.epsilon);
}

// ---------------------------------------------------------------------------
// Differentiable versions
// ---------------------------------------------------------------------------

// SI-SNR in dB as a tensor; maximize this (the combined loss negates it).
template <typename T>
ad::Tensor<T> si_snr_t(ad::Tape<T>* tp, const ad::Tensor<T>& estimate,
                       const ad::Tensor<T>& reference, T eps = T(1e-8)) {
  if (estimate.numel() != reference.numel()) throw DimensionError("si_snr_t: length mismatch");
  using namespace ad;
  auto zm = [&](const Tensor<T>& x) { return sub(tp, x, reduce_mean(tp, x)); };
  auto e = zm(estimate);
  auto r = zm(reference);
  auto e_ref = reduce_sum(tp, mul(tp, r, r));
  auto e_est = add_const(tp, reduce_sum(tp, mul(tp, e, e)), T(1e-30));
  auto scaled = mul(tp, e, sqrt_op(tp, divide(tp, e_ref, e_est)));
  auto dot = reduce_sum(tp, mul(tp, scaled, r));
  auto target = mul(tp, r, divide(tp, dot, e_ref));
  auto err = sub(tp, scaled, target);
  auto floor_term = scale(tp, e_ref, eps);
  auto num = add(tp, reduce_sum(tp, mul(tp, target, target)), floor_term);
  auto den = add(tp, reduce_sum(tp, mul(tp, err, err)), floor_term);
  return scale(tp, log_op(tp, divide(tp, num, den)), T(10.0 / std::log(10.0)));
}

namespace detail {

template <typename T>
ad::Tensor<T> magnitude_t(ad::Tape<T>* tp, const ad::Tensor<T>& spec) {
  using namespace ad;
  const int K = spec.dim(1), F = spec.dim(2);
  auto re = reshape(tp, slice(tp, spec, 0, 0, 1), {K, F});
  auto im = reshape(tp, slice(tp, spec, 0, 1, 1), {K, F});
  return sqrt_op(
      tp, add_const(tp, add(tp, mul(tp, re, re), mul(tp, im, im)), T(1e-12)));
}

}  // namespace detail

template <typename T>
ad::Tensor<T> stft_loss_single_t(ad::Tape<T>* tp, const ad::Tensor<T>& estimate,
                                 const ad::Tensor<T>& reference, int window, int hop,
                                 T eps = T(1e-8)) {
  using namespace ad;
  const StftConfig cfg(window, hop);
  auto me = dse::detail::magnitude_t(tp, stft_op(tp, estimate, cfg));
  auto mr = dse::detail::magnitude_t(tp, stft_op(tp, reference, cfg));
  auto diff = sub(tp, mr, me);
  auto sc = sqrt_op(tp, divide(tp, reduce_sum(tp, mul(tp, diff, diff)),
                               add_const(tp, reduce_sum(tp, mul(tp, mr, mr)), T(1e-30))));
  auto l1 = reduce_mean(
      tp, abs_op(tp, sub(tp, log_op(tp, add_const(tp, mr, eps)),
                         log_op(tp, add_const(tp, me, eps)))));
  return add(tp, sc, l1);
}

template <typename T>
ad::Tensor<T> combined_loss_t(ad::Tape<T>* tp, const ad::Tensor<T>& estimate,
                              const ad::Tensor<T>& reference, const LossConfig& cfg = {}) {
  cfg.validate();
  using namespace ad;
  Tensor<T> total = Tensor<T>::scalar(T(0));
  bool first = true;
  for (const auto& [win, hop] : cfg.resolutions) {
    auto term = stft_loss_single_t(tp, estimate, reference, win, hop, T(cfg.epsilon));
    total = first ? term : add(tp, total, term);
    first = false;
  }
  auto weighted = scale(tp, total, T(cfg.alpha_mrstft));
  auto snr = scale(tp, si_snr_t(tp, estimate, reference, T(cfg.epsilon)), T(-cfg.alpha_sisnr));
  return add(tp, weighted, snr);
}

}  // namespace dse

#endif  // DSE_LOSS_HPP
