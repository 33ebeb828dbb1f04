// Copyright 2026 The dse authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Network layers on top of the tensor engine: 2-D convolutions with causal
// time padding, their exact transposed counterparts, channel layer norm,
// LSTM/GRU recurrences composed from primitives, and differentiable
// STFT/inverse-STFT ops whose backward passes are the exact adjoints.

#ifndef DSE_NN_HPP
#define DSE_NN_HPP

#include <cmath>
#include <complex>
#include <memory>
#include <vector>

#include "dse/signal.hpp"
#include "dse/tensor.hpp"

namespace dse::ad {

// ---------------------------------------------------------------------------
// Convolution core. Frequency axis: symmetric zero padding (KF-1)/2 and
// stride sf. Time axis: left-only padding (KT-1), so output frame t never
// reads an input frame past t.
// ---------------------------------------------------------------------------

struct Conv2dGeom {
  int B, Ci, Fi, Ti;
  int Co, KF, KT;
  int sf = 1, st = 1;
  int pf = 0;
  int Fo = 0, To = 0;

  static Conv2dGeom make(int B, int Ci, int Fi, int Ti, int Co, int KF, int KT, int sf, int st) {
    Conv2dGeom g{B, Ci, Fi, Ti, Co, KF, KT, sf, st};
    g.pf = (KF - 1) / 2;
    g.Fo = (Fi + 2 * g.pf - KF) / sf + 1;
    g.To = (Ti - 1) / st + 1;
    if (g.Fo <= 0 || g.To <= 0) throw DimensionError("conv2d: input too small for kernel");
    return g;
  }
  std::int64_t col_rows() const { return std::int64_t(Ci) * KF * KT; }
  std::int64_t col_cols() const { return std::int64_t(Fo) * To; }
};

namespace detail {

template <typename T>
void im2col(const Conv2dGeom& g, const T* x, T* col) {
  const int pt = g.KT - 1;
  for (int c = 0; c < g.Ci; ++c)
    for (int kf = 0; kf < g.KF; ++kf)
      for (int kt = 0; kt < g.KT; ++kt) {
        T* row = col + ((std::size_t(c) * g.KF + kf) * g.KT + kt) * g.col_cols();
        for (int fo = 0; fo < g.Fo; ++fo) {
          const int fi = fo * g.sf - g.pf + kf;
          T* out = row + std::size_t(fo) * g.To;
          if (fi < 0 || fi >= g.Fi) {
            std::fill(out, out + g.To, T(0));
            continue;
          }
          const T* src = x + (std::size_t(c) * g.Fi + fi) * g.Ti;
          for (int to = 0; to < g.To; ++to) {
            const int ti = to * g.st - pt + kt;
            out[to] = (ti >= 0 && ti < g.Ti) ? src[ti] : T(0);
          }
        }
      }
}

template <typename T>
void col2im_add(const Conv2dGeom& g, const T* col, T* x) {
  const int pt = g.KT - 1;
  for (int c = 0; c < g.Ci; ++c)
    for (int kf = 0; kf < g.KF; ++kf)
      for (int kt = 0; kt < g.KT; ++kt) {
        const T* row = col + ((std::size_t(c) * g.KF + kf) * g.KT + kt) * g.col_cols();
        for (int fo = 0; fo < g.Fo; ++fo) {
          const int fi = fo * g.sf - g.pf + kf;
          if (fi < 0 || fi >= g.Fi) continue;
          T* dst = x + (std::size_t(c) * g.Fi + fi) * g.Ti;
          const T* src = row + std::size_t(fo) * g.To;
          for (int to = 0; to < g.To; ++to) {
            const int ti = to * g.st - pt + kt;
            if (ti >= 0 && ti < g.Ti) dst[ti] += src[to];
          }
        }
      }
}

// y[b] = w · col(x[b]) (+ bias later); w is [Co x Ci*KF*KT].
template <typename T>
void conv_fwd(const Conv2dGeom& g, const T* x, const T* w, T* y, T* col_scratch) {
  for (int b = 0; b < g.B; ++b) {
    im2col(g, x + std::size_t(b) * g.Ci * g.Fi * g.Ti, col_scratch);
    T* yb = y + std::size_t(b) * g.Co * g.col_cols();
    std::fill(yb, yb + std::size_t(g.Co) * g.col_cols(), T(0));
    gemm_nn_acc(g.Co, int(g.col_rows()), int(g.col_cols()), w, col_scratch, yb);
  }
}

// dx += w^T applied to gy (transposed data path).
template <typename T>
void conv_bwd_data_acc(const Conv2dGeom& g, const T* gy, const T* w, T* dx, T* col_scratch) {
  for (int b = 0; b < g.B; ++b) {
    std::fill(col_scratch, col_scratch + g.col_rows() * g.col_cols(), T(0));
    gemm_tn_acc(int(g.col_rows()), g.Co, int(g.col_cols()), w,
                gy + std::size_t(b) * g.Co * g.col_cols(), col_scratch);
    col2im_add(g, col_scratch, dx + std::size_t(b) * g.Ci * g.Fi * g.Ti);
  }
}

// dw += gy · col(x)^T
template <typename T>
void conv_bwd_w_acc(const Conv2dGeom& g, const T* x, const T* gy, T* dw, T* col_scratch) {
  for (int b = 0; b < g.B; ++b) {
    im2col(g, x + std::size_t(b) * g.Ci * g.Fi * g.Ti, col_scratch);
    gemm_nt_acc(g.Co, int(g.col_cols()), int(g.col_rows()),
                gy + std::size_t(b) * g.Co * g.col_cols(), col_scratch, dw);
  }
}

}  // namespace detail

template <typename T>
Tensor<T> conv2d(Tape<T>* tp, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 int stride_f = 1, int stride_t = 1) {
  if (x.rank() != 4 || w.rank() != 4) throw DimensionError("conv2d: x and w must be rank 4");
  if (w.dim(1) != x.dim(1))
    throw DimensionError("conv2d: channel mismatch " + shape_str(x.shape()) + " vs " +
                         shape_str(w.shape()));
  if (bias.numel() != w.dim(0)) throw DimensionError("conv2d: bias size mismatch");
  const auto g = Conv2dGeom::make(x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2),
                                  w.dim(3), stride_f, stride_t);
  Tensor<T> out = Tensor<T>::zeros({g.B, g.Co, g.Fo, g.To});
  std::vector<T> col(g.col_rows() * g.col_cols());
  detail::conv_fwd(g, x.data(), w.data(), out.data(), col.data());
  const std::int64_t plane = std::int64_t(g.Fo) * g.To;
  for (int b = 0; b < g.B; ++b)
    for (int c = 0; c < g.Co; ++c) {
      T* p = out.data() + (std::size_t(b) * g.Co + c) * plane;
      const T bv = bias.data()[c];
      for (std::int64_t i = 0; i < plane; ++i) p[i] += bv;
    }

  if (detail::recording(tp, out, x, w, bias)) {
    auto sx = x.storage(), sw = w.storage(), sb = bias.storage(), so = out.storage();
    tp->record([sx, sw, sb, so, g, plane] {
      if (so->grad.empty()) return;
      std::vector<T> col(g.col_rows() * g.col_cols());
      if (sb->requires_grad) {
        sb->ensure_grad();
        for (int b = 0; b < g.B; ++b)
          for (int c = 0; c < g.Co; ++c) {
            const T* gp = so->grad.data() + (std::size_t(b) * g.Co + c) * plane;
            T acc = T(0);
            for (std::int64_t i = 0; i < plane; ++i) acc += gp[i];
            sb->grad[c] += acc;
          }
      }
      if (sw->requires_grad) {
        sw->ensure_grad();
        detail::conv_bwd_w_acc(g, sx->value.data(), so->grad.data(), sw->grad.data(), col.data());
      }
      if (sx->requires_grad) {
        sx->ensure_grad();
        detail::conv_bwd_data_acc(g, so->grad.data(), sw->value.data(), sx->grad.data(),
                                  col.data());
      }
    });
  }
  return out;
}

// Exact adjoint of conv2d's forward map. Weight layout [Ci, Co, KF, KT]
// (input channels first). Frequency upsamples by stride_f; the time axis is
// the adjoint of the causal convolution, cropped to (T-1)*stride_t + 1 (+
// out_pad_t) frames.
template <typename T>
Tensor<T> conv_transpose2d(Tape<T>* tp, const Tensor<T>& x, const Tensor<T>& w,
                           const Tensor<T>& bias, int stride_f = 1, int stride_t = 1,
                           int out_pad_f = 0, int out_pad_t = 0) {
  if (x.rank() != 4 || w.rank() != 4)
    throw DimensionError("conv_transpose2d: x and w must be rank 4");
  if (w.dim(0) != x.dim(1))
    throw DimensionError("conv_transpose2d: channel mismatch " + shape_str(x.shape()) + " vs " +
                         shape_str(w.shape()));
  const int Co = w.dim(1);
  if (bias.numel() != Co) throw DimensionError("conv_transpose2d: bias size mismatch");
  const int KF = w.dim(2), KT = w.dim(3);
  const int pf = (KF - 1) / 2;
  const int Fo = (x.dim(2) - 1) * stride_f - 2 * pf + KF + out_pad_f;
  const int To = (x.dim(3) - 1) * stride_t + 1 + out_pad_t;
  if (Fo <= 0 || To <= 0) throw DimensionError("conv_transpose2d: output would be empty");

  // The underlying convolution maps the output space back onto x's shape.
  const auto g = Conv2dGeom::make(x.dim(0), Co, Fo, To, x.dim(1), KF, KT, stride_f, stride_t);
  if (g.Fo != x.dim(2) || g.To != x.dim(3))
    throw DimensionError("conv_transpose2d: geometry does not invert (check out_pad)");

  Tensor<T> out = Tensor<T>::zeros({g.B, Co, Fo, To});
  std::vector<T> col(g.col_rows() * g.col_cols());
  detail::conv_bwd_data_acc(g, x.data(), w.data(), out.data(), col.data());
  const std::int64_t plane = std::int64_t(Fo) * To;
  for (int b = 0; b < g.B; ++b)
    for (int c = 0; c < Co; ++c) {
      T* p = out.data() + (std::size_t(b) * Co + c) * plane;
      const T bv = bias.data()[c];
      for (std::int64_t i = 0; i < plane; ++i) p[i] += bv;
    }

  if (detail::recording(tp, out, x, w, bias)) {
    auto sx = x.storage(), sw = w.storage(), sb = bias.storage(), so = out.storage();
    tp->record([sx, sw, sb, so, g, plane, Co] {
      if (so->grad.empty()) return;
      std::vector<T> col(g.col_rows() * g.col_cols());
      if (sb->requires_grad) {
        sb->ensure_grad();
        for (int b = 0; b < g.B; ++b)
          for (int c = 0; c < Co; ++c) {
            const T* gp = so->grad.data() + (std::size_t(b) * Co + c) * plane;
            T acc = T(0);
            for (std::int64_t i = 0; i < plane; ++i) acc += gp[i];
            sb->grad[c] += acc;
          }
      }
      if (sw->requires_grad) {
        sw->ensure_grad();
        detail::conv_bwd_w_acc(g, so->grad.data(), sx->value.data(), sw->grad.data(), col.data());
      }
      if (sx->requires_grad) {
        sx->ensure_grad();
        std::vector<T> ybuf(std::size_t(g.B) * g.Co * g.col_cols(), T(0));
        detail::conv_fwd(g, so->grad.data(), sw->value.data(), ybuf.data(), col.data());
        for (std::size_t i = 0; i < ybuf.size(); ++i) sx->grad[i] += ybuf[i];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Layer normalization over the channel axis of [B,C,F,T], one statistic per
// (b, f, t) position.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> layer_norm_channels(Tape<T>* tp, const Tensor<T>& x, const Tensor<T>& gamma,
                              const Tensor<T>& beta, T eps = T(1e-5)) {
  if (x.rank() != 4) throw DimensionError("layer_norm_channels: rank 4 expected");
  const int B = x.dim(0), C = x.dim(1), F = x.dim(2), Tt = x.dim(3);
  if (gamma.numel() != C || beta.numel() != C)
    throw DimensionError("layer_norm_channels: gamma/beta must have C elements");
  const std::int64_t plane = std::int64_t(F) * Tt;
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  auto istd = std::make_shared<std::vector<T>>(std::size_t(B) * plane);
  auto mean = std::make_shared<std::vector<T>>(std::size_t(B) * plane);

  for (int b = 0; b < B; ++b)
    for (std::int64_t p = 0; p < plane; ++p) {
      const std::size_t base = std::size_t(b) * C * plane + p;
      T mu = T(0);
      for (int c = 0; c < C; ++c) mu += x.data()[base + std::size_t(c) * plane];
      mu /= T(C);
      T var = T(0);
      for (int c = 0; c < C; ++c) {
        const T d = x.data()[base + std::size_t(c) * plane] - mu;
        var += d * d;
      }
      var /= T(C);
      const T is = T(1) / std::sqrt(var + eps);
      (*mean)[std::size_t(b) * plane + p] = mu;
      (*istd)[std::size_t(b) * plane + p] = is;
      for (int c = 0; c < C; ++c) {
        const T xhat = (x.data()[base + std::size_t(c) * plane] - mu) * is;
        out.data()[base + std::size_t(c) * plane] = gamma.data()[c] * xhat + beta.data()[c];
      }
    }

  if (detail::recording(tp, out, x, gamma, beta)) {
    auto sx = x.storage(), sg = gamma.storage(), sb = beta.storage(), so = out.storage();
    tp->record([sx, sg, sb, so, mean, istd, B, C, plane] {
      if (so->grad.empty()) return;
      for (int b = 0; b < B; ++b)
        for (std::int64_t p = 0; p < plane; ++p) {
          const std::size_t base = std::size_t(b) * C * plane + p;
          const T mu = (*mean)[std::size_t(b) * plane + p];
          const T is = (*istd)[std::size_t(b) * plane + p];
          T m1 = T(0), m2 = T(0);
          for (int c = 0; c < C; ++c) {
            const T xhat = (sx->value[base + std::size_t(c) * plane] - mu) * is;
            const T gy = so->grad[base + std::size_t(c) * plane] * sg->value[c];
            m1 += gy;
            m2 += gy * xhat;
          }
          m1 /= T(C);
          m2 /= T(C);
          for (int c = 0; c < C; ++c) {
            const std::size_t i = base + std::size_t(c) * plane;
            const T xhat = (sx->value[i] - mu) * is;
            const T gy = so->grad[i] * sg->value[c];
            if (sx->requires_grad) {
              sx->ensure_grad();
              sx->grad[i] += is * (gy - m1 - xhat * m2);
            }
            if (sg->requires_grad) {
              sg->ensure_grad();
              sg->grad[c] += so->grad[i] * xhat;
            }
            if (sb->requires_grad) {
              sb->ensure_grad();
              sb->grad[c] += so->grad[i];
            }
          }
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Recurrences, composed from primitives so the tape provides the backward
// pass. Inputs are [seq, batch, features]; both run with zero initial state.
// ---------------------------------------------------------------------------

template <typename T>
struct LstmParams {
  Tensor<T> w;  // [in, 4H], gate order i f g o
  Tensor<T> u;  // [H, 4H]
  Tensor<T> b;  // [4H]
};

template <typename T>
Tensor<T> lstm(Tape<T>* tp, const Tensor<T>& x, const LstmParams<T>& p) {
  if (x.rank() != 3) throw DimensionError("lstm: input must be [seq, batch, in]");
  const int S = x.dim(0), N = x.dim(1);
  const int H = p.u.dim(0);
  Tensor<T> h = Tensor<T>::zeros({N, H});
  Tensor<T> c = Tensor<T>::zeros({N, H});
  std::vector<Tensor<T>> steps;
  steps.reserve(S);
  for (int t = 0; t < S; ++t) {
    Tensor<T> xt = reshape(tp, slice(tp, x, 0, t, 1), {N, x.dim(2)});
    Tensor<T> pre =
        add_row_bias(tp, add(tp, matmul(tp, xt, p.w), matmul(tp, h, p.u)), p.b);
    Tensor<T> gi = sigmoid(tp, slice(tp, pre, 1, 0, H));
    Tensor<T> gf = sigmoid(tp, slice(tp, pre, 1, H, H));
    Tensor<T> gg = tanh_op(tp, slice(tp, pre, 1, 2 * H, H));
    Tensor<T> go = sigmoid(tp, slice(tp, pre, 1, 3 * H, H));
    c = add(tp, mul(tp, gf, c), mul(tp, gi, gg));
    h = mul(tp, go, tanh_op(tp, c));
    steps.push_back(reshape(tp, h, {1, N, H}));
  }
  return concat(tp, steps, 0);
}

template <typename T>
struct GruParams {
  Tensor<T> w;  // [in, 3H], gate order z r n
  Tensor<T> u;  // [H, 3H]
  Tensor<T> b;  // [3H]
};

template <typename T>
Tensor<T> gru(Tape<T>* tp, const Tensor<T>& x, const GruParams<T>& p) {
  if (x.rank() != 3) throw DimensionError("gru: input must be [seq, batch, in]");
  const int S = x.dim(0), N = x.dim(1);
  const int H = p.u.dim(0);
  Tensor<T> h = Tensor<T>::zeros({N, H});
  std::vector<Tensor<T>> steps;
  steps.reserve(S);
  for (int t = 0; t < S; ++t) {
    Tensor<T> xt = reshape(tp, slice(tp, x, 0, t, 1), {N, x.dim(2)});
    Tensor<T> px = add_row_bias(tp, matmul(tp, xt, p.w), p.b);
    Tensor<T> ph = matmul(tp, h, p.u);
    Tensor<T> z = sigmoid(tp, add(tp, slice(tp, px, 1, 0, H), slice(tp, ph, 1, 0, H)));
    Tensor<T> r = sigmoid(tp, add(tp, slice(tp, px, 1, H, H), slice(tp, ph, 1, H, H)));
    Tensor<T> n =
        tanh_op(tp, add(tp, slice(tp, px, 1, 2 * H, H), mul(tp, r, slice(tp, ph, 1, 2 * H, H))));
    // h' = (1 - z) n + z h
    h = add(tp, mul(tp, z, h), sub(tp, n, mul(tp, z, n)));
    steps.push_back(reshape(tp, h, {1, N, H}));
  }
  return concat(tp, steps, 0);
}

// Bidirectional GRU along the sequence axis; outputs [S, N, 2H].
template <typename T>
Tensor<T> bigru(Tape<T>* tp, const Tensor<T>& x, const GruParams<T>& fwd,
                const GruParams<T>& bwd) {
  Tensor<T> a = gru(tp, x, fwd);
  Tensor<T> b = flip0(tp, gru(tp, flip0(tp, x), bwd));
  return concat(tp, {a, b}, 2);
}

// ---------------------------------------------------------------------------
// Differentiable STFT / inverse STFT. Framing matches dse::stft exactly:
// front pad (window-hop), ceil(N/hop)+1 frames, analysis-window-only
// synthesis normalized by the COLA constant. Output packs (real, imag) as
// [2, bins, frames]; the backward passes are the exact adjoints, evaluated
// with the same FFT.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> stft_op(Tape<T>* tp, const Tensor<T>& x, const StftConfig& cfg) {
  if (x.rank() != 1) throw DimensionError("stft_op: input must be rank 1");
  const int n = x.dim(0);
  if (n < cfg.window_size) throw DimensionError("stft_op: input shorter than one window");
  const int K = cfg.bins(), W = cfg.window_size, hop = cfg.hop_size;
  const int pad = W - hop;
  const int frames = stft_num_frames(n, cfg);

  Tensor<T> out = Tensor<T>::zeros({2, K, frames});
  std::vector<std::complex<double>> buf(W);
  for (int t = 0; t < frames; ++t) {
    const int start = t * hop - pad;
    for (int i = 0; i < W; ++i) {
      const int src = start + i;
      buf[i] = (src >= 0 && src < n) ? cfg.window[i] * double(x.data()[src]) : 0.0;
    }
    fft_inplace(buf, false);
    for (int k = 0; k < K; ++k) {
      out.data()[std::size_t(0) * K * frames + std::size_t(k) * frames + t] = T(buf[k].real());
      out.data()[std::size_t(1) * K * frames + std::size_t(k) * frames + t] = T(buf[k].imag());
    }
  }
  if (detail::recording(tp, out, x)) {
    auto sx = x.storage(), so = out.storage();
    tp->record([sx, so, cfg, n, K, W, hop, pad, frames] {
      if (so->grad.empty()) return;
      sx->ensure_grad();
      std::vector<std::complex<double>> buf(W);
      for (int t = 0; t < frames; ++t) {
        std::fill(buf.begin(), buf.end(), std::complex<double>(0.0, 0.0));
        for (int k = 0; k < K; ++k) {
          buf[k] = {double(so->grad[std::size_t(0) * K * frames + std::size_t(k) * frames + t]),
                    double(so->grad[std::size_t(1) * K * frames + std::size_t(k) * frames + t])};
        }
        // adjoint of the one-sided DFT: dx[n] += w[n] * Re(sum_k G_k e^{+jwkn})
        fft_inplace(buf, true);
        const int start = t * hop - pad;
        for (int i = 0; i < W; ++i) {
          const int dst = start + i;
          if (dst >= 0 && dst < n)
            sx->grad[dst] += T(cfg.window[i] * buf[i].real() * double(W));
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> istft_op(Tape<T>* tp, const Tensor<T>& spec, const StftConfig& cfg, int n_out) {
  if (spec.rank() != 3 || spec.dim(0) != 2) throw DimensionError("istft_op: spec must be [2,K,T]");
  const int K = spec.dim(1), frames = spec.dim(2);
  if (K != cfg.bins()) throw DimensionError("istft_op: bin count does not match config");
  const int W = cfg.window_size, hop = cfg.hop_size, pad = W - hop;
  const double cola = cfg.cola_constant();

  Tensor<T> out = Tensor<T>::zeros({n_out});
  std::vector<double> acc(std::size_t(pad) + std::size_t(frames - 1) * hop + W + 1, 0.0);
  std::vector<std::complex<double>> buf(W);
  auto re_at = [&](int k, int t) {
    return double(spec.data()[std::size_t(0) * K * frames + std::size_t(k) * frames + t]);
  };
  auto im_at = [&](int k, int t) {
    return double(spec.data()[std::size_t(1) * K * frames + std::size_t(k) * frames + t]);
  };
  for (int t = 0; t < frames; ++t) {
    for (int k = 0; k < K; ++k) buf[k] = {re_at(k, t), im_at(k, t)};
    for (int k = 1; k < W / 2; ++k) buf[W - k] = std::conj(buf[k]);
    fft_inplace(buf, true);
    double* dst = acc.data() + std::size_t(t) * hop;
    for (int i = 0; i < W; ++i) dst[i] += buf[i].real();
  }
  for (int i = 0; i < n_out; ++i)
    out.data()[i] = T(i + pad < int(acc.size()) ? acc[i + pad] / cola : 0.0);

  if (detail::recording(tp, out, spec)) {
    auto ss = spec.storage(), so = out.storage();
    tp->record([ss, so, cfg, n_out, K, W, hop, pad, frames, cola] {
      if (so->grad.empty()) return;
      ss->ensure_grad();
      std::vector<std::complex<double>> buf(W);
      for (int t = 0; t < frames; ++t) {
        const int start = t * hop - pad;  // position of this frame in output coords
        for (int i = 0; i < W; ++i) {
          const int src = start + i;
          buf[i] = (src >= 0 && src < n_out) ? double(so->grad[src]) / cola : 0.0;
        }
        fft_inplace(buf, false);
        for (int k = 0; k < K; ++k) {
          const double c = (k == 0 || k == W / 2) ? 1.0 : 2.0;
          ss->grad[std::size_t(0) * K * frames + std::size_t(k) * frames + t] +=
              T(c / double(W) * buf[k].real());
          ss->grad[std::size_t(1) * K * frames + std::size_t(k) * frames + t] +=
              T(c / double(W) * buf[k].imag());
        }
      }
    });
  }
  return out;
}

}  // namespace dse::ad

#endif  // DSE_NN_HPP
