// Copyright 2026 The dse authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Dense row-major tensors with reverse-mode differentiation. A Tape plus the
// tensors built on it form one single-threaded computation context; ops take
// the tape explicitly and record a backward closure when any input needs a
// gradient. Passing a null tape gives plain evaluation with no recording, so
// intermediates die as soon as they go out of scope.

#ifndef DSE_TENSOR_HPP
#define DSE_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "dse/common.hpp"

namespace dse::ad {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) {
    if (d <= 0) throw DimensionError("tensor: non-positive dimension");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

template <typename T>
struct Storage {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated iff requires_grad
  bool requires_grad = false;

  void ensure_grad() {
    if (requires_grad && grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Tensor t;
    t.s_ = std::make_shared<Storage<T>>();
    t.s_->shape = std::move(shape);
    t.s_->value.assign(shape_numel(t.s_->shape), T(0));
    t.s_->requires_grad = requires_grad;
    t.s_->ensure_grad();
    return t;
  }

  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    if (static_cast<std::int64_t>(values.size()) != t.numel())
      throw DimensionError("Tensor::from: value count does not match shape");
    t.s_->value = std::move(values);
    return t;
  }

  static Tensor scalar(T v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  int dim(int i) const { return s_->shape[i]; }
  int rank() const { return static_cast<int>(s_->shape.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(s_->value.size()); }
  bool requires_grad() const { return s_->requires_grad; }

  T* data() { return s_->value.data(); }
  const T* data() const { return s_->value.data(); }
  std::vector<T>& values() { return s_->value; }
  const std::vector<T>& values() const { return s_->value; }
  T* grad() { return s_->grad.data(); }
  const T* grad() const { return s_->grad.data(); }
  std::vector<T>& grads() { return s_->grad; }

  T item() const {
    if (numel() != 1) throw DimensionError("Tensor::item: not a scalar");
    return s_->value[0];
  }

  void zero_grad() { std::fill(s_->grad.begin(), s_->grad.end(), T(0)); }

  bool finite() const {
    for (T v : s_->value)
      if (!std::isfinite(double(v))) return false;
    return true;
  }

  std::shared_ptr<Storage<T>> storage() const { return s_; }

 private:
  std::shared_ptr<Storage<T>> s_;
};

template <typename T>
class Tape {
 public:
  void record(std::function<void()> backward) { nodes_.push_back(std::move(backward)); }

  // Seeds the scalar loss with gradient 1 and replays every recorded node in
  // reverse. Leaf gradients accumulate; zero them between steps.
  // Intermediate gradients allocate lazily: a node whose output grad was
  // never touched downstream simply skips (dead branch).
  void backward(Tensor<T>& loss) {
    if (loss.numel() != 1) throw DimensionError("Tape::backward: loss must be scalar");
    if (!loss.requires_grad()) throw Error("Tape::backward: loss does not require grad");
    loss.storage()->ensure_grad();
    loss.grad()[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  std::vector<std::function<void()>> nodes_;
};

namespace detail {

// C[M x N] += A[M x K] * B[K x N]. Column blocks keep the active panel of B
// resident in cache across the whole M loop; four C rows advance together so
// every loaded B row feeds four FMA streams.
template <typename T>
void gemm_nn_acc(int m, int k, int n, const T* a, const T* b, T* c) {
  constexpr int kBlock = 512;
  for (int j0 = 0; j0 < n; j0 += kBlock) {
    const int jn = std::min(kBlock, n - j0);
    int i = 0;
    for (; i + 4 <= m; i += 4) {
      T* c0 = c + std::size_t(i) * n + j0;
      T* c1 = c0 + n;
      T* c2 = c1 + n;
      T* c3 = c2 + n;
      const T* a0 = a + std::size_t(i) * k;
      for (int l = 0; l < k; ++l) {
        const T v0 = a0[l], v1 = a0[k + l], v2 = a0[2 * k + l], v3 = a0[3 * k + l];
        if (v0 == T(0) && v1 == T(0) && v2 == T(0) && v3 == T(0)) continue;
        const T* bl = b + std::size_t(l) * n + j0;
        for (int j = 0; j < jn; ++j) {
          const T bv = bl[j];
          c0[j] += v0 * bv;
          c1[j] += v1 * bv;
          c2[j] += v2 * bv;
          c3[j] += v3 * bv;
        }
      }
    }
    for (; i < m; ++i) {
      T* ci = c + std::size_t(i) * n + j0;
      const T* ai = a + std::size_t(i) * k;
      for (int l = 0; l < k; ++l) {
        const T av = ai[l];
        if (av == T(0)) continue;
        const T* bl = b + std::size_t(l) * n + j0;
        for (int j = 0; j < jn; ++j) ci[j] += av * bl[j];
      }
    }
  }
}

// C[M x N] += A[M x K] * B[N x K]^T. Packs B^T in K-tiles so the inner loop
// runs contiguously over N and vectorizes; a bare dot-product loop would be
// stuck at scalar speed by the strict FP reduction order.
template <typename T>
void gemm_nt_acc(int m, int k, int n, const T* a, const T* b, T* c) {
  constexpr int kTile = 128;
  std::vector<T> bt(std::size_t(std::min(k, kTile)) * n);
  for (int l0 = 0; l0 < k; l0 += kTile) {
    const int lt = std::min(kTile, k - l0);
    for (int j = 0; j < n; ++j)
      for (int l = 0; l < lt; ++l) bt[std::size_t(l) * n + j] = b[std::size_t(j) * k + l0 + l];
    int i = 0;
    for (; i + 4 <= m; i += 4) {
      const T* ai = a + std::size_t(i) * k + l0;
      T* c0 = c + std::size_t(i) * n;
      T* c1 = c0 + n;
      T* c2 = c1 + n;
      T* c3 = c2 + n;
      for (int l = 0; l < lt; ++l) {
        const T v0 = ai[l], v1 = ai[k + l], v2 = ai[2 * k + l], v3 = ai[3 * k + l];
        if (v0 == T(0) && v1 == T(0) && v2 == T(0) && v3 == T(0)) continue;
        const T* bl = bt.data() + std::size_t(l) * n;
        for (int j = 0; j < n; ++j) {
          const T bv = bl[j];
          c0[j] += v0 * bv;
          c1[j] += v1 * bv;
          c2[j] += v2 * bv;
          c3[j] += v3 * bv;
        }
      }
    }
    for (; i < m; ++i) {
      const T* ai = a + std::size_t(i) * k + l0;
      T* ci = c + std::size_t(i) * n;
      for (int l = 0; l < lt; ++l) {
        const T av = ai[l];
        if (av == T(0)) continue;
        const T* bl = bt.data() + std::size_t(l) * n;
        for (int j = 0; j < n; ++j) ci[j] += av * bl[j];
      }
    }
  }
}

// C[M x N] += A[K x M]^T * B[K x N]; two K rows advance together so each C
// row store amortizes two loads.
template <typename T>
void gemm_tn_acc(int m, int k, int n, const T* a, const T* b, T* c) {
  constexpr int kBlock = 512;
  for (int j0 = 0; j0 < n; j0 += kBlock) {
    const int jn = std::min(kBlock, n - j0);
    int l = 0;
    for (; l + 2 <= k; l += 2) {
      const T* al = a + std::size_t(l) * m;
      const T* am = al + m;
      const T* bl = b + std::size_t(l) * n + j0;
      const T* bm = bl + n;
      for (int i = 0; i < m; ++i) {
        const T v0 = al[i], v1 = am[i];
        if (v0 == T(0) && v1 == T(0)) continue;
        T* ci = c + std::size_t(i) * n + j0;
        for (int j = 0; j < jn; ++j) ci[j] += v0 * bl[j] + v1 * bm[j];
      }
    }
    for (; l < k; ++l) {
      const T* al = a + std::size_t(l) * m;
      const T* bl = b + std::size_t(l) * n + j0;
      for (int i = 0; i < m; ++i) {
        const T av = al[i];
        if (av == T(0)) continue;
        T* ci = c + std::size_t(i) * n + j0;
        for (int j = 0; j < jn; ++j) ci[j] += av * bl[j];
      }
    }
  }
}

template <typename T>
bool any_grad(const Tensor<T>& a) {
  return a.requires_grad();
}
template <typename T, typename... Rest>
bool any_grad(const Tensor<T>& a, const Rest&... rest) {
  return a.requires_grad() || any_grad(rest...);
}

// Marks the output differentiable and returns true when the op must record.
// The output's grad buffer is NOT allocated here; closures bail out when it
// never materialized (see Tape::backward).
template <typename T, typename... Inputs>
bool recording(Tape<T>* tape, Tensor<T>& out, const Inputs&... in) {
  if (tape == nullptr || !any_grad(in...)) return false;
  out.storage()->requires_grad = true;
  return true;
}

template <typename T>
void same_shape_or_throw(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic (same shape, or one side a 1-element scalar)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(Tape<T>* tp, const Tensor<T>& a, const Tensor<T>& b) {
  const bool bs = b.numel() == 1, as = a.numel() == 1;
  if (!as && !bs) detail::same_shape_or_throw(a, b, "add");
  const Tensor<T>& big = as ? b : a;
  Tensor<T> out = Tensor<T>::zeros(big.shape());
  const std::int64_t n = big.numel();
  for (std::int64_t i = 0; i < n; ++i)
    out.data()[i] = (as ? a.data()[0] : a.data()[i]) + (bs ? b.data()[0] : b.data()[i]);
  if (detail::recording(tp, out, a, b)) {
    auto sa = a.storage(), sb = b.storage(), so = out.storage();
    tp->record([sa, sb, so, as, bs, n] {
      if (so->grad.empty()) return;
      if (sa->requires_grad) {
        sa->ensure_grad();
        if (as)
          for (std::int64_t i = 0; i < n; ++i) sa->grad[0] += so->grad[i];
        else
          for (std::int64_t i = 0; i < n; ++i) sa->grad[i] += so->grad[i];
      }
      if (sb->requires_grad) {
        sb->ensure_grad();
        if (bs)
          for (std::int64_t i = 0; i < n; ++i) sb->grad[0] += so->grad[i];
        else
          for (std::int64_t i = 0; i < n; ++i) sb->grad[i] += so->grad[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(Tape<T>* tp, const Tensor<T>& a, const Tensor<T>& b) {
  const bool bs = b.numel() == 1, as = a.numel() == 1;
  if (!as && !bs) detail::same_shape_or_throw(a, b, "sub");
  const Tensor<T>& big = as ? b : a;
  Tensor<T> out = Tensor<T>::zeros(big.shape());
  const std::int64_t n = big.numel();
  for (std::int64_t i = 0; i < n; ++i)
    out.data()[i] = (as ? a.data()[0] : a.data()[i]) - (bs ? b.data()[0] : b.data()[i]);
  if (detail::recording(tp, out, a, b)) {
    auto sa = a.storage(), sb = b.storage(), so = out.storage();
    tp->record([sa, sb, so, as, bs, n] {
      if (so->grad.empty()) return;
      if (sa->requires_grad) {
        sa->ensure_grad();
        if (as)
          for (std::int64_t i = 0; i < n; ++i) sa->grad[0] += so->grad[i];
        else
          for (std::int64_t i = 0; i < n; ++i) sa->grad[i] += so->grad[i];
      }
      if (sb->requires_grad) {
        sb->ensure_grad();
        if (bs)
          for (std::int64_t i = 0; i < n; ++i) sb->grad[0] -= so->grad[i];
        else
          for (std::int64_t i = 0; i < n; ++i) sb->grad[i] -= so->grad[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(Tape<T>* tp, const Tensor<T>& a, const Tensor<T>& b) {
  const bool bs = b.numel() == 1, as = a.numel() == 1;
  if (!as && !bs) detail::same_shape_or_throw(a, b, "mul");
  const Tensor<T>& big = as ? b : a;
  Tensor<T> out = Tensor<T>::zeros(big.shape());
  const std::int64_t n = big.numel();
  for (std::int64_t i = 0; i < n; ++i)
    out.data()[i] = (as ? a.data()[0] : a.data()[i]) * (bs ? b.data()[0] : b.data()[i]);
  if (detail::recording(tp, out, a, b)) {
    auto sa = a.storage(), sb = b.storage(), so = out.storage();
    tp->record([sa, sb, so, as, bs, n] {
      if (so->grad.empty()) return;
      if (sa->requires_grad) {
        sa->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i)
          sa->grad[as ? 0 : i] += so->grad[i] * sb->value[bs ? 0 : i];
      }
      if (sb->requires_grad) {
        sb->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i)
          sb->grad[bs ? 0 : i] += so->grad[i] * sa->value[as ? 0 : i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> divide(Tape<T>* tp, const Tensor<T>& a, const Tensor<T>& b) {
  const bool bs = b.numel() == 1, as = a.numel() == 1;
  if (!as && !bs) detail::same_shape_or_throw(a, b, "divide");
  const Tensor<T>& big = as ? b : a;
  Tensor<T> out = Tensor<T>::zeros(big.shape());
  const std::int64_t n = big.numel();
  for (std::int64_t i = 0; i < n; ++i)
    out.data()[i] = (as ? a.data()[0] : a.data()[i]) / (bs ? b.data()[0] : b.data()[i]);
  if (detail::recording(tp, out, a, b)) {
    auto sa = a.storage(), sb = b.storage(), so = out.storage();
    tp->record([sa, sb, so, as, bs, n] {
      if (so->grad.empty()) return;
      for (std::int64_t i = 0; i < n; ++i) {
        const T bv = sb->value[bs ? 0 : i];
        const T g = so->grad[i];
        if (sa->requires_grad) {
          sa->ensure_grad();
          sa->grad[as ? 0 : i] += g / bv;
        }
        if (sb->requires_grad) {
          sb->ensure_grad();
          sb->grad[bs ? 0 : i] -= g * sa->value[as ? 0 : i] / (bv * bv);
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(Tape<T>* tp, const Tensor<T>& a, T c) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * c;
  if (detail::recording(tp, out, a)) {
    auto sa = a.storage(), so = out.storage();
    tp->record([sa, so, c, n] {
      if (so->grad.empty()) return;
      sa->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) sa->grad[i] += so->grad[i] * c;
    });
  }
  return out;
}

template <typename T>
Tensor<T> add_const(Tape<T>* tp, const Tensor<T>& a, T c) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + c;
  if (detail::recording(tp, out, a)) {
    auto sa = a.storage(), so = out.storage();
    tp->record([sa, so, n] {
      if (so->grad.empty()) return;
      sa->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) sa->grad[i] += so->grad[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities
// ---------------------------------------------------------------------------

namespace detail {

template <typename T, typename Fwd, typename Bwd>
Tensor<T> unary_op(Tape<T>* tp, const Tensor<T>& a, Fwd fwd, Bwd bwd_from_in_out) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) out.data()[i] = fwd(a.data()[i]);
  if (recording(tp, out, a)) {
    auto sa = a.storage(), so = out.storage();
    tp->record([sa, so, n, bwd_from_in_out] {
      if (so->grad.empty()) return;
      sa->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i)
        sa->grad[i] += so->grad[i] * bwd_from_in_out(sa->value[i], so->value[i]);
    });
  }
  return out;
}

}  // namespace detail

template <typename T>
Tensor<T> neg(Tape<T>* tp, const Tensor<T>& a) {
  return detail::unary_op(tp, a, [](T x) { return -x; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> relu(Tape<T>* tp, const Tensor<T>& a) {
  return detail::unary_op(
      tp, a, [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(Tape<T>* tp, const Tensor<T>& a) {
  return detail::unary_op(
      tp, a, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh_op(Tape<T>* tp, const Tensor<T>& a) {
  return detail::unary_op(
      tp, a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> exp_op(Tape<T>* tp, const Tensor<T>& a) {
  return detail::unary_op(tp, a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log_op(Tape<T>* tp, const Tensor<T>& a) {
  return detail::unary_op(
      tp, a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> sqrt_op(Tape<T>* tp, const Tensor<T>& a) {
  return detail::unary_op(
      tp, a, [](T x) { return std::sqrt(x); },
      [](T, T y) { return T(1) / (T(2) * y); });
}

template <typename T>
Tensor<T> abs_op(Tape<T>* tp, const Tensor<T>& a) {
  return detail::unary_op(
      tp, a, [](T x) { return std::abs(x); },
      [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reduce_sum(Tape<T>* tp, const Tensor<T>& a) {
  Tensor<T> out = Tensor<T>::zeros({1});
  T acc = T(0);
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) acc += a.data()[i];
  out.data()[0] = acc;
  if (detail::recording(tp, out, a)) {
    auto sa = a.storage(), so = out.storage();
    tp->record([sa, so, n] {
      if (so->grad.empty()) return;
      sa->ensure_grad();
      const T g = so->grad[0];
      for (std::int64_t i = 0; i < n; ++i) sa->grad[i] += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> reduce_mean(Tape<T>* tp, const Tensor<T>& a) {
  return scale(tp, reduce_sum(tp, a), T(1) / T(a.numel()));
}

namespace detail {

// outer * axis * inner decomposition for a single reduced axis; no index map
// needed.
struct SingleAxis {
  std::int64_t outer, axis, inner;
};

inline SingleAxis single_axis(const Shape& shape, int ax) {
  SingleAxis s{1, shape[ax], 1};
  for (int i = 0; i < ax; ++i) s.outer *= shape[i];
  for (std::size_t i = ax + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace detail

// Mean over the given axes, kept as size-1 dims.
template <typename T>
Tensor<T> reduce_mean_axes(Tape<T>* tp, const Tensor<T>& a, const std::vector<int>& axes) {
  if (axes.size() > 1) {  // fold one axis at a time; group sizes stay uniform
    Tensor<T> cur = reduce_mean_axes(tp, a, {axes[0]});
    for (std::size_t i = 1; i < axes.size(); ++i)
      cur = reduce_mean_axes(tp, cur, {axes[i]});
    return cur;
  }
  if (axes.empty()) throw DimensionError("reduce_mean_axes: no axes");
  const int ax = axes[0];
  if (ax < 0 || ax >= a.rank()) throw DimensionError("reduce_mean_axes: axis out of range");
  const auto s = detail::single_axis(a.shape(), ax);
  Shape out_shape = a.shape();
  out_shape[ax] = 1;
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  const T inv = T(1) / T(s.axis);
  for (std::int64_t o = 0; o < s.outer; ++o) {
    T* dst = out.data() + o * s.inner;
    const T* src = a.data() + o * s.axis * s.inner;
    for (std::int64_t k = 0; k < s.axis; ++k)
      for (std::int64_t i = 0; i < s.inner; ++i) dst[i] += src[k * s.inner + i];
    for (std::int64_t i = 0; i < s.inner; ++i) dst[i] *= inv;
  }
  if (detail::recording(tp, out, a)) {
    auto sa = a.storage(), so = out.storage();
    tp->record([sa, so, s, inv] {
      if (so->grad.empty()) return;
      sa->ensure_grad();
      for (std::int64_t o = 0; o < s.outer; ++o) {
        const T* g = so->grad.data() + o * s.inner;
        T* gx = sa->grad.data() + o * s.axis * s.inner;
        for (std::int64_t k = 0; k < s.axis; ++k)
          for (std::int64_t i = 0; i < s.inner; ++i) gx[k * s.inner + i] += g[i] * inv;
      }
    });
  }
  return out;
}

// Max over the given axes; gradient goes to the first maximal element.
template <typename T>
Tensor<T> reduce_max_axes(Tape<T>* tp, const Tensor<T>& a, const std::vector<int>& axes) {
  if (axes.size() > 1) {
    Tensor<T> cur = reduce_max_axes(tp, a, {axes[0]});
    for (std::size_t i = 1; i < axes.size(); ++i)
      cur = reduce_max_axes(tp, cur, {axes[i]});
    return cur;
  }
  if (axes.empty()) throw DimensionError("reduce_max_axes: no axes");
  const int ax = axes[0];
  if (ax < 0 || ax >= a.rank()) throw DimensionError("reduce_max_axes: axis out of range");
  const auto s = detail::single_axis(a.shape(), ax);
  Shape out_shape = a.shape();
  out_shape[ax] = 1;
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  auto argmax = std::make_shared<std::vector<std::int64_t>>(std::size_t(s.outer) * s.inner);
  for (std::int64_t o = 0; o < s.outer; ++o) {
    T* dst = out.data() + o * s.inner;
    std::int64_t* am = argmax->data() + o * s.inner;
    const T* src = a.data() + o * s.axis * s.inner;
    for (std::int64_t i = 0; i < s.inner; ++i) {
      dst[i] = src[i];
      am[i] = o * s.axis * s.inner + i;
    }
    for (std::int64_t k = 1; k < s.axis; ++k)
      for (std::int64_t i = 0; i < s.inner; ++i) {
        const T v = src[k * s.inner + i];
        if (v > dst[i]) {
          dst[i] = v;
          am[i] = o * s.axis * s.inner + k * s.inner + i;
        }
      }
  }
  if (detail::recording(tp, out, a)) {
    auto sa = a.storage(), so = out.storage();
    tp->record([sa, so, argmax] {
      if (so->grad.empty()) return;
      sa->ensure_grad();
      for (std::size_t o = 0; o < argmax->size(); ++o) sa->grad[(*argmax)[o]] += so->grad[o];
    });
  }
  return out;
}

// Running mean along the last axis (causal pooling).
template <typename T>
Tensor<T> cummean_last(Tape<T>* tp, const Tensor<T>& a) {
  const int tdim = a.shape().back();
  const std::int64_t rows = a.numel() / tdim;
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* x = a.data() + r * tdim;
    T* y = out.data() + r * tdim;
    T acc = T(0);
    for (int t = 0; t < tdim; ++t) {
      acc += x[t];
      y[t] = acc / T(t + 1);
    }
  }
  if (detail::recording(tp, out, a)) {
    auto sa = a.storage(), so = out.storage();
    tp->record([sa, so, rows, tdim] {
      if (so->grad.empty()) return;
      sa->ensure_grad();
      for (std::int64_t r = 0; r < rows; ++r) {
        const T* g = so->grad.data() + r * tdim;
        T* gx = sa->grad.data() + r * tdim;
        T acc = T(0);
        for (int t = tdim - 1; t >= 0; --t) {
          acc += g[t] / T(t + 1);
          gx[t] += acc;
        }
      }
    });
  }
  return out;
}

// Running max along the last axis; gradient goes to the earliest argmax of
// each prefix.
template <typename T>
Tensor<T> cummax_last(Tape<T>* tp, const Tensor<T>& a) {
  const int tdim = a.shape().back();
  const std::int64_t rows = a.numel() / tdim;
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  auto argmax = std::make_shared<std::vector<std::int32_t>>(a.numel());
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* x = a.data() + r * tdim;
    T* y = out.data() + r * tdim;
    std::int32_t* am = argmax->data() + r * tdim;
    T best = x[0];
    int best_t = 0;
    for (int t = 0; t < tdim; ++t) {
      if (x[t] > best) {
        best = x[t];
        best_t = t;
      }
      y[t] = best;
      am[t] = best_t;
    }
  }
  if (detail::recording(tp, out, a)) {
    auto sa = a.storage(), so = out.storage();
    tp->record([sa, so, argmax, rows, tdim] {
      if (so->grad.empty()) return;
      sa->ensure_grad();
      for (std::int64_t r = 0; r < rows; ++r) {
        const T* g = so->grad.data() + r * tdim;
        T* gx = sa->grad.data() + r * tdim;
        const std::int32_t* am = argmax->data() + r * tdim;
        for (int t = 0; t < tdim; ++t) gx[am[t]] += g[t];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shape surgery
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(Tape<T>* tp, const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw DimensionError("reshape: element count mismatch " + shape_str(a.shape()) + " -> " +
                         shape_str(shape));
  Tensor<T> out = Tensor<T>::zeros(std::move(shape));
  std::copy(a.data(), a.data() + a.numel(), out.data());
  if (detail::recording(tp, out, a)) {
    auto sa = a.storage(), so = out.storage();
    const std::int64_t n = a.numel();
    tp->record([sa, so, n] {
      if (so->grad.empty()) return;
      sa->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) sa->grad[i] += so->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> permute(Tape<T>* tp, const Tensor<T>& a, const std::vector<int>& order) {
  const int r = a.rank();
  if (static_cast<int>(order.size()) != r) throw DimensionError("permute: order rank mismatch");
  Shape out_shape(r);
  for (int i = 0; i < r; ++i) out_shape[i] = a.dim(order[i]);
  Tensor<T> out = Tensor<T>::zeros(out_shape);

  std::vector<std::int64_t> in_strides(r), out_strides(r);
  std::int64_t s = 1;
  for (int i = r - 1; i >= 0; --i) {
    in_strides[i] = s;
    s *= a.dim(i);
  }
  s = 1;
  for (int i = r - 1; i >= 0; --i) {
    out_strides[i] = s;
    s *= out_shape[i];
  }
  // out[o0,...,ok] = in[order[0]->o0, ...]
  auto fwd_map = std::make_shared<std::vector<std::int64_t>>(a.numel());
  const std::int64_t n = a.numel();
  std::vector<std::int64_t> coord(r, 0);
  for (std::int64_t o = 0; o < n; ++o) {
    std::int64_t rem = o, in_idx = 0;
    for (int i = 0; i < r; ++i) {
      const std::int64_t c = rem / out_strides[i];
      rem %= out_strides[i];
      in_idx += c * in_strides[order[i]];
    }
    (*fwd_map)[o] = in_idx;
    out.data()[o] = a.data()[in_idx];
  }
  if (detail::recording(tp, out, a)) {
    auto sa = a.storage(), so = out.storage();
    tp->record([sa, so, fwd_map, n] {
      if (so->grad.empty()) return;
      sa->ensure_grad();
      for (std::int64_t o = 0; o < n; ++o) sa->grad[(*fwd_map)[o]] += so->grad[o];
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice(Tape<T>* tp, const Tensor<T>& a, int axis, int start, int len) {
  const int r = a.rank();
  if (axis < 0 || axis >= r) throw DimensionError("slice: axis out of range");
  if (start < 0 || len <= 0 || start + len > a.dim(axis))
    throw DimensionError("slice: range out of bounds");
  Shape out_shape = a.shape();
  out_shape[axis] = len;
  Tensor<T> out = Tensor<T>::zeros(out_shape);

  std::int64_t inner = 1, outer = 1;
  for (int i = axis + 1; i < r; ++i) inner *= a.dim(i);
  for (int i = 0; i < axis; ++i) outer *= a.dim(i);
  const std::int64_t in_axis = a.dim(axis);

  for (std::int64_t ou = 0; ou < outer; ++ou)
    std::copy(a.data() + (ou * in_axis + start) * inner,
              a.data() + (ou * in_axis + start + len) * inner,
              out.data() + ou * len * inner);
  if (detail::recording(tp, out, a)) {
    auto sa = a.storage(), so = out.storage();
    tp->record([sa, so, outer, inner, in_axis, start, len] {
      if (so->grad.empty()) return;
      sa->ensure_grad();
      for (std::int64_t ou = 0; ou < outer; ++ou) {
        const T* g = so->grad.data() + ou * len * inner;
        T* gx = sa->grad.data() + (ou * in_axis + start) * inner;
        for (std::int64_t i = 0; i < len * inner; ++i) gx[i] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat(Tape<T>* tp, const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const int r = parts[0].rank();
  if (axis < 0 || axis >= r) throw DimensionError("concat: axis out of range");
  Shape out_shape = parts[0].shape();
  int total = 0;
  for (const auto& p : parts) {
    if (p.rank() != r) throw DimensionError("concat: rank mismatch");
    for (int i = 0; i < r; ++i)
      if (i != axis && p.dim(i) != out_shape[i]) throw DimensionError("concat: shape mismatch");
    total += p.dim(axis);
  }
  out_shape[axis] = total;
  Tensor<T> out = Tensor<T>::zeros(out_shape);

  std::int64_t inner = 1, outer = 1;
  for (int i = axis + 1; i < r; ++i) inner *= out_shape[i];
  for (int i = 0; i < axis; ++i) outer *= out_shape[i];

  bool needs = false;
  for (const auto& p : parts) needs = needs || p.requires_grad();

  int offset = 0;
  struct Piece {
    std::shared_ptr<Storage<T>> s;
    int offset, len;
  };
  auto pieces = std::make_shared<std::vector<Piece>>();
  for (const auto& p : parts) {
    const int len = p.dim(axis);
    for (std::int64_t ou = 0; ou < outer; ++ou)
      std::copy(p.data() + ou * len * inner, p.data() + (ou + 1) * len * inner,
                out.data() + (ou * total + offset) * inner);
    pieces->push_back({p.storage(), offset, len});
    offset += len;
  }
  if (tp && needs) {
    out.storage()->requires_grad = true;
    out.storage()->ensure_grad();
    auto so = out.storage();
    tp->record([so, pieces, outer, inner, total] {
      if (so->grad.empty()) return;
      for (auto& pc : *pieces) {
        if (!pc.s->requires_grad) continue;
        pc.s->ensure_grad();
        for (std::int64_t ou = 0; ou < outer; ++ou) {
          const T* g = so->grad.data() + (ou * total + pc.offset) * inner;
          T* gx = pc.s->grad.data() + ou * pc.len * inner;
          for (std::int64_t i = 0; i < std::int64_t(pc.len) * inner; ++i) gx[i] += g[i];
        }
      }
    });
  }
  return out;
}

// Zero padding on one axis.
template <typename T>
Tensor<T> pad_axis(Tape<T>* tp, const Tensor<T>& a, int axis, int before, int after) {
  if (before < 0 || after < 0) throw DimensionError("pad_axis: negative padding");
  Shape out_shape = a.shape();
  out_shape[axis] += before + after;
  Tensor<T> out = Tensor<T>::zeros(out_shape);

  std::int64_t inner = 1, outer = 1;
  for (int i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  for (int i = 0; i < axis; ++i) outer *= a.dim(i);
  const int in_axis = a.dim(axis), out_axis = out_shape[axis];

  for (std::int64_t ou = 0; ou < outer; ++ou)
    std::copy(a.data() + ou * in_axis * inner, a.data() + (ou + 1) * in_axis * inner,
              out.data() + (ou * out_axis + before) * inner);
  if (detail::recording(tp, out, a)) {
    auto sa = a.storage(), so = out.storage();
    tp->record([sa, so, outer, inner, in_axis, out_axis, before] {
      if (so->grad.empty()) return;
      sa->ensure_grad();
      for (std::int64_t ou = 0; ou < outer; ++ou) {
        const T* g = so->grad.data() + (ou * out_axis + before) * inner;
        T* gx = sa->grad.data() + ou * in_axis * inner;
        for (std::int64_t i = 0; i < std::int64_t(in_axis) * inner; ++i) gx[i] += g[i];
      }
    });
  }
  return out;
}

// Reversal along axis 0 (used by bidirectional recurrences).
template <typename T>
Tensor<T> flip0(Tape<T>* tp, const Tensor<T>& a) {
  const int n0 = a.dim(0);
  const std::int64_t inner = a.numel() / n0;
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  for (int i = 0; i < n0; ++i)
    std::copy(a.data() + std::int64_t(i) * inner, a.data() + std::int64_t(i + 1) * inner,
              out.data() + std::int64_t(n0 - 1 - i) * inner);
  if (detail::recording(tp, out, a)) {
    auto sa = a.storage(), so = out.storage();
    tp->record([sa, so, n0, inner] {
      if (so->grad.empty()) return;
      sa->ensure_grad();
      for (int i = 0; i < n0; ++i) {
        const T* g = so->grad.data() + std::int64_t(n0 - 1 - i) * inner;
        T* gx = sa->grad.data() + std::int64_t(i) * inner;
        for (std::int64_t j = 0; j < inner; ++j) gx[j] += g[j];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(Tape<T>* tp, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> out = Tensor<T>::zeros({m, n});
  detail::gemm_nn_acc(m, k, n, a.data(), b.data(), out.data());
  if (detail::recording(tp, out, a, b)) {
    auto sa = a.storage(), sb = b.storage(), so = out.storage();
    tp->record([sa, sb, so, m, k, n] {
      if (so->grad.empty()) return;
      if (sa->requires_grad) {
        sa->ensure_grad();
        detail::gemm_nt_acc(m, n, k, so->grad.data(), sb->value.data(), sa->grad.data());
      }
      if (sb->requires_grad) {
        sb->ensure_grad();
        detail::gemm_tn_acc(k, m, n, sa->value.data(), so->grad.data(), sb->grad.data());
      }
    });
  }
  return out;
}

// x[m, n] + row vector b[n]
template <typename T>
Tensor<T> add_row_bias(Tape<T>* tp, const Tensor<T>& x, const Tensor<T>& b) {
  if (x.rank() != 2 || b.rank() != 1 || b.dim(0) != x.dim(1))
    throw DimensionError("add_row_bias: shapes " + shape_str(x.shape()) + " + " +
                         shape_str(b.shape()));
  const int m = x.dim(0), n = x.dim(1);
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.data()[std::size_t(i) * n + j] = x.data()[std::size_t(i) * n + j] + b.data()[j];
  if (detail::recording(tp, out, x, b)) {
    auto sx = x.storage(), sb = b.storage(), so = out.storage();
    tp->record([sx, sb, so, m, n] {
      if (so->grad.empty()) return;
      if (sx->requires_grad) {
        sx->ensure_grad();
        for (std::int64_t i = 0; i < std::int64_t(m) * n; ++i) sx->grad[i] += so->grad[i];
      }
      if (sb->requires_grad) {
        sb->ensure_grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) sb->grad[j] += so->grad[std::size_t(i) * n + j];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Channel/map broadcasting used by the attention gates
// ---------------------------------------------------------------------------

// x[B,C,F,T] scaled per channel by g[B,C] (or [B,C,1,1]).
template <typename T>
Tensor<T> scale_channels(Tape<T>* tp, const Tensor<T>& x, const Tensor<T>& g) {
  if (x.rank() != 4) throw DimensionError("scale_channels: x must be rank 4");
  const int B = x.dim(0), C = x.dim(1);
  const std::int64_t plane = std::int64_t(x.dim(2)) * x.dim(3);
  if (g.numel() != std::int64_t(B) * C) throw DimensionError("scale_channels: gate size mismatch");
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const T gv = g.data()[std::size_t(b) * C + c];
      const T* xp = x.data() + (std::size_t(b) * C + c) * plane;
      T* op = out.data() + (std::size_t(b) * C + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) op[i] = xp[i] * gv;
    }
  if (detail::recording(tp, out, x, g)) {
    auto sx = x.storage(), sg = g.storage(), so = out.storage();
    tp->record([sx, sg, so, B, C, plane] {
      if (so->grad.empty()) return;
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
          const std::size_t base = (std::size_t(b) * C + c) * plane;
          const T gv = sg->value[std::size_t(b) * C + c];
          if (sx->requires_grad) {
            sx->ensure_grad();
            for (std::int64_t i = 0; i < plane; ++i) sx->grad[base + i] += so->grad[base + i] * gv;
          }
          if (sg->requires_grad) {
            sg->ensure_grad();
            T acc = T(0);
            for (std::int64_t i = 0; i < plane; ++i) acc += so->grad[base + i] * sx->value[base + i];
            sg->grad[std::size_t(b) * C + c] += acc;
          }
        }
    });
  }
  return out;
}

// Per-channel gate g[B,C,1,T] broadcast over frequency (causal channel
// attention produces one gate per frame).
template <typename T>
Tensor<T> scale_channels_time(Tape<T>* tp, const Tensor<T>& x, const Tensor<T>& g) {
  if (x.rank() != 4 || g.rank() != 4) throw DimensionError("scale_channels_time: rank 4 expected");
  const int B = x.dim(0), C = x.dim(1), F = x.dim(2), Tt = x.dim(3);
  if (g.dim(0) != B || g.dim(1) != C || g.dim(2) != 1 || g.dim(3) != Tt)
    throw DimensionError("scale_channels_time: gate must be [B,C,1,T]");
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const T* gp = g.data() + (std::size_t(b) * C + c) * Tt;
      for (int f = 0; f < F; ++f) {
        const std::size_t base = ((std::size_t(b) * C + c) * F + f) * Tt;
        for (int t = 0; t < Tt; ++t) out.data()[base + t] = x.data()[base + t] * gp[t];
      }
    }
  if (detail::recording(tp, out, x, g)) {
    auto sx = x.storage(), sg = g.storage(), so = out.storage();
    tp->record([sx, sg, so, B, C, F, Tt] {
      if (so->grad.empty()) return;
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
          const std::size_t gbase = (std::size_t(b) * C + c) * Tt;
          for (int f = 0; f < F; ++f) {
            const std::size_t base = ((std::size_t(b) * C + c) * F + f) * Tt;
            if (sx->requires_grad) {
              sx->ensure_grad();
              for (int t = 0; t < Tt; ++t)
                sx->grad[base + t] += so->grad[base + t] * sg->value[gbase + t];
            }
            if (sg->requires_grad) {
              sg->ensure_grad();
              for (int t = 0; t < Tt; ++t)
                sg->grad[gbase + t] += so->grad[base + t] * sx->value[base + t];
            }
          }
        }
    });
  }
  return out;
}

// x[B,C,F,T] scaled by a map m[B,1,F,T] broadcast over channels.
template <typename T>
Tensor<T> scale_map(Tape<T>* tp, const Tensor<T>& x, const Tensor<T>& m) {
  if (x.rank() != 4 || m.rank() != 4) throw DimensionError("scale_map: rank 4 expected");
  const int B = x.dim(0), C = x.dim(1);
  const std::int64_t plane = std::int64_t(x.dim(2)) * x.dim(3);
  if (m.dim(0) != B || m.dim(1) != 1 || m.dim(2) != x.dim(2) || m.dim(3) != x.dim(3))
    throw DimensionError("scale_map: map must be [B,1,F,T]");
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  for (int b = 0; b < B; ++b) {
    const T* mp = m.data() + std::size_t(b) * plane;
    for (int c = 0; c < C; ++c) {
      const std::size_t base = (std::size_t(b) * C + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) out.data()[base + i] = x.data()[base + i] * mp[i];
    }
  }
  if (detail::recording(tp, out, x, m)) {
    auto sx = x.storage(), sm = m.storage(), so = out.storage();
    tp->record([sx, sm, so, B, C, plane] {
      if (so->grad.empty()) return;
      for (int b = 0; b < B; ++b) {
        const std::size_t mbase = std::size_t(b) * plane;
        for (int c = 0; c < C; ++c) {
          const std::size_t base = (std::size_t(b) * C + c) * plane;
          if (sx->requires_grad) {
            sx->ensure_grad();
            for (std::int64_t i = 0; i < plane; ++i)
              sx->grad[base + i] += so->grad[base + i] * sm->value[mbase + i];
          }
          if (sm->requires_grad) {
            sm->ensure_grad();
            for (std::int64_t i = 0; i < plane; ++i)
              sm->grad[mbase + i] += so->grad[base + i] * sx->value[base + i];
          }
        }
      }
    });
  }
  return out;
}

}  // namespace dse::ad

#endif  // DSE_TENSOR_HPP
