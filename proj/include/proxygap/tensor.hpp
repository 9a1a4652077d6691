#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "proxygap/errors.hpp"
#include "proxygap/rng.hpp"

namespace proxygap {

// Dense row-major tensors with tape-based reverse-mode differentiation.
// Real is float for production runs and double for gradient verification.

template <typename Real>
struct TensorNode {
  std::vector<int64_t> shape;
  std::vector<Real> value;
  std::vector<Real> grad;  // nonempty iff requires_grad
  bool requires_grad = false;

  int64_t size() const { return static_cast<int64_t>(value.size()); }
};

template <typename Real>
using Tensor = std::shared_ptr<TensorNode<Real>>;

template <typename Real>
Tensor<Real> make_tensor(std::vector<int64_t> shape, bool requires_grad = false) {
  auto node = std::make_shared<TensorNode<Real>>();
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d <= 0) throw TensorShapeError("make_tensor: nonpositive dimension");
    n *= d;
  }
  node->shape = std::move(shape);
  node->value.assign(static_cast<size_t>(n), Real(0));
  node->requires_grad = requires_grad;
  if (requires_grad) node->grad.assign(static_cast<size_t>(n), Real(0));
  return node;
}

template <typename Real>
void zero_grad(const Tensor<Real>& t) {
  std::fill(t->grad.begin(), t->grad.end(), Real(0));
}

inline std::string shape_str(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

// Ordered record of op backward rules. Recording order is a topological
// order of the graph, so reverse iteration visits each node once with its
// downstream gradient complete.
template <typename Real>
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  void record(std::function<void()> backward_fn) {
    ops_.push_back(std::move(backward_fn));
  }
  size_t num_recorded() const { return ops_.size(); }

  void backward(const Tensor<Real>& out) {
    if (out->size() != 1)
      throw std::invalid_argument("Tape::backward: output must be scalar");
    if (!out->requires_grad)
      throw std::invalid_argument("Tape::backward: output does not require grad");
    out->grad[0] = Real(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

  void clear() { ops_.clear(); }

 private:
  bool recording_;
  std::vector<std::function<void()>> ops_;
};

namespace detail {

template <typename Real>
using EMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// C = or += op(a) * op(b), where op transposes the stored matrix
template <typename Real>
void gemm(const Real* a, int64_t ar, int64_t ac, bool ta, const Real* b,
          int64_t br, int64_t bc, bool tb, Real* c, bool accumulate) {
  Eigen::Map<const EMat<Real>> A(a, ar, ac);
  Eigen::Map<const EMat<Real>> B(b, br, bc);
  Eigen::Map<EMat<Real>> C(c, ta ? ac : ar, tb ? br : bc);
  auto assign = [&](const auto& expr) {
    if (accumulate)
      C.noalias() += expr;
    else
      C.noalias() = expr;
  };
  if (!ta && !tb) assign(A * B);
  else if (ta && !tb) assign(A.transpose() * B);
  else if (!ta && tb) assign(A * B.transpose());
  else assign(A.transpose() * B.transpose());
}

inline int64_t product(const std::vector<int64_t>& v, size_t begin, size_t end) {
  int64_t n = 1;
  for (size_t i = begin; i < end; ++i) n *= v[i];
  return n;
}

}  // namespace detail

// ----------------------------- matmul -----------------------------
// 2D x 2D, or batched 3D x 3D with equal leading dimension. trans flags
// apply to the last two dimensions.

template <typename Real>
Tensor<Real> matmul(Tape<Real>& tape, const Tensor<Real>& a, const Tensor<Real>& b,
                    bool trans_a = false, bool trans_b = false) {
  const size_t ra = a->shape.size(), rb = b->shape.size();
  if ((ra != 2 && ra != 3) || (rb != 2 && rb != 3) || ra != rb)
    throw TensorShapeError("matmul: ranks must match and be 2 or 3, got " +
                           shape_str(a->shape) + " x " + shape_str(b->shape));
  const int64_t batch = ra == 3 ? a->shape[0] : 1;
  if (ra == 3 && b->shape[0] != batch)
    throw TensorShapeError("matmul: batch mismatch " + shape_str(a->shape) +
                           " x " + shape_str(b->shape));
  const int64_t ar = a->shape[ra - 2], ac = a->shape[ra - 1];
  const int64_t br = b->shape[rb - 2], bc = b->shape[rb - 1];
  const int64_t m = trans_a ? ac : ar, k = trans_a ? ar : ac;
  const int64_t kb = trans_b ? bc : br, n = trans_b ? br : bc;
  if (k != kb)
    throw TensorShapeError("matmul: inner dimension mismatch " +
                           shape_str(a->shape) + " x " + shape_str(b->shape));

  std::vector<int64_t> out_shape = ra == 3 ? std::vector<int64_t>{batch, m, n}
                                           : std::vector<int64_t>{m, n};
  const bool track = tape.recording() && (a->requires_grad || b->requires_grad);
  auto out = make_tensor<Real>(out_shape, track);

  const int64_t a_stride = ar * ac, b_stride = br * bc, c_stride = m * n;
  for (int64_t s = 0; s < batch; ++s) {
    detail::gemm(a->value.data() + s * a_stride, ar, ac, trans_a,
                 b->value.data() + s * b_stride, br, bc, trans_b,
                 out->value.data() + s * c_stride, false);
  }

  if (track) {
    tape.record([=] {
      for (int64_t s = 0; s < batch; ++s) {
        const Real* av = a->value.data() + s * a_stride;
        const Real* bv = b->value.data() + s * b_stride;
        const Real* dc = out->grad.data() + s * c_stride;
        if (a->requires_grad) {
          Real* da = a->grad.data() + s * a_stride;
          if (!trans_a && !trans_b) detail::gemm(dc, m, n, false, bv, br, bc, true, da, true);
          else if (trans_a && !trans_b) detail::gemm(bv, br, bc, false, dc, m, n, true, da, true);
          else if (!trans_a && trans_b) detail::gemm(dc, m, n, false, bv, br, bc, false, da, true);
          else detail::gemm(bv, br, bc, true, dc, m, n, true, da, true);
        }
        if (b->requires_grad) {
          Real* db = b->grad.data() + s * b_stride;
          if (!trans_a && !trans_b) detail::gemm(av, ar, ac, true, dc, m, n, false, db, true);
          else if (trans_a && !trans_b) detail::gemm(av, ar, ac, false, dc, m, n, false, db, true);
          else if (!trans_a && trans_b) detail::gemm(dc, m, n, true, av, ar, ac, false, db, true);
          else detail::gemm(dc, m, n, true, av, ar, ac, true, db, true);
        }
      }
    });
  }
  return out;
}

// ----------------------------- elementwise -----------------------------

template <typename Real>
Tensor<Real> add(Tape<Real>& tape, const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a->shape != b->shape)
    throw TensorShapeError("add: shape mismatch " + shape_str(a->shape) + " vs " +
                           shape_str(b->shape));
  const bool track = tape.recording() && (a->requires_grad || b->requires_grad);
  auto out = make_tensor<Real>(a->shape, track);
  const size_t n = a->value.size();
  for (size_t i = 0; i < n; ++i) out->value[i] = a->value[i] + b->value[i];
  if (track) {
    tape.record([=] {
      if (a->requires_grad)
        for (size_t i = 0; i < n; ++i) a->grad[i] += out->grad[i];
      if (b->requires_grad)
        for (size_t i = 0; i < n; ++i) b->grad[i] += out->grad[i];
    });
  }
  return out;
}

// x[..., C] + bias[C], broadcast over leading dimensions
template <typename Real>
Tensor<Real> add_bias(Tape<Real>& tape, const Tensor<Real>& x, const Tensor<Real>& bias) {
  if (bias->shape.size() != 1 || x->shape.empty() || x->shape.back() != bias->shape[0])
    throw TensorShapeError("add_bias: shape mismatch " + shape_str(x->shape) +
                           " vs " + shape_str(bias->shape));
  const bool track = tape.recording() && (x->requires_grad || bias->requires_grad);
  auto out = make_tensor<Real>(x->shape, track);
  const int64_t c = bias->shape[0];
  const int64_t rows = x->size() / c;
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < c; ++j)
      out->value[static_cast<size_t>(r * c + j)] =
          x->value[static_cast<size_t>(r * c + j)] + bias->value[static_cast<size_t>(j)];
  if (track) {
    tape.record([=] {
      if (x->requires_grad)
        for (size_t i = 0; i < x->value.size(); ++i) x->grad[i] += out->grad[i];
      if (bias->requires_grad)
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t j = 0; j < c; ++j)
            bias->grad[static_cast<size_t>(j)] += out->grad[static_cast<size_t>(r * c + j)];
    });
  }
  return out;
}

// fused x[N,in] * w[in,out] + bias[out]
template <typename Real>
Tensor<Real> linear(Tape<Real>& tape, const Tensor<Real>& x, const Tensor<Real>& w,
                    const Tensor<Real>& bias) {
  if (x->shape.size() != 2 || w->shape.size() != 2 || bias->shape.size() != 1 ||
      x->shape[1] != w->shape[0] || w->shape[1] != bias->shape[0])
    throw TensorShapeError("linear: shape mismatch " + shape_str(x->shape) + " * " +
                           shape_str(w->shape) + " + " + shape_str(bias->shape));
  const int64_t n = x->shape[0], in = x->shape[1], out_dim = w->shape[1];
  const bool track =
      tape.recording() && (x->requires_grad || w->requires_grad || bias->requires_grad);
  auto out = make_tensor<Real>({n, out_dim}, track);
  detail::gemm(x->value.data(), n, in, false, w->value.data(), in, out_dim, false,
               out->value.data(), false);
  for (int64_t r = 0; r < n; ++r)
    for (int64_t j = 0; j < out_dim; ++j)
      out->value[static_cast<size_t>(r * out_dim + j)] += bias->value[static_cast<size_t>(j)];
  if (track) {
    tape.record([=] {
      if (x->requires_grad)
        detail::gemm(out->grad.data(), n, out_dim, false, w->value.data(), in, out_dim,
                     true, x->grad.data(), true);
      if (w->requires_grad)
        detail::gemm(x->value.data(), n, in, true, out->grad.data(), n, out_dim, false,
                     w->grad.data(), true);
      if (bias->requires_grad)
        for (int64_t r = 0; r < n; ++r)
          for (int64_t j = 0; j < out_dim; ++j)
            bias->grad[static_cast<size_t>(j)] += out->grad[static_cast<size_t>(r * out_dim + j)];
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> scale(Tape<Real>& tape, const Tensor<Real>& x, Real factor) {
  const bool track = tape.recording() && x->requires_grad;
  auto out = make_tensor<Real>(x->shape, track);
  for (size_t i = 0; i < x->value.size(); ++i) out->value[i] = factor * x->value[i];
  if (track) {
    tape.record([=] {
      for (size_t i = 0; i < x->value.size(); ++i) x->grad[i] += factor * out->grad[i];
    });
  }
  return out;
}

// exact GELU: 0.5 x (1 + erf(x / sqrt(2)))
template <typename Real>
Tensor<Real> gelu(Tape<Real>& tape, const Tensor<Real>& x) {
  const bool track = tape.recording() && x->requires_grad;
  auto out = make_tensor<Real>(x->shape, track);
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  for (size_t i = 0; i < x->value.size(); ++i) {
    const double v = static_cast<double>(x->value[i]);
    out->value[i] = static_cast<Real>(0.5 * v * (1.0 + std::erf(v * inv_sqrt2)));
  }
  if (track) {
    tape.record([=] {
      for (size_t i = 0; i < x->value.size(); ++i) {
        const double v = static_cast<double>(x->value[i]);
        const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
        x->grad[i] += static_cast<Real>((cdf + v * pdf) * static_cast<double>(out->grad[i]));
      }
    });
  }
  return out;
}

// ----------------------------- normalization -----------------------------

// normalize over the last dimension, then scale by gain and shift by bias
template <typename Real>
Tensor<Real> layer_norm(Tape<Real>& tape, const Tensor<Real>& x,
                        const Tensor<Real>& gain, const Tensor<Real>& bias,
                        Real eps = Real(1e-5)) {
  if (x->shape.empty() || gain->shape.size() != 1 || bias->shape.size() != 1 ||
      gain->shape[0] != x->shape.back() || bias->shape[0] != x->shape.back())
    throw TensorShapeError("layer_norm: shape mismatch " + shape_str(x->shape) +
                           " gain " + shape_str(gain->shape));
  const int64_t c = x->shape.back();
  const int64_t rows = x->size() / c;
  const bool track = tape.recording() &&
                     (x->requires_grad || gain->requires_grad || bias->requires_grad);
  auto out = make_tensor<Real>(x->shape, track);

  auto xhat = std::make_shared<std::vector<Real>>(x->value.size());
  auto inv_sigma = std::make_shared<std::vector<Real>>(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const Real* xv = x->value.data() + r * c;
    double mu = 0;
    for (int64_t j = 0; j < c; ++j) mu += xv[j];
    mu /= static_cast<double>(c);
    double var = 0;
    for (int64_t j = 0; j < c; ++j) {
      const double dd = xv[j] - mu;
      var += dd * dd;
    }
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + static_cast<double>(eps));
    (*inv_sigma)[static_cast<size_t>(r)] = static_cast<Real>(is);
    for (int64_t j = 0; j < c; ++j) {
      const Real h = static_cast<Real>((xv[j] - mu) * is);
      (*xhat)[static_cast<size_t>(r * c + j)] = h;
      out->value[static_cast<size_t>(r * c + j)] =
          h * gain->value[static_cast<size_t>(j)] + bias->value[static_cast<size_t>(j)];
    }
  }

  if (track) {
    tape.record([=] {
      for (int64_t r = 0; r < rows; ++r) {
        const Real* dout = out->grad.data() + r * c;
        const Real* h = xhat->data() + r * c;
        if (gain->requires_grad || bias->requires_grad) {
          for (int64_t j = 0; j < c; ++j) {
            if (gain->requires_grad) gain->grad[static_cast<size_t>(j)] += dout[j] * h[j];
            if (bias->requires_grad) bias->grad[static_cast<size_t>(j)] += dout[j];
          }
        }
        if (x->requires_grad) {
          double sum_dh = 0, sum_dh_h = 0;
          for (int64_t j = 0; j < c; ++j) {
            const double dh = static_cast<double>(dout[j]) * gain->value[static_cast<size_t>(j)];
            sum_dh += dh;
            sum_dh_h += dh * h[j];
          }
          const double is = (*inv_sigma)[static_cast<size_t>(r)];
          Real* dx = x->grad.data() + r * c;
          for (int64_t j = 0; j < c; ++j) {
            const double dh = static_cast<double>(dout[j]) * gain->value[static_cast<size_t>(j)];
            dx[j] += static_cast<Real>(
                is * (dh - sum_dh / c - static_cast<double>(h[j]) * sum_dh_h / c));
          }
        }
      }
    });
  }
  return out;
}

// ----------------------------- softmax -----------------------------

template <typename Real>
Tensor<Real> softmax(Tape<Real>& tape, const Tensor<Real>& x, int axis) {
  const auto rank = static_cast<int>(x->shape.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank)
    throw TensorShapeError("softmax: axis out of range for " + shape_str(x->shape));
  const int64_t n = x->shape[static_cast<size_t>(axis)];
  const int64_t outer = detail::product(x->shape, 0, static_cast<size_t>(axis));
  const int64_t inner = detail::product(x->shape, static_cast<size_t>(axis) + 1,
                                        x->shape.size());
  const bool track = tape.recording() && x->requires_grad;
  auto out = make_tensor<Real>(x->shape, track);

  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t i = 0; i < inner; ++i) {
      const int64_t base = o * n * inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (int64_t j = 0; j < n; ++j)
        mx = std::max(mx, static_cast<double>(x->value[static_cast<size_t>(base + j * inner)]));
      double sum = 0;
      for (int64_t j = 0; j < n; ++j) {
        const double e = std::exp(static_cast<double>(x->value[static_cast<size_t>(base + j * inner)]) - mx);
        out->value[static_cast<size_t>(base + j * inner)] = static_cast<Real>(e);
        sum += e;
      }
      const double inv = 1.0 / sum;
      for (int64_t j = 0; j < n; ++j)
        out->value[static_cast<size_t>(base + j * inner)] =
            static_cast<Real>(out->value[static_cast<size_t>(base + j * inner)] * inv);
    }
  }

  if (track) {
    tape.record([=] {
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t i = 0; i < inner; ++i) {
          const int64_t base = o * n * inner + i;
          double dot = 0;
          for (int64_t j = 0; j < n; ++j) {
            const auto k = static_cast<size_t>(base + j * inner);
            dot += static_cast<double>(out->value[k]) * out->grad[k];
          }
          for (int64_t j = 0; j < n; ++j) {
            const auto k = static_cast<size_t>(base + j * inner);
            x->grad[k] += static_cast<Real>(static_cast<double>(out->value[k]) *
                                            (static_cast<double>(out->grad[k]) - dot));
          }
        }
      }
    });
  }
  return out;
}

// masks scores[..., T, T] above the diagonal of the trailing two dims
template <typename Real>
Tensor<Real> causal_mask(Tape<Real>& tape, const Tensor<Real>& scores) {
  const auto rank = scores->shape.size();
  if (rank < 2 || scores->shape[rank - 1] != scores->shape[rank - 2])
    throw TensorShapeError("causal_mask: trailing dims must be square, got " +
                           shape_str(scores->shape));
  const int64_t t = scores->shape[rank - 1];
  const int64_t batch = scores->size() / (t * t);
  const bool track = tape.recording() && scores->requires_grad;
  auto out = make_tensor<Real>(scores->shape, track);
  constexpr Real kNegInf = Real(-1e30);
  for (int64_t s = 0; s < batch; ++s) {
    const int64_t base = s * t * t;
    for (int64_t i = 0; i < t; ++i)
      for (int64_t j = 0; j < t; ++j)
        out->value[static_cast<size_t>(base + i * t + j)] =
            j <= i ? scores->value[static_cast<size_t>(base + i * t + j)] : kNegInf;
  }
  if (track) {
    tape.record([=] {
      for (int64_t s = 0; s < batch; ++s) {
        const int64_t base = s * t * t;
        for (int64_t i = 0; i < t; ++i)
          for (int64_t j = 0; j <= i; ++j)
            scores->grad[static_cast<size_t>(base + i * t + j)] +=
                out->grad[static_cast<size_t>(base + i * t + j)];
      }
    });
  }
  return out;
}

// ----------------------------- lookup / dropout -----------------------------

template <typename Real>
Tensor<Real> embedding_lookup(Tape<Real>& tape, const Tensor<Real>& table,
                              std::vector<int32_t> ids) {
  if (table->shape.size() != 2)
    throw TensorShapeError("embedding_lookup: table must be 2D, got " +
                           shape_str(table->shape));
  const int64_t v = table->shape[0], c = table->shape[1];
  for (int32_t id : ids)
    if (id < 0 || id >= v)
      throw std::out_of_range("embedding_lookup: id " + std::to_string(id) +
                              " out of range [0," + std::to_string(v) + ")");
  const bool track = tape.recording() && table->requires_grad;
  auto out = make_tensor<Real>({static_cast<int64_t>(ids.size()), c}, track);
  for (size_t r = 0; r < ids.size(); ++r)
    std::copy_n(table->value.data() + static_cast<int64_t>(ids[r]) * c, c,
                out->value.data() + static_cast<int64_t>(r) * c);
  if (track) {
    auto captured = std::make_shared<std::vector<int32_t>>(std::move(ids));
    tape.record([=] {
      for (size_t r = 0; r < captured->size(); ++r) {
        const Real* src = out->grad.data() + static_cast<int64_t>(r) * c;
        Real* dst = table->grad.data() + static_cast<int64_t>((*captured)[r]) * c;
        for (int64_t j = 0; j < c; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

// Inverted dropout: kept activations scaled by 1/(1-rate) at train time so
// evaluation is the exact identity (the input node is returned unchanged).
template <typename Real>
Tensor<Real> dropout(Tape<Real>& tape, const Tensor<Real>& x, double rate,
                     bool train_flag, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw std::invalid_argument("dropout: rate must be in [0,1)");
  if (!train_flag || rate == 0.0) return x;

  const bool track = tape.recording() && x->requires_grad;
  auto out = make_tensor<Real>(x->shape, track);
  auto mask = std::make_shared<std::vector<Real>>(x->value.size());
  const Real keep_scale = static_cast<Real>(1.0 / (1.0 - rate));
  for (size_t i = 0; i < x->value.size(); ++i) {
    const Real m = rng.uniform() < rate ? Real(0) : keep_scale;
    (*mask)[i] = m;
    out->value[i] = m * x->value[i];
  }
  if (track) {
    tape.record([=] {
      for (size_t i = 0; i < x->value.size(); ++i) x->grad[i] += (*mask)[i] * out->grad[i];
    });
  }
  return out;
}

// ----------------------------- loss -----------------------------

constexpr int32_t kIgnoreTarget = -1;

// mean negative log-likelihood in nats over rows whose target is not
// kIgnoreTarget
template <typename Real>
Tensor<Real> cross_entropy(Tape<Real>& tape, const Tensor<Real>& logits,
                           std::vector<int32_t> targets) {
  if (logits->shape.size() != 2)
    throw TensorShapeError("cross_entropy: logits must be 2D, got " +
                           shape_str(logits->shape));
  const int64_t n = logits->shape[0], v = logits->shape[1];
  if (static_cast<int64_t>(targets.size()) != n)
    throw TensorShapeError("cross_entropy: expected " + std::to_string(n) +
                           " targets, got " + std::to_string(targets.size()));
  int64_t valid = 0;
  for (int32_t t : targets) {
    if (t == kIgnoreTarget) continue;
    if (t < 0 || t >= v)
      throw std::out_of_range("cross_entropy: target " + std::to_string(t) +
                              " out of range [0," + std::to_string(v) + ")");
    ++valid;
  }
  if (valid == 0) throw std::invalid_argument("cross_entropy: no valid targets");

  const bool track = tape.recording() && logits->requires_grad;
  auto out = make_tensor<Real>({1}, track);
  auto probs = std::make_shared<std::vector<Real>>(logits->value.size());

  double total = 0;
  for (int64_t r = 0; r < n; ++r) {
    const Real* row = logits->value.data() + r * v;
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < v; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double sum = 0;
    for (int64_t j = 0; j < v; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
    const double log_z = mx + std::log(sum);
    for (int64_t j = 0; j < v; ++j)
      (*probs)[static_cast<size_t>(r * v + j)] =
          static_cast<Real>(std::exp(static_cast<double>(row[j]) - log_z));
    if (targets[static_cast<size_t>(r)] != kIgnoreTarget)
      total += log_z - static_cast<double>(row[targets[static_cast<size_t>(r)]]);
  }
  out->value[0] = static_cast<Real>(total / static_cast<double>(valid));

  if (track) {
    auto captured = std::make_shared<std::vector<int32_t>>(std::move(targets));
    tape.record([=] {
      const Real d = out->grad[0] / static_cast<Real>(valid);
      for (int64_t r = 0; r < n; ++r) {
        const int32_t t = (*captured)[static_cast<size_t>(r)];
        if (t == kIgnoreTarget) continue;
        Real* dst = logits->grad.data() + r * v;
        const Real* p = probs->data() + r * v;
        for (int64_t j = 0; j < v; ++j) dst[j] += d * p[j];
        dst[t] -= d;
      }
    });
  }
  return out;
}

// ----------------------------- movement / reduction -----------------------------

template <typename Real>
Tensor<Real> reshape(Tape<Real>& tape, const Tensor<Real>& x,
                     std::vector<int64_t> new_shape) {
  int64_t n = 1;
  for (int64_t d : new_shape) n *= d;
  if (n != x->size())
    throw TensorShapeError("reshape: cannot view " + shape_str(x->shape) + " as " +
                           shape_str(new_shape));
  const bool track = tape.recording() && x->requires_grad;
  auto out = make_tensor<Real>(std::move(new_shape), track);
  out->value = x->value;
  if (track) {
    tape.record([=] {
      for (size_t i = 0; i < x->value.size(); ++i) x->grad[i] += out->grad[i];
    });
  }
  return out;
}

// [batch*t, heads*hd] -> [batch*heads, t, hd]
template <typename Real>
Tensor<Real> split_heads(Tape<Real>& tape, const Tensor<Real>& x, int64_t batch,
                         int64_t heads) {
  if (x->shape.size() != 2 || x->shape[0] % batch != 0 || x->shape[1] % heads != 0)
    throw TensorShapeError("split_heads: cannot split " + shape_str(x->shape));
  const int64_t t = x->shape[0] / batch, c = x->shape[1], hd = c / heads;
  const bool track = tape.recording() && x->requires_grad;
  auto out = make_tensor<Real>({batch * heads, t, hd}, track);
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t h = 0; h < heads; ++h)
      for (int64_t i = 0; i < t; ++i)
        std::copy_n(x->value.data() + (b * t + i) * c + h * hd, hd,
                    out->value.data() + (((b * heads + h) * t) + i) * hd);
  if (track) {
    tape.record([=] {
      for (int64_t b = 0; b < batch; ++b)
        for (int64_t h = 0; h < heads; ++h)
          for (int64_t i = 0; i < t; ++i) {
            const Real* src = out->grad.data() + (((b * heads + h) * t) + i) * hd;
            Real* dst = x->grad.data() + (b * t + i) * c + h * hd;
            for (int64_t j = 0; j < hd; ++j) dst[j] += src[j];
          }
    });
  }
  return out;
}

// [batch*heads, t, hd] -> [batch*t, heads*hd]; inverse of split_heads
template <typename Real>
Tensor<Real> merge_heads(Tape<Real>& tape, const Tensor<Real>& x, int64_t heads) {
  if (x->shape.size() != 3 || x->shape[0] % heads != 0)
    throw TensorShapeError("merge_heads: cannot merge " + shape_str(x->shape));
  const int64_t batch = x->shape[0] / heads, t = x->shape[1], hd = x->shape[2];
  const int64_t c = heads * hd;
  const bool track = tape.recording() && x->requires_grad;
  auto out = make_tensor<Real>({batch * t, c}, track);
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t h = 0; h < heads; ++h)
      for (int64_t i = 0; i < t; ++i)
        std::copy_n(x->value.data() + (((b * heads + h) * t) + i) * hd, hd,
                    out->value.data() + (b * t + i) * c + h * hd);
  if (track) {
    tape.record([=] {
      for (int64_t b = 0; b < batch; ++b)
        for (int64_t h = 0; h < heads; ++h)
          for (int64_t i = 0; i < t; ++i) {
            const Real* src = out->grad.data() + (b * t + i) * c + h * hd;
            Real* dst = x->grad.data() + (((b * heads + h) * t) + i) * hd;
            for (int64_t j = 0; j < hd; ++j) dst[j] += src[j];
          }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> sum(Tape<Real>& tape, const Tensor<Real>& x) {
  const bool track = tape.recording() && x->requires_grad;
  auto out = make_tensor<Real>({1}, track);
  double total = 0;
  for (Real v : x->value) total += v;
  out->value[0] = static_cast<Real>(total);
  if (track) {
    tape.record([=] {
      for (size_t i = 0; i < x->value.size(); ++i) x->grad[i] += out->grad[0];
    });
  }
  return out;
}

// scalar dot product with fixed weights; the test helper of choice for
// reducing an op output to a scalar without cancelling gradient structure
template <typename Real>
Tensor<Real> weighted_sum(Tape<Real>& tape, const Tensor<Real>& x,
                          std::vector<Real> weights) {
  if (static_cast<int64_t>(weights.size()) != x->size())
    throw TensorShapeError("weighted_sum: weight count mismatch");
  const bool track = tape.recording() && x->requires_grad;
  auto out = make_tensor<Real>({1}, track);
  double total = 0;
  for (size_t i = 0; i < x->value.size(); ++i)
    total += static_cast<double>(weights[i]) * x->value[i];
  out->value[0] = static_cast<Real>(total);
  if (track) {
    auto w = std::make_shared<std::vector<Real>>(std::move(weights));
    tape.record([=] {
      for (size_t i = 0; i < x->value.size(); ++i) x->grad[i] += (*w)[i] * out->grad[0];
    });
  }
  return out;
}

// ----------------------------- gradient check -----------------------------

// Compares the reverse-mode gradient of a scalar-valued tensor function
// against central finite differences, coordinate by coordinate. Returns the
// max relative error |ad - fd| / max(|ad| + |fd|, 1e-2); the denominator
// floor makes near-zero-gradient coordinates read as absolute error.
template <typename Real>
double grad_check(const std::function<Tensor<Real>(Tape<Real>&, const Tensor<Real>&)>& f,
                  const Tensor<Real>& x, double epsilon = 1e-5) {
  if (epsilon <= 0) throw std::invalid_argument("grad_check: epsilon must be > 0");
  x->requires_grad = true;
  if (x->grad.size() != x->value.size()) x->grad.assign(x->value.size(), Real(0));
  zero_grad(x);

  Tape<Real> tape;
  auto out = f(tape, x);
  if (out->size() != 1)
    throw std::invalid_argument("grad_check: function must be scalar-valued");
  tape.backward(out);
  std::vector<Real> analytic = x->grad;

  auto eval = [&](const Tensor<Real>& point) {
    Tape<Real> quiet(false);
    return static_cast<double>(f(quiet, point)->value[0]);
  };

  double max_rel = 0;
  for (size_t i = 0; i < x->value.size(); ++i) {
    const Real saved = x->value[i];
    const double h = epsilon * std::max(1.0, std::abs(static_cast<double>(saved)));
    x->value[i] = static_cast<Real>(saved + h);
    const double up = eval(x);
    x->value[i] = static_cast<Real>(saved - h);
    const double down = eval(x);
    x->value[i] = saved;
    const double fd = (up - down) / (2.0 * h);
    const double ad = static_cast<double>(analytic[i]);
    const double rel = std::abs(ad - fd) / std::max(std::abs(ad) + std::abs(fd), 1e-2);
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace proxygap
