#pragma once
// Reverse-mode automatic differentiation over 2D tensors.
//
// Every op records a node in a DAG; backward() walks the DAG in reverse
// topological order and pushes gradients through per-op closures. Gradients
// accumulate into a persistent .grad buffer, so running backward twice without
// zero_grad doubles every leaf gradient -- the semantics optimizers expect.
// Within one backward pass a transient buffer (gtmp) carries the flowing
// gradient so that repeated passes stay mathematically independent.

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "tenext/rng.hpp"
#include "tenext/tensor.hpp"

namespace tenext {

template <typename T>
struct TapeNode {
  Tensor<T> value;
  Tensor<T> grad;  // persistent accumulator; allocated on first backward
  Tensor<T> gtmp;  // scratch for the pass currently running
  bool requires_grad = false;
  std::string name;  // non-empty for parameters
  std::vector<std::shared_ptr<TapeNode>> parents;
  std::function<void(TapeNode&)> backward_rule;
};

// Global switch: inside a NoGradGuard ops produce detached nodes, so inference
// does not retain a graph.
struct GradMode {
  static bool& enabled() {
    static thread_local bool on = true;
    return on;
  }
};

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(GradMode::enabled()) { GradMode::enabled() = false; }
  ~NoGradGuard() { GradMode::enabled() = prev; }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<TapeNode<T>> n) : node_(std::move(n)) {}

  static Var constant(Tensor<T> v) {
    auto n = std::make_shared<TapeNode<T>>();
    n->value = std::move(v);
    return Var(std::move(n));
  }

  static Var param(Tensor<T> v, std::string name) {
    auto n = std::make_shared<TapeNode<T>>();
    n->value = std::move(v);
    n->requires_grad = true;
    n->name = std::move(name);
    return Var(std::move(n));
  }

  bool valid() const { return node_ != nullptr; }
  TapeNode<T>& node() const { return *node_; }
  const std::shared_ptr<TapeNode<T>>& ptr() const { return node_; }

  Tensor<T>& value() { return node_->value; }
  const Tensor<T>& value() const { return node_->value; }

  // Gradient accumulated so far; zeros if backward never reached this node.
  const Tensor<T>& grad() const {
    if (node_->grad.empty() && !node_->value.empty())
      node_->grad = Tensor<T>::zeros(node_->value.shape);
    return node_->grad;
  }

  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.fill(T(0));
  }

  bool requires_grad() const { return node_->requires_grad; }
  const std::string& name() const { return node_->name; }

  int rows() const { return node_->value.rows(); }
  int cols() const { return node_->value.cols(); }

 private:
  std::shared_ptr<TapeNode<T>> node_;
};

namespace detail {

template <typename T>
std::shared_ptr<TapeNode<T>> make_op(Tensor<T> value,
                                     std::vector<std::shared_ptr<TapeNode<T>>> parents,
                                     std::function<void(TapeNode<T>&)> rule) {
  auto n = std::make_shared<TapeNode<T>>();
  n->value = std::move(value);
  bool need = false;
  if (GradMode::enabled())
    for (const auto& p : parents)
      if (p->requires_grad) need = true;
  if (need) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_rule = std::move(rule);
  }
  return n;
}

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Backward driver
// ---------------------------------------------------------------------------

template <typename T>
void backward(const Var<T>& root) {
  if (!root.valid()) throw std::invalid_argument("backward: invalid variable");
  if (root.value().numel() != 1)
    throw std::invalid_argument("backward: root must be a scalar, got shape " +
                                root.value().shape_str());

  // Iterative postorder DFS: every node appears after all of its parents.
  std::vector<TapeNode<T>*> topo;
  std::unordered_set<TapeNode<T>*> seen;
  std::vector<std::pair<TapeNode<T>*, size_t>> stack;
  stack.emplace_back(&root.node(), 0);
  seen.insert(&root.node());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      TapeNode<T>* p = n->parents[idx++].get();
      if (seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      topo.push_back(n);
      stack.pop_back();
    }
  }

  for (TapeNode<T>* n : topo) n->gtmp = Tensor<T>::zeros(n->value.shape);
  root.node().gtmp.fill(T(1));

  // Reverse topological order: a node's incoming gradient is complete before
  // its rule distributes it to parents.
  for (auto it = topo.rbegin(); it != topo.rend(); ++it)
    if ((*it)->backward_rule) (*it)->backward_rule(**it);

  for (TapeNode<T>* n : topo) {
    if (n->requires_grad) {
      if (n->grad.empty()) n->grad = Tensor<T>::zeros(n->value.shape);
      detail::add_into(n->grad, n->gtmp);
    }
    n->gtmp = Tensor<T>();  // release scratch
  }
}

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  Tensor<T> c = matmul_value(a.value(), b.value());
  auto pa = a.ptr();
  auto pb = b.ptr();
  return Var<T>(detail::make_op<T>(
      std::move(c), {pa, pb}, [pa, pb](TapeNode<T>& n) {
        const Tensor<T>& av = pa->value;
        const Tensor<T>& bv = pb->value;
        const int m = av.shape[0], k = av.shape[1], nn = bv.shape[1];
        // dA += dC * B^T ; dB += A^T * dC
        gemm_nt(n.gtmp.data.data(), bv.data.data(), pa->gtmp.data.data(), m, nn, k, true);
        gemm_tn(av.data.data(), n.gtmp.data.data(), pb->gtmp.data.data(), m, k, nn, true);
      }));
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (!a.value().same_shape(b.value()))
    throw std::invalid_argument("add: shape mismatch " + a.value().shape_str() + " vs " +
                                b.value().shape_str());
  Tensor<T> c = a.value();
  detail::add_into(c, b.value());
  auto pa = a.ptr();
  auto pb = b.ptr();
  return Var<T>(detail::make_op<T>(std::move(c), {pa, pb}, [pa, pb](TapeNode<T>& n) {
    detail::add_into(pa->gtmp, n.gtmp);
    detail::add_into(pb->gtmp, n.gtmp);
  }));
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  if (!a.value().same_shape(b.value()))
    throw std::invalid_argument("mul: shape mismatch " + a.value().shape_str() + " vs " +
                                b.value().shape_str());
  Tensor<T> c = a.value();
  for (size_t i = 0; i < c.data.size(); ++i) c.data[i] *= b.value().data[i];
  auto pa = a.ptr();
  auto pb = b.ptr();
  return Var<T>(detail::make_op<T>(std::move(c), {pa, pb}, [pa, pb](TapeNode<T>& n) {
    for (size_t i = 0; i < n.gtmp.data.size(); ++i) {
      pa->gtmp.data[i] += n.gtmp.data[i] * pb->value.data[i];
      pb->gtmp.data[i] += n.gtmp.data[i] * pa->value.data[i];
    }
  }));
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> c = a.value();
  for (T& v : c.data) v *= s;
  auto pa = a.ptr();
  return Var<T>(detail::make_op<T>(std::move(c), {pa}, [pa, s](TapeNode<T>& n) {
    for (size_t i = 0; i < n.gtmp.data.size(); ++i) pa->gtmp.data[i] += s * n.gtmp.data[i];
  }));
}

// y[i,j] = x[i,j] + b[j]
template <typename T>
Var<T> add_bias(const Var<T>& x, const Var<T>& b) {
  if (x.value().ndim() != 2 || b.value().numel() != x.value().shape[1])
    throw std::invalid_argument("add_bias: bias length must equal column count");
  Tensor<T> c = x.value();
  const int rows = c.shape[0], cols = c.shape[1];
  for (int i = 0; i < rows; ++i) {
    T* r = c.row_ptr(i);
    for (int j = 0; j < cols; ++j) r[j] += b.value().data[j];
  }
  auto px = x.ptr();
  auto pb = b.ptr();
  return Var<T>(detail::make_op<T>(std::move(c), {px, pb}, [px, pb](TapeNode<T>& n) {
    detail::add_into(px->gtmp, n.gtmp);
    const int rows = n.gtmp.shape[0], cols = n.gtmp.shape[1];
    for (int i = 0; i < rows; ++i) {
      const T* r = n.gtmp.row_ptr(i);
      for (int j = 0; j < cols; ++j) pb->gtmp.data[j] += r[j];
    }
  }));
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> c = x.value();
  for (T& v : c.data) v = v > T(0) ? v : T(0);
  auto px = x.ptr();
  return Var<T>(detail::make_op<T>(std::move(c), {px}, [px](TapeNode<T>& n) {
    for (size_t i = 0; i < n.gtmp.data.size(); ++i)
      if (px->value.data[i] > T(0)) px->gtmp.data[i] += n.gtmp.data[i];
  }));
}

// GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <typename T>
Var<T> gelu(const Var<T>& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  Tensor<T> c = x.value();
  for (T& v : c.data) {
    const double xv = static_cast<double>(v);
    v = static_cast<T>(0.5 * xv * (1.0 + std::tanh(kC * (xv + kA * xv * xv * xv))));
  }
  auto px = x.ptr();
  return Var<T>(detail::make_op<T>(std::move(c), {px}, [px](TapeNode<T>& n) {
    for (size_t i = 0; i < n.gtmp.data.size(); ++i) {
      const double xv = static_cast<double>(px->value.data[i]);
      const double th = std::tanh(kC * (xv + kA * xv * xv * xv));
      const double d =
          0.5 * (1.0 + th) + 0.5 * xv * (1.0 - th * th) * kC * (1.0 + 3.0 * kA * xv * xv);
      px->gtmp.data[i] += static_cast<T>(d) * n.gtmp.data[i];
    }
  }));
}

template <typename T>
inline T sigmoid_scalar(T x) {
  if (x >= T(0)) {
    const T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> c = x.value();
  for (T& v : c.data) v = sigmoid_scalar(v);
  auto px = x.ptr();
  // dy/dx = y (1 - y), using the stored output.
  Tensor<T> saved = c;
  return Var<T>(detail::make_op<T>(
      std::move(c), {px}, [px, saved = std::move(saved)](TapeNode<T>& n) {
        for (size_t i = 0; i < n.gtmp.data.size(); ++i) {
          const T y = saved.data[i];
          px->gtmp.data[i] += y * (T(1) - y) * n.gtmp.data[i];
        }
      }));
}

// Elementwise clamp with a gated (exact sub-)gradient: flat outside [lo, hi].
// The model head uses this to keep probabilities strictly inside (0, 1) even
// when float sigmoid would saturate.
template <typename T>
Var<T> clamp(const Var<T>& x, T lo, T hi) {
  if (!(lo < hi)) throw std::invalid_argument("clamp: lo must be below hi");
  Tensor<T> c = x.value();
  for (T& v : c.data) v = v < lo ? lo : (v > hi ? hi : v);
  auto px = x.ptr();
  return Var<T>(detail::make_op<T>(std::move(c), {px}, [px, lo, hi](TapeNode<T>& n) {
    for (size_t i = 0; i < n.gtmp.data.size(); ++i) {
      const T v = px->value.data[i];
      if (v > lo && v < hi) px->gtmp.data[i] += n.gtmp.data[i];
    }
  }));
}

// Row-wise layer normalization over the channel axis with learnable affine.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  T eps = T(1e-5)) {
  if (x.value().ndim() != 2) throw std::invalid_argument("layer_norm: input must be 2D");
  const int rows = x.value().shape[0], cols = x.value().shape[1];
  if (gamma.value().numel() != cols || beta.value().numel() != cols)
    throw std::invalid_argument("layer_norm: affine size must equal channel count");

  Tensor<T> y({rows, cols});
  std::vector<T> inv_std(rows);
  Tensor<T> xhat({rows, cols});
  for (int i = 0; i < rows; ++i) {
    const T* r = x.value().row_ptr(i);
    T mean = T(0);
    for (int j = 0; j < cols; ++j) mean += r[j];
    mean /= T(cols);
    T var = T(0);
    for (int j = 0; j < cols; ++j) {
      const T d = r[j] - mean;
      var += d * d;
    }
    var /= T(cols);  // biased variance
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[i] = is;
    T* xh = xhat.row_ptr(i);
    T* yr = y.row_ptr(i);
    for (int j = 0; j < cols; ++j) {
      xh[j] = (r[j] - mean) * is;
      yr[j] = gamma.value().data[j] * xh[j] + beta.value().data[j];
    }
  }

  auto px = x.ptr();
  auto pg = gamma.ptr();
  auto pb = beta.ptr();
  return Var<T>(detail::make_op<T>(
      std::move(y), {px, pg, pb},
      [px, pg, pb, inv_std = std::move(inv_std), xhat = std::move(xhat)](TapeNode<T>& n) {
        const int rows = n.gtmp.shape[0], cols = n.gtmp.shape[1];
        for (int i = 0; i < rows; ++i) {
          const T* gy = n.gtmp.row_ptr(i);
          const T* xh = xhat.row_ptr(i);
          T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
          for (int j = 0; j < cols; ++j) {
            const T dxh = gy[j] * pg->value.data[j];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xh[j];
            pg->gtmp.data[j] += gy[j] * xh[j];
            pb->gtmp.data[j] += gy[j];
          }
          const T inv_n = T(1) / T(cols);
          T* gx = px->gtmp.row_ptr(i);
          for (int j = 0; j < cols; ++j) {
            const T dxh = gy[j] * pg->value.data[j];
            gx[j] += inv_std[i] * (dxh - inv_n * sum_dxhat - xh[j] * inv_n * sum_dxhat_xhat);
          }
        }
      }));
}

// Binary cross-entropy over probabilities with clamping and an optional
// positive-class weight. Returns a scalar (mean reduction).
template <typename T>
Var<T> bce_loss(const Var<T>& p, const Tensor<T>& targets, T pos_weight = T(1)) {
  if (!p.value().same_shape(targets))
    throw std::invalid_argument("bce_loss: prediction/target shape mismatch");
  if (p.value().numel() == 0) throw std::invalid_argument("bce_loss: empty input");
  for (const T& t : targets.data)
    if (t != T(0) && t != T(1))
      throw std::invalid_argument("bce_loss: labels must be 0 or 1");

  constexpr double kEps = 1e-7;
  const int64_t n_el = p.value().numel();
  double acc = 0.0;
  for (int64_t i = 0; i < n_el; ++i) {
    double pv = static_cast<double>(p.value().data[i]);
    pv = pv < kEps ? kEps : (pv > 1.0 - kEps ? 1.0 - kEps : pv);
    const double y = static_cast<double>(targets.data[i]);
    acc += static_cast<double>(pos_weight) * y * std::log(pv) + (1.0 - y) * std::log(1.0 - pv);
  }
  Tensor<T> out({1});
  out.data[0] = static_cast<T>(-acc / static_cast<double>(n_el));

  auto pp = p.ptr();
  return Var<T>(detail::make_op<T>(
      std::move(out), {pp}, [pp, targets, pos_weight](TapeNode<T>& n) {
        const T g = n.gtmp.data[0];
        const int64_t n_el = pp->value.numel();
        const T inv_n = T(1) / static_cast<T>(n_el);
        for (int64_t i = 0; i < n_el; ++i) {
          const double pv = static_cast<double>(pp->value.data[i]);
          if (pv <= kEps || pv >= 1.0 - kEps) continue;  // clamp region: flat
          const double y = static_cast<double>(targets.data[i]);
          const double d = static_cast<double>(pos_weight) * y / pv - (1.0 - y) / (1.0 - pv);
          pp->gtmp.data[i] += g * inv_n * static_cast<T>(-d);
        }
      }));
}

// y[r] = x[idx[r]]
template <typename T>
Var<T> gather_rows(const Var<T>& x, std::vector<int> idx) {
  if (x.value().ndim() != 2) throw std::invalid_argument("gather_rows: input must be 2D");
  const int cols = x.value().shape[1];
  for (int i : idx)
    if (i < 0 || i >= x.value().shape[0])
      throw std::out_of_range("gather_rows: row index out of range");
  Tensor<T> y({static_cast<int>(idx.size()), cols});
  for (size_t r = 0; r < idx.size(); ++r)
    std::copy_n(x.value().row_ptr(idx[r]), cols, y.row_ptr(static_cast<int>(r)));
  auto px = x.ptr();
  return Var<T>(detail::make_op<T>(
      std::move(y), {px}, [px, idx = std::move(idx)](TapeNode<T>& n) {
        const int cols = n.gtmp.shape[1];
        for (size_t r = 0; r < idx.size(); ++r) {
          const T* src = n.gtmp.row_ptr(static_cast<int>(r));
          T* dst = px->gtmp.row_ptr(idx[r]);
          for (int j = 0; j < cols; ++j) dst[j] += src[j];
        }
      }));
}

// y[idx[r]] += x[r]; rows not hit by any index stay zero.
template <typename T>
Var<T> scatter_rows(const Var<T>& x, std::vector<int> idx, int n_out) {
  if (x.value().ndim() != 2) throw std::invalid_argument("scatter_rows: input must be 2D");
  if (static_cast<int>(idx.size()) != x.value().shape[0])
    throw std::invalid_argument("scatter_rows: one target index per input row required");
  const int cols = x.value().shape[1];
  for (int i : idx)
    if (i < 0 || i >= n_out) throw std::out_of_range("scatter_rows: target index out of range");
  Tensor<T> y({n_out, cols});
  for (size_t r = 0; r < idx.size(); ++r) {
    const T* src = x.value().row_ptr(static_cast<int>(r));
    T* dst = y.row_ptr(idx[r]);
    for (int j = 0; j < cols; ++j) dst[j] += src[j];
  }
  auto px = x.ptr();
  return Var<T>(detail::make_op<T>(
      std::move(y), {px}, [px, idx = std::move(idx)](TapeNode<T>& n) {
        const int cols = n.gtmp.shape[1];
        for (size_t r = 0; r < idx.size(); ++r) {
          const T* src = n.gtmp.row_ptr(idx[r]);
          T* dst = px->gtmp.row_ptr(static_cast<int>(r));
          for (int j = 0; j < cols; ++j) dst[j] += src[j];
        }
      }));
}

template <typename T>
Var<T> concat_cols(const Var<T>& a, const Var<T>& b) {
  if (a.value().ndim() != 2 || b.value().ndim() != 2 ||
      a.value().shape[0] != b.value().shape[0])
    throw std::invalid_argument("concat_cols: row counts must match");
  const int rows = a.value().shape[0];
  const int ca = a.value().shape[1], cb = b.value().shape[1];
  Tensor<T> y({rows, ca + cb});
  for (int i = 0; i < rows; ++i) {
    std::copy_n(a.value().row_ptr(i), ca, y.row_ptr(i));
    std::copy_n(b.value().row_ptr(i), cb, y.row_ptr(i) + ca);
  }
  auto pa = a.ptr();
  auto pb = b.ptr();
  return Var<T>(detail::make_op<T>(std::move(y), {pa, pb}, [pa, pb, ca, cb](TapeNode<T>& n) {
    const int rows = n.gtmp.shape[0];
    for (int i = 0; i < rows; ++i) {
      const T* src = n.gtmp.row_ptr(i);
      T* da = pa->gtmp.row_ptr(i);
      T* db = pb->gtmp.row_ptr(i);
      for (int j = 0; j < ca; ++j) da[j] += src[j];
      for (int j = 0; j < cb; ++j) db[j] += src[ca + j];
    }
  }));
}

// Stochastic depth. Drops the whole tensor (or each batch sample, when row
// ownership is given) with probability `rate` during training; survivors are
// scaled by 1/(1-rate) so the expectation is unchanged. Identity in eval mode.
template <typename T>
Var<T> drop_path(const Var<T>& x, double rate, bool training, Rng& rng,
                 const std::vector<int>* sample_of_row = nullptr) {
  if (rate < 0.0 || rate >= 1.0)
    throw std::invalid_argument("drop_path: rate must be in [0, 1)");
  if (!training || rate == 0.0) return x;

  const int rows = x.value().shape[0];
  std::vector<T> factor(static_cast<size_t>(rows));
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  if (sample_of_row) {
    if (static_cast<int>(sample_of_row->size()) != rows)
      throw std::invalid_argument("drop_path: one sample id per row required");
    int max_id = 0;
    for (int s : *sample_of_row) max_id = s > max_id ? s : max_id;
    std::vector<T> per_sample(static_cast<size_t>(max_id) + 1);
    for (auto& f : per_sample) f = rng.uniform() < rate ? T(0) : keep_scale;
    for (int r = 0; r < rows; ++r) factor[r] = per_sample[(*sample_of_row)[r]];
  } else {
    const T f = rng.uniform() < rate ? T(0) : keep_scale;
    std::fill(factor.begin(), factor.end(), f);
  }

  Tensor<T> y = x.value();
  const int cols = y.shape[1];
  for (int i = 0; i < rows; ++i) {
    T* r = y.row_ptr(i);
    for (int j = 0; j < cols; ++j) r[j] *= factor[i];
  }
  auto px = x.ptr();
  return Var<T>(detail::make_op<T>(
      std::move(y), {px}, [px, factor = std::move(factor)](TapeNode<T>& n) {
        const int rows = n.gtmp.shape[0], cols = n.gtmp.shape[1];
        for (int i = 0; i < rows; ++i) {
          const T* src = n.gtmp.row_ptr(i);
          T* dst = px->gtmp.row_ptr(i);
          for (int j = 0; j < cols; ++j) dst[j] += factor[i] * src[j];
        }
      }));
}

template <typename T>
Var<T> sum_all(const Var<T>& x) {
  Tensor<T> y({1});
  T acc = T(0);
  for (const T& v : x.value().data) acc += v;
  y.data[0] = acc;
  auto px = x.ptr();
  return Var<T>(detail::make_op<T>(std::move(y), {px}, [px](TapeNode<T>& n) {
    const T g = n.gtmp.data[0];
    for (T& v : px->gtmp.data) v += g;
  }));
}

template <typename T>
Var<T> mean_all(const Var<T>& x) {
  if (x.value().numel() == 0) throw std::invalid_argument("mean_all: empty input");
  return scale(sum_all(x), T(1) / static_cast<T>(x.value().numel()));
}

}  // namespace tenext
