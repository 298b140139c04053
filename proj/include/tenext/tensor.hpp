#pragma once
// Dense row-major tensor plus the three GEMM forms the engine needs.
// Shapes are kept as a small vector of dims; almost everything in the pipeline
// is 2D (rows x channels), weights of spatial convolutions are 3D (K^3 x Cin x Cout).

#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace tenext {

template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(count(shape), T(0)) {}

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

  static Tensor full(std::vector<int> s, T v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  static Tensor from_vector(std::vector<int> s, std::vector<T> v) {
    if (count(s) != static_cast<int64_t>(v.size()))
      throw std::invalid_argument("tensor: data size does not match shape");
    Tensor t;
    t.shape = std::move(s);
    t.data = std::move(v);
    return t;
  }

  static int64_t count(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) {
      if (d < 0) throw std::invalid_argument("tensor: negative dimension");
      n *= d;
    }
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  bool empty() const { return data.empty(); }

  // 2D accessors; the first dim is "rows" and the last is "cols" so that the
  // 3D conv-weight tensor can reuse them per slice where convenient.
  int rows() const { return shape.empty() ? 0 : shape[0]; }
  int cols() const { return shape.empty() ? 0 : shape.back(); }

  T& at(int i, int j) { return data[static_cast<size_t>(i) * cols() + j]; }
  const T& at(int i, int j) const { return data[static_cast<size_t>(i) * cols() + j]; }

  T* row_ptr(int i) { return data.data() + static_cast<size_t>(i) * cols(); }
  const T* row_ptr(int i) const { return data.data() + static_cast<size_t>(i) * cols(); }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  std::string shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
      if (i) s += ", ";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }
};

// ---------------------------------------------------------------------------
// GEMM kernels. Written so gcc's vectorizer turns the inner loops into FMA
// streams; all accumulation orders are fixed, so results are deterministic.
// ---------------------------------------------------------------------------

// C[M,N] (+)= A[M,K] * B[K,N]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<size_t>(i) * k;
    T* crow = c + static_cast<size_t>(i) * n;
    if (!accumulate)
      for (int j = 0; j < n; ++j) crow[j] = T(0);
    for (int p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[M,N] (+)= A[M,K] * B[N,K]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<size_t>(i) * k;
    T* crow = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const T* brow = b + static_cast<size_t>(j) * k;
      T acc = T(0);
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] = accumulate ? crow[j] + acc : acc;
    }
  }
}

// C[K,N] (+)= A[M,K]^T * B[M,N]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, int m, int k, int n, bool accumulate) {
  if (!accumulate) std::fill(c, c + static_cast<size_t>(k) * n, T(0));
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<size_t>(i) * k;
    const T* brow = b + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const T av = arow[p];
      T* crow = c + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
Tensor<T> matmul_value(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2)
    throw std::invalid_argument("matmul: both operands must be 2D");
  if (a.shape[1] != b.shape[0])
    throw std::invalid_argument("matmul: inner dimensions disagree: " + a.shape_str() +
                                " vs " + b.shape_str());
  Tensor<T> c({a.shape[0], b.shape[1]});
  gemm_nn(a.data.data(), b.data.data(), c.data.data(), a.shape[0], a.shape[1], b.shape[1],
          false);
  return c;
}

}  // namespace tenext
