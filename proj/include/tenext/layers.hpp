#pragma once
// Network layers on sparse tensors: convolution (regular, strided, transposed),
// layer normalization and the two residual block flavors.

#include <memory>
#include <string>
#include <vector>

#include "tenext/autograd.hpp"
#include "tenext/rng.hpp"
#include "tenext/sparse.hpp"

namespace tenext {

// ---------------------------------------------------------------------------
// Fused convolution op: gather -> GEMM -> scatter per kernel offset, with the
// matching backward (mirror routing for dX, per-offset outer products for dW).
// `transposed` swaps the roles of the kernel map's (tap, center) pairs, which
// is exactly the adjoint of the forward convolution.
// ---------------------------------------------------------------------------

template <typename T>
Var<T> sparse_conv_apply(const Var<T>& x, const Var<T>& w,
                         std::shared_ptr<const KernelMap> kmap, int n_out,
                         bool transposed) {
  if (x.value().ndim() != 2) throw std::invalid_argument("conv: input must be 2D");
  if (w.value().ndim() != 3) throw std::invalid_argument("conv: weight must be 3D");
  const int n_off = w.value().shape[0];
  const int c_in = w.value().shape[1];
  const int c_out = w.value().shape[2];
  if (static_cast<size_t>(n_off) != kmap->offsets.size())
    throw std::invalid_argument("conv: weight offset count does not match kernel map");
  if (x.value().shape[1] != c_in)
    throw std::invalid_argument("conv: input has " + std::to_string(x.value().shape[1]) +
                                " channels, weights expect " + std::to_string(c_in));

  size_t max_pairs = 0;
  for (const auto& p : kmap->pairs) max_pairs = std::max(max_pairs, p.size());

  Tensor<T> y({n_out, c_out});
  {
    std::vector<T> buf_in(max_pairs * c_in), buf_out(max_pairs * c_out);
    for (int k = 0; k < n_off; ++k) {
      const auto& pairs = kmap->pairs[k];
      if (pairs.empty()) continue;
      const int np = static_cast<int>(pairs.size());
      for (int r = 0; r < np; ++r) {
        const int src = transposed ? pairs[r].second : pairs[r].first;
        std::copy_n(x.value().row_ptr(src), c_in, buf_in.data() + static_cast<size_t>(r) * c_in);
      }
      const T* wk = w.value().data.data() + static_cast<size_t>(k) * c_in * c_out;
      gemm_nn(buf_in.data(), wk, buf_out.data(), np, c_in, c_out, false);
      for (int r = 0; r < np; ++r) {
        const int dst = transposed ? pairs[r].first : pairs[r].second;
        T* yr = y.row_ptr(dst);
        const T* br = buf_out.data() + static_cast<size_t>(r) * c_out;
        for (int j = 0; j < c_out; ++j) yr[j] += br[j];
      }
    }
  }

  auto px = x.ptr();
  auto pw = w.ptr();
  return Var<T>(detail::make_op<T>(
      std::move(y), {px, pw},
      [px, pw, kmap = std::move(kmap), transposed, n_off, c_in, c_out,
       max_pairs](TapeNode<T>& n) {
        std::vector<T> gbuf(max_pairs * c_out), xbuf(max_pairs * c_in),
            dbuf(max_pairs * c_in);
        for (int k = 0; k < n_off; ++k) {
          const auto& pairs = kmap->pairs[k];
          if (pairs.empty()) continue;
          const int np = static_cast<int>(pairs.size());
          for (int r = 0; r < np; ++r) {
            const int out_row = transposed ? pairs[r].first : pairs[r].second;
            const int in_row = transposed ? pairs[r].second : pairs[r].first;
            std::copy_n(n.gtmp.row_ptr(out_row), c_out,
                        gbuf.data() + static_cast<size_t>(r) * c_out);
            std::copy_n(px->value.row_ptr(in_row), c_in,
                        xbuf.data() + static_cast<size_t>(r) * c_in);
          }
          const T* wk = pw->value.data.data() + static_cast<size_t>(k) * c_in * c_out;
          // dX rows += dY rows * W_k^T
          gemm_nt(gbuf.data(), wk, dbuf.data(), np, c_out, c_in, false);
          for (int r = 0; r < np; ++r) {
            const int in_row = transposed ? pairs[r].second : pairs[r].first;
            T* dst = px->gtmp.row_ptr(in_row);
            const T* src = dbuf.data() + static_cast<size_t>(r) * c_in;
            for (int j = 0; j < c_in; ++j) dst[j] += src[j];
          }
          // dW_k += X_gathered^T * dY_gathered
          T* gwk = pw->gtmp.data.data() + static_cast<size_t>(k) * c_in * c_out;
          gemm_tn(xbuf.data(), gbuf.data(), gwk, np, c_in, c_out, true);
        }
      }));
}

// ---------------------------------------------------------------------------
// Convolution layer
// ---------------------------------------------------------------------------

template <typename T>
struct SparseConvLayer {
  int c_in = 0, c_out = 0;
  int kernel_size = 1, stride = 1;
  bool transposed = false, has_bias = true;
  Var<T> w;  // {offset count, c_in, c_out}
  Var<T> b;  // {c_out}

  int offset_count() const {
    return kernel_size == stride && stride > 1
               ? stride * stride * stride
               : kernel_size * kernel_size * kernel_size;
  }

  void params(std::vector<Var<T>>& out) const {
    out.push_back(w);
    if (has_bias) out.push_back(b);
  }
};

template <typename T>
SparseConvLayer<T> make_sparse_conv_layer(int c_in, int c_out, int kernel_size, int stride,
                                          bool transposed, bool bias, Rng& rng,
                                          const std::string& name) {
  if (c_in <= 0 || c_out <= 0)
    throw std::invalid_argument("conv layer: channel counts must be positive");
  if (stride < 1) throw std::invalid_argument("conv layer: stride must be positive");
  if (transposed && stride < 2)
    throw std::invalid_argument("conv layer: transposed conv requires stride >= 2");
  // Centered kernels must be odd; the one even form allowed is the
  // kernel == stride lattice-partition conv used for down/upsampling.
  if (kernel_size % 2 == 0 && kernel_size != stride)
    throw std::invalid_argument("kernel size must be odd");
  if (kernel_size < 1) throw std::invalid_argument("conv layer: kernel size must be positive");

  SparseConvLayer<T> l;
  l.c_in = c_in;
  l.c_out = c_out;
  l.kernel_size = kernel_size;
  l.stride = stride;
  l.transposed = transposed;
  l.has_bias = bias;

  const int n_off = l.offset_count();
  const double fan_in = static_cast<double>(n_off) * c_in;
  const double bound = std::sqrt(6.0 / fan_in);  // Kaiming-uniform, fan-in mode
  Tensor<T> w({n_off, c_in, c_out});
  for (T& v : w.data) v = static_cast<T>(rng.uniform(-bound, bound));
  l.w = Var<T>::param(std::move(w), name + ".w");
  if (bias) {
    const double bb = 1.0 / std::sqrt(fan_in);
    Tensor<T> bt({c_out});
    for (T& v : bt.data) v = static_cast<T>(rng.uniform(-bb, bb));
    l.b = Var<T>::param(std::move(bt), name + ".b");
  }
  return l;
}

template <typename T>
SparseTensor<T> sparse_conv(const SparseTensor<T>& x, const SparseConvLayer<T>& layer,
                            CoordinateManager& mgr) {
  if (!x.feats.valid() || x.size() == 0)
    throw std::invalid_argument("conv: input tensor has no features");
  if (x.channels() != layer.c_in)
    throw std::invalid_argument("conv: input has " + std::to_string(x.channels()) +
                                " channels, layer expects " + std::to_string(layer.c_in));

  int out_map;
  std::shared_ptr<const KernelMap> km;
  bool swap_roles = false;
  if (!layer.transposed) {
    if (layer.stride == 1) {
      out_map = x.map_id;
      km = mgr.kernel_map(x.map_id, x.map_id, layer.kernel_size);
    } else {
      out_map = mgr.downsample(x.map_id, layer.stride);
      km = layer.kernel_size == layer.stride
               ? mgr.downsample_kernel_map(x.map_id, out_map, layer.stride)
               : mgr.kernel_map(x.map_id, out_map, layer.kernel_size);
    }
  } else {
    // Upsample into the finer geometry this map was derived from; the kernel
    // map is built in the forward direction (fine taps, coarse centers) and
    // applied with the roles swapped, i.e. as the adjoint.
    out_map = mgr.parent_for_upsample(x.map_id, layer.stride);
    km = layer.kernel_size == layer.stride
             ? mgr.downsample_kernel_map(out_map, x.map_id, layer.stride)
             : mgr.kernel_map(out_map, x.map_id, layer.kernel_size);
    swap_roles = true;
  }

  const int n_out = mgr.map(out_map).size();
  Var<T> y = sparse_conv_apply(x.feats, layer.w, std::move(km), n_out, swap_roles);
  if (layer.has_bias) y = add_bias(y, layer.b);

  SparseTensor<T> out;
  out.map_id = out_map;
  out.stride = mgr.map(out_map).stride;
  out.feats = y;
  return out;
}

// ---------------------------------------------------------------------------
// Layer normalization with affine parameters, as a named layer
// ---------------------------------------------------------------------------

template <typename T>
struct NormLayer {
  Var<T> gamma, beta;

  void params(std::vector<Var<T>>& out) const {
    out.push_back(gamma);
    out.push_back(beta);
  }
};

template <typename T>
NormLayer<T> make_norm_layer(int channels, const std::string& name) {
  NormLayer<T> n;
  n.gamma = Var<T>::param(Tensor<T>::full({channels}, T(1)), name + ".g");
  n.beta = Var<T>::param(Tensor<T>::zeros({channels}), name + ".b");
  return n;
}

template <typename T>
std::vector<int> batch_ids_of_map(const CoordinateManager& mgr, int map_id) {
  const CoordMap& m = mgr.map(map_id);
  std::vector<int> ids(m.coords.size());
  for (size_t i = 0; i < ids.size(); ++i) ids[i] = m.coords[i].b;
  return ids;
}

// ---------------------------------------------------------------------------
// Bottleneck residual block: 1x1x1 reduce to a quarter of the input width,
// a large spatial conv at the reduced width, 1x1x1 expand, residual add when
// the widths allow it, then LayerNorm, stochastic depth and GELU.
// ---------------------------------------------------------------------------

template <typename T>
struct TeNextBlock {
  int n_in = 0, n_out = 0;
  double drop_rate = 0.0;
  SparseConvLayer<T> reduce, spatial, expand;
  NormLayer<T> norm;

  void params(std::vector<Var<T>>& out) const {
    reduce.params(out);
    spatial.params(out);
    expand.params(out);
    norm.params(out);
  }
};

template <typename T>
TeNextBlock<T> make_te_next_block(int n_in, int n_out, int spatial_kernel, double drop_rate,
                                  Rng& rng, const std::string& name) {
  if (n_in % 4 != 0)
    throw std::invalid_argument("residual block: input channels must be divisible by 4");
  TeNextBlock<T> blk;
  blk.n_in = n_in;
  blk.n_out = n_out;
  blk.drop_rate = drop_rate;
  const int hidden = n_in / 4;
  blk.reduce = make_sparse_conv_layer<T>(n_in, hidden, 1, 1, false, true, rng, name + ".reduce");
  blk.spatial =
      make_sparse_conv_layer<T>(hidden, hidden, spatial_kernel, 1, false, true, rng,
                                name + ".spatial");
  blk.expand = make_sparse_conv_layer<T>(hidden, n_out, 1, 1, false, true, rng, name + ".expand");
  blk.norm = make_norm_layer<T>(n_out, name + ".norm");
  return blk;
}

template <typename T>
SparseTensor<T> te_next_block(const SparseTensor<T>& x, const TeNextBlock<T>& blk,
                              CoordinateManager& mgr, bool training, Rng& rng) {
  SparseTensor<T> h = sparse_conv(x, blk.reduce, mgr);
  h = sparse_conv(h, blk.spatial, mgr);
  h = sparse_conv(h, blk.expand, mgr);

  std::vector<int> ids = batch_ids_of_map<T>(mgr, x.map_id);
  Var<T> branch = drop_path(h.feats, blk.drop_rate, training, rng, &ids);
  // The residual identity must survive stochastic depth: only the branch is
  // dropped, the skip is added outside.
  Var<T> s = blk.n_in == blk.n_out ? add(x.feats, branch) : branch;
  Var<T> y = gelu(layer_norm(s, blk.norm.gamma, blk.norm.beta));

  SparseTensor<T> out;
  out.map_id = x.map_id;
  out.stride = x.stride;
  out.feats = y;
  return out;
}

// ---------------------------------------------------------------------------
// Plain two-conv residual block (ablation baseline)
// ---------------------------------------------------------------------------

template <typename T>
struct ResNetBasicBlock {
  int n_in = 0, n_out = 0;
  SparseConvLayer<T> conv1, conv2;
  NormLayer<T> norm1, norm2;

  void params(std::vector<Var<T>>& out) const {
    conv1.params(out);
    norm1.params(out);
    conv2.params(out);
    norm2.params(out);
  }
};

template <typename T>
ResNetBasicBlock<T> make_resnet_basic_block(int n_in, int n_out, Rng& rng,
                                            const std::string& name) {
  ResNetBasicBlock<T> blk;
  blk.n_in = n_in;
  blk.n_out = n_out;
  blk.conv1 = make_sparse_conv_layer<T>(n_in, n_out, 3, 1, false, true, rng, name + ".conv1");
  blk.norm1 = make_norm_layer<T>(n_out, name + ".norm1");
  blk.conv2 = make_sparse_conv_layer<T>(n_out, n_out, 3, 1, false, true, rng, name + ".conv2");
  blk.norm2 = make_norm_layer<T>(n_out, name + ".norm2");
  return blk;
}

template <typename T>
SparseTensor<T> resnet_basic_block(const SparseTensor<T>& x, const ResNetBasicBlock<T>& blk,
                                   CoordinateManager& mgr) {
  SparseTensor<T> h = sparse_conv(x, blk.conv1, mgr);
  h.feats = relu(layer_norm(h.feats, blk.norm1.gamma, blk.norm1.beta));
  h = sparse_conv(h, blk.conv2, mgr);
  Var<T> branch = relu(layer_norm(h.feats, blk.norm2.gamma, blk.norm2.beta));
  SparseTensor<T> out;
  out.map_id = x.map_id;
  out.stride = x.stride;
  out.feats = blk.n_in == blk.n_out ? add(x.feats, branch) : branch;
  return out;
}

}  // namespace tenext
