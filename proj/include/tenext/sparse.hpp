#pragma once
// Sparse voxel-grid machinery: coordinate maps, stride hierarchies and kernel
// maps. A coordinate map is an immutable, lexicographically sorted list of
// occupied voxels at one stride; a kernel map lists, per kernel offset, the
// (input row, output row) pairs a convolution must route through. Features are
// kept apart from geometry so that several tensors can share one map.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "tenext/autograd.hpp"
#include "tenext/tensor.hpp"

namespace tenext {

struct VoxelCoord {
  int32_t b = 0;  // batch index
  int32_t x = 0, y = 0, z = 0;

  friend bool operator==(const VoxelCoord& a, const VoxelCoord& c) {
    return a.b == c.b && a.x == c.x && a.y == c.y && a.z == c.z;
  }
  friend bool operator<(const VoxelCoord& a, const VoxelCoord& c) {
    if (a.b != c.b) return a.b < c.b;
    if (a.x != c.x) return a.x < c.x;
    if (a.y != c.y) return a.y < c.y;
    return a.z < c.z;
  }
};

inline uint64_t hash_coord(const VoxelCoord& c) {
  uint64_t h = (static_cast<uint64_t>(static_cast<uint32_t>(c.b)) << 32) |
               static_cast<uint32_t>(c.x);
  uint64_t l = (static_cast<uint64_t>(static_cast<uint32_t>(c.y)) << 32) |
               static_cast<uint32_t>(c.z);
  h ^= l * 0x9e3779b97f4a7c15ull;
  h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
  h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
  return h ^ (h >> 31);
}

// Open-addressing coordinate -> row index map. The std::unordered_map node
// overhead shows up hard in kernel-map construction, which does millions of
// probes per forward pass; a flat table with linear probing is ~4x faster.
class CoordIndex {
 public:
  CoordIndex() = default;
  explicit CoordIndex(size_t expected) { rehash(expected * 2 + 16); }

  void insert(const VoxelCoord& k, int v) {
    if ((size_ + 1) * 3 > cap_ * 2) rehash(cap_ * 2);
    size_t i = hash_coord(k) & (cap_ - 1);
    while (vals_[i] >= 0) {
      if (keys_[i] == k) throw std::logic_error("coordinate map: duplicate coordinate");
      i = (i + 1) & (cap_ - 1);
    }
    keys_[i] = k;
    vals_[i] = v;
    ++size_;
  }

  int find(const VoxelCoord& k) const {
    if (cap_ == 0) return -1;
    size_t i = hash_coord(k) & (cap_ - 1);
    while (vals_[i] >= 0) {
      if (keys_[i] == k) return vals_[i];
      i = (i + 1) & (cap_ - 1);
    }
    return -1;
  }

  size_t size() const { return size_; }

 private:
  void rehash(size_t want) {
    size_t cap = 16;
    while (cap < want) cap <<= 1;
    std::vector<VoxelCoord> keys(cap);
    std::vector<int> vals(cap, -1);
    keys_.swap(keys);
    vals_.swap(vals);
    cap_ = cap;
    size_ = 0;
    for (size_t i = 0; i < keys.size(); ++i)
      if (vals[i] >= 0) insert(keys[i], vals[i]);
  }

  std::vector<VoxelCoord> keys_;
  std::vector<int> vals_;
  size_t cap_ = 0;
  size_t size_ = 0;
};

struct CoordMap {
  int id = -1;
  int stride = 1;
  int parent_id = -1;  // map this one was downsampled from, -1 for roots
  int factor_from_parent = 0;
  std::vector<VoxelCoord> coords;  // sorted by (b, x, y, z)
  CoordIndex index;

  int size() const { return static_cast<int>(coords.size()); }
  int find(const VoxelCoord& c) const { return index.find(c); }
};

// Per-offset routing table of a convolution. offsets[k] is the displacement in
// absolute coordinate units; pairs[k] holds (tap row, center row) pairs, where
// the tap side is the geometry the offsets step over. For a regular conv the
// taps are input rows and centers are output rows; a transposed conv reuses
// the same table with the roles swapped.
struct KernelMap {
  std::vector<std::array<int, 3>> offsets;
  std::vector<std::vector<std::pair<int, int>>> pairs;

  size_t total_pairs() const {
    size_t n = 0;
    for (const auto& p : pairs) n += p.size();
    return n;
  }
};

inline int64_t floor_div(int64_t a, int64_t b) {
  int64_t q = a / b;
  return (a % b != 0 && (a < 0) != (b < 0)) ? q - 1 : q;
}

class CoordinateManager {
 public:
  // Takes ownership of a coordinate list. Coordinates are sorted here;
  // duplicates are an error (quantization is responsible for merging).
  int register_map(std::vector<VoxelCoord> coords, int stride);

  const CoordMap& map(int id) const {
    if (id < 0 || id >= static_cast<int>(maps_.size()))
      throw std::out_of_range("coordinate manager: unknown map id");
    return *maps_[id];
  }

  int map_count() const { return static_cast<int>(maps_.size()); }

  // Derive (or fetch the cached) coarser map whose coordinates are the input's
  // rounded down to multiples of stride*factor. Idempotent per (id, factor).
  int downsample(int id, int factor);

  // The map `id` was derived from, if any; needed to pick the target geometry
  // of a transposed convolution. Throws if there is none at the wanted factor.
  int parent_for_upsample(int id, int factor) const;

  // Routing table for an odd, centered kernel: for every center row in
  // `center_id`, taps lie at center + delta * tap_stride * dilation with
  // delta in [-(K-1)/2, (K-1)/2]^3, enumerated x-fastest.
  std::shared_ptr<const KernelMap> kernel_map(int tap_id, int center_id, int kernel_size,
                                              int dilation = 1);

  // Routing table for kernel == stride == factor downsampling: offsets are
  // delta in [0, factor)^3 (x-fastest) and every tap row appears exactly once
  // across all offsets (the offsets partition the fine lattice).
  std::shared_ptr<const KernelMap> downsample_kernel_map(int tap_id, int center_id,
                                                         int factor);

 private:
  struct KmapKey {
    int tap, center, k, dil, kind;
    bool operator==(const KmapKey& o) const {
      return tap == o.tap && center == o.center && k == o.k && dil == o.dil && kind == o.kind;
    }
  };
  struct KmapKeyHash {
    size_t operator()(const KmapKey& k) const {
      uint64_t h = static_cast<uint64_t>(k.tap) * 1000003u + k.center;
      h = h * 1000003u + k.k;
      h = h * 1000003u + k.dil;
      h = h * 1000003u + k.kind;
      uint64_t s = h;
      return static_cast<size_t>(splitmix64(s));
    }
  };

  std::vector<std::unique_ptr<CoordMap>> maps_;
  std::unordered_map<uint64_t, int> downsample_cache_;  // (id, factor) -> child id
  std::unordered_map<KmapKey, std::shared_ptr<KernelMap>, KmapKeyHash> kmap_cache_;
};

// Free-function view of the odd-kernel builder, for callers that do not care
// about caching.
std::shared_ptr<const KernelMap> build_kernel_map(const CoordMap& tap_map,
                                                  const CoordMap& center_map,
                                                  int kernel_size, int dilation = 1);

// ---------------------------------------------------------------------------
// Sparse tensor: one coordinate map plus a feature matrix (rows follow the
// map's coordinate order).
// ---------------------------------------------------------------------------

template <typename T>
struct SparseTensor {
  int map_id = -1;
  int stride = 1;
  Var<T> feats;  // N x C

  int size() const { return feats.valid() ? feats.value().rows() : 0; }
  int channels() const { return feats.valid() ? feats.value().cols() : 0; }
};

// Voxelize a point cloud: coordinates floor(p / scale), features of points
// landing in the same voxel averaged. Per-point voxel rows are reported via
// `point_to_voxel` when requested (used for label voxelization and per-point
// evaluation).
template <typename T>
SparseTensor<T> quantize(const std::vector<std::array<float, 3>>& points,
                         const Tensor<T>& feats, double scale, int batch_index,
                         CoordinateManager& mgr,
                         std::vector<int>* point_to_voxel = nullptr) {
  if (points.empty()) throw std::invalid_argument("quantize: empty point cloud");
  if (scale <= 0.0) throw std::invalid_argument("quantize: scale must be positive");
  const int n = static_cast<int>(points.size());
  const int c = feats.numel() == 0 ? 0 : feats.cols();
  if (c > 0 && feats.rows() != n)
    throw std::invalid_argument("quantize: one feature row per point required");

  std::vector<VoxelCoord> vox(points.size());
  for (int i = 0; i < n; ++i) {
    const auto& p = points[i];
    if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2]))
      throw std::invalid_argument("quantize: non-finite coordinate at point row " +
                                  std::to_string(i));
    vox[i] = VoxelCoord{batch_index,
                        static_cast<int32_t>(std::floor(p[0] / scale)),
                        static_cast<int32_t>(std::floor(p[1] / scale)),
                        static_cast<int32_t>(std::floor(p[2] / scale))};
  }

  // First pass: assign slots in first-seen order.
  CoordIndex slots(points.size());
  std::vector<int> slot_of_point(points.size());
  std::vector<VoxelCoord> uniq;
  uniq.reserve(points.size() / 4 + 8);
  for (int i = 0; i < n; ++i) {
    int s = slots.find(vox[i]);
    if (s < 0) {
      s = static_cast<int>(uniq.size());
      slots.insert(vox[i], s);
      uniq.push_back(vox[i]);
    }
    slot_of_point[i] = s;
  }

  // Sort the unique voxels and remap slots to sorted rows.
  const int nu = static_cast<int>(uniq.size());
  std::vector<int> order(nu);
  for (int i = 0; i < nu; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&uniq](int a, int b) { return uniq[a] < uniq[b]; });
  std::vector<int> rank(nu);
  std::vector<VoxelCoord> sorted(nu);
  for (int r = 0; r < nu; ++r) {
    rank[order[r]] = r;
    sorted[r] = uniq[order[r]];
  }

  Tensor<T> avg;
  if (c > 0) {
    avg = Tensor<T>::zeros({nu, c});
    std::vector<int> counts(nu, 0);
    for (int i = 0; i < n; ++i) {
      const int r = rank[slot_of_point[i]];
      ++counts[r];
      T* dst = avg.row_ptr(r);
      const T* src = feats.row_ptr(i);
      for (int j = 0; j < c; ++j) dst[j] += src[j];
    }
    for (int r = 0; r < nu; ++r) {
      T* dst = avg.row_ptr(r);
      for (int j = 0; j < c; ++j) dst[j] /= static_cast<T>(counts[r]);
    }
  }

  if (point_to_voxel) {
    point_to_voxel->resize(points.size());
    for (int i = 0; i < n; ++i) (*point_to_voxel)[i] = rank[slot_of_point[i]];
  }

  SparseTensor<T> out;
  out.map_id = mgr.register_map(std::move(sorted), 1);
  out.stride = 1;
  if (c > 0) out.feats = Var<T>::constant(std::move(avg));
  return out;
}

// Constant 1-channel features over an existing map: the network's input
// encoding is pure occupancy.
template <typename T>
SparseTensor<T> ones_features(int map_id, const CoordinateManager& mgr) {
  const CoordMap& m = mgr.map(map_id);
  SparseTensor<T> out;
  out.map_id = map_id;
  out.stride = m.stride;
  out.feats = Var<T>::constant(Tensor<T>::full({m.size(), 1}, T(1)));
  return out;
}

}  // namespace tenext
