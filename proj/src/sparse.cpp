#include "tenext/sparse.hpp"

#include <algorithm>

namespace tenext {

int CoordinateManager::register_map(std::vector<VoxelCoord> coords, int stride) {
  if (coords.empty()) throw std::invalid_argument("register_map: empty coordinate list");
  if (stride <= 0) throw std::invalid_argument("register_map: stride must be positive");
  std::sort(coords.begin(), coords.end());
  auto m = std::make_unique<CoordMap>();
  m->id = static_cast<int>(maps_.size());
  m->stride = stride;
  m->index = CoordIndex(coords.size());
  for (size_t i = 0; i < coords.size(); ++i)
    m->index.insert(coords[i], static_cast<int>(i));  // throws on duplicates
  m->coords = std::move(coords);
  maps_.push_back(std::move(m));
  return maps_.back()->id;
}

int CoordinateManager::downsample(int id, int factor) {
  if (factor < 2) throw std::invalid_argument("downsample: factor must be at least 2");
  const uint64_t key = (static_cast<uint64_t>(id) << 8) | static_cast<uint64_t>(factor);
  if (auto it = downsample_cache_.find(key); it != downsample_cache_.end())
    return it->second;

  const CoordMap& src = map(id);
  const int64_t target = static_cast<int64_t>(src.stride) * factor;
  std::vector<VoxelCoord> coarse;
  coarse.reserve(src.coords.size());
  for (const VoxelCoord& c : src.coords)
    coarse.push_back(VoxelCoord{c.b,
                                static_cast<int32_t>(floor_div(c.x, target) * target),
                                static_cast<int32_t>(floor_div(c.y, target) * target),
                                static_cast<int32_t>(floor_div(c.z, target) * target)});
  std::sort(coarse.begin(), coarse.end());
  coarse.erase(std::unique(coarse.begin(), coarse.end()), coarse.end());

  const int child = register_map(std::move(coarse), static_cast<int>(target));
  maps_[child]->parent_id = id;
  maps_[child]->factor_from_parent = factor;
  downsample_cache_[key] = child;
  return child;
}

int CoordinateManager::parent_for_upsample(int id, int factor) const {
  const CoordMap& m = map(id);
  if (m.parent_id < 0 || m.factor_from_parent != factor)
    throw std::runtime_error(
        "transposed conv: no finer coordinate map to upsample into (map " +
        std::to_string(id) + ", factor " + std::to_string(factor) + ")");
  return m.parent_id;
}

namespace {

std::shared_ptr<KernelMap> build_centered(const CoordMap& tap_map, const CoordMap& center_map,
                                          int kernel_size, int dilation) {
  if (kernel_size < 1 || kernel_size % 2 == 0)
    throw std::invalid_argument("kernel size must be odd");
  if (dilation < 1) throw std::invalid_argument("build_kernel_map: dilation must be positive");

  const int r = (kernel_size - 1) / 2;
  const int unit = tap_map.stride * dilation;
  auto km = std::make_shared<KernelMap>();
  for (int dz = -r; dz <= r; ++dz)
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx)  // x fastest
        km->offsets.push_back({dx * unit, dy * unit, dz * unit});
  km->pairs.resize(km->offsets.size());

  const int n_off = static_cast<int>(km->offsets.size());
  const int n_center = center_map.size();
  for (int row = 0; row < n_center; ++row) {
    const VoxelCoord& c = center_map.coords[row];
    for (int k = 0; k < n_off; ++k) {
      const auto& off = km->offsets[k];
      const int tap = tap_map.find(
          VoxelCoord{c.b, c.x + off[0], c.y + off[1], c.z + off[2]});
      if (tap >= 0) km->pairs[k].emplace_back(tap, row);
    }
  }
  return km;
}

std::shared_ptr<KernelMap> build_partition(const CoordMap& tap_map, const CoordMap& center_map,
                                           int factor) {
  if (factor < 2)
    throw std::invalid_argument("downsample_kernel_map: factor must be at least 2");
  if (center_map.stride != tap_map.stride * factor)
    throw std::invalid_argument(
        "downsample_kernel_map: center stride must be tap stride times factor");

  const int unit = tap_map.stride;
  auto km = std::make_shared<KernelMap>();
  for (int dz = 0; dz < factor; ++dz)
    for (int dy = 0; dy < factor; ++dy)
      for (int dx = 0; dx < factor; ++dx)  // x fastest
        km->offsets.push_back({dx * unit, dy * unit, dz * unit});
  km->pairs.resize(km->offsets.size());

  // Every fine voxel has exactly one parent; iterate taps and bin them.
  const int64_t target = static_cast<int64_t>(center_map.stride);
  const int n_tap = tap_map.size();
  for (int row = 0; row < n_tap; ++row) {
    const VoxelCoord& t = tap_map.coords[row];
    const VoxelCoord parent{t.b,
                            static_cast<int32_t>(floor_div(t.x, target) * target),
                            static_cast<int32_t>(floor_div(t.y, target) * target),
                            static_cast<int32_t>(floor_div(t.z, target) * target)};
    const int center = center_map.find(parent);
    if (center < 0) continue;  // parent not materialized in the coarse map
    const int dx = (t.x - parent.x) / unit;
    const int dy = (t.y - parent.y) / unit;
    const int dz = (t.z - parent.z) / unit;
    const int k = (dz * factor + dy) * factor + dx;
    km->pairs[k].emplace_back(row, center);
  }
  return km;
}

}  // namespace

std::shared_ptr<const KernelMap> CoordinateManager::kernel_map(int tap_id, int center_id,
                                                               int kernel_size,
                                                               int dilation) {
  const KmapKey key{tap_id, center_id, kernel_size, dilation, 0};
  if (auto it = kmap_cache_.find(key); it != kmap_cache_.end()) return it->second;
  auto km = build_centered(map(tap_id), map(center_id), kernel_size, dilation);
  kmap_cache_[key] = km;
  return km;
}

std::shared_ptr<const KernelMap> CoordinateManager::downsample_kernel_map(int tap_id,
                                                                          int center_id,
                                                                          int factor) {
  const KmapKey key{tap_id, center_id, factor, 1, 1};
  if (auto it = kmap_cache_.find(key); it != kmap_cache_.end()) return it->second;
  auto km = build_partition(map(tap_id), map(center_id), factor);
  kmap_cache_[key] = km;
  return km;
}

std::shared_ptr<const KernelMap> build_kernel_map(const CoordMap& tap_map,
                                                  const CoordMap& center_map,
                                                  int kernel_size, int dilation) {
  return build_centered(tap_map, center_map, kernel_size, dilation);
}

}  // namespace tenext
