#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "tenext/rng.hpp"
#include "tenext/sparse.hpp"

using namespace tenext;

namespace {
std::vector<std::array<float, 3>> pts(std::initializer_list<std::array<float, 3>> l) {
  return {l};
}
}  // namespace

TEST_CASE("quantize floors coordinates and averages duplicate voxels") {
  CoordinateManager mgr;
  auto points = pts({{0.05f, 0.05f, 0.05f}, {0.19f, 0.01f, 0.01f}, {0.21f, 0.01f, 0.01f}});
  Tensor<float> feats = Tensor<float>::from_vector({3, 1}, {1.0f, 3.0f, 10.0f});
  std::vector<int> p2v;
  SparseTensor<float> t = quantize(points, feats, 0.2, 0, mgr, &p2v);

  REQUIRE(t.size() == 2);
  const auto& coords = mgr.map(t.map_id).coords;
  CHECK(coords[0] == VoxelCoord{0, 0, 0, 0});
  CHECK(coords[1] == VoxelCoord{0, 1, 0, 0});
  CHECK(t.feats.value().at(0, 0) == doctest::Approx(2.0));   // (1+3)/2
  CHECK(t.feats.value().at(1, 0) == doctest::Approx(10.0));
  CHECK(p2v == std::vector<int>{0, 0, 1});
}

TEST_CASE("quantize handles negative coordinates with floor semantics") {
  CoordinateManager mgr;
  auto points = pts({{-0.01f, -0.3f, 0.01f}});
  Tensor<float> feats = Tensor<float>::full({1, 1}, 1.0f);
  SparseTensor<float> t = quantize(points, feats, 0.2, 0, mgr);
  CHECK(mgr.map(t.map_id).coords[0] == VoxelCoord{0, -1, -2, 0});
}

TEST_CASE("quantize input validation") {
  CoordinateManager mgr;
  Tensor<float> none;
  CHECK_THROWS_WITH_AS(quantize({}, none, 0.2, 0, mgr), doctest::Contains("empty"),
                       std::invalid_argument);
  auto points = pts({{0.1f, 0.1f, 0.1f}, {std::nanf(""), 0.f, 0.f}});
  Tensor<float> feats = Tensor<float>::full({2, 1}, 1.0f);
  CHECK_THROWS_WITH_AS(quantize(points, feats, 0.2, 0, mgr), doctest::Contains("row 1"),
                       std::invalid_argument);
  auto good = pts({{0.1f, 0.1f, 0.1f}});
  Tensor<float> one = Tensor<float>::full({1, 1}, 1.0f);
  CHECK_THROWS_AS(quantize(good, one, 0.0, 0, mgr), std::invalid_argument);
}

TEST_CASE("quantize agrees with an independent hash-set voxel count") {
  Rng rng(123);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::array<float, 3>> points;
    std::set<std::tuple<int, int, int>> expect;
    const double scale = 0.25;
    for (int i = 0; i < 300; ++i) {
      std::array<float, 3> p{static_cast<float>(rng.uniform(-3, 3)),
                             static_cast<float>(rng.uniform(-3, 3)),
                             static_cast<float>(rng.uniform(-1, 1))};
      points.push_back(p);
      expect.insert({static_cast<int>(std::floor(p[0] / scale)),
                     static_cast<int>(std::floor(p[1] / scale)),
                     static_cast<int>(std::floor(p[2] / scale))});
    }
    CoordinateManager mgr;
    Tensor<float> feats = Tensor<float>::full({300, 1}, 1.0f);
    SparseTensor<float> t = quantize(points, feats, scale, 0, mgr);
    CHECK(t.size() == static_cast<int>(expect.size()));

    // Sorted, unique coordinate order.
    const auto& coords = mgr.map(t.map_id).coords;
    for (size_t i = 1; i < coords.size(); ++i) CHECK(coords[i - 1] < coords[i]);
  }
}

TEST_CASE("register_map rejects duplicates and empty input") {
  CoordinateManager mgr;
  CHECK_THROWS_AS(mgr.register_map({}, 1), std::invalid_argument);
  std::vector<VoxelCoord> dup{{0, 1, 1, 1}, {0, 1, 1, 1}};
  CHECK_THROWS_AS(mgr.register_map(std::move(dup), 1), std::logic_error);
}

TEST_CASE("downsample floors to the coarser lattice and is cached") {
  CoordinateManager mgr;
  std::vector<VoxelCoord> coords{{0, 0, 0, 0}, {0, 1, 0, 0}, {0, 2, 3, -1}, {0, -1, -1, -1}};
  const int fine = mgr.register_map(std::move(coords), 1);
  const int coarse = mgr.downsample(fine, 2);
  CHECK(mgr.downsample(fine, 2) == coarse);  // idempotent, cached

  const auto& cc = mgr.map(coarse).coords;
  std::set<std::tuple<int, int, int>> got;
  for (const auto& c : cc) got.insert({c.x, c.y, c.z});
  // {0,0,0} and {1,0,0} collapse to (0,0,0); (2,3,-1)->(2,2,-2); (-1,-1,-1)->(-2,-2,-2)
  CHECK(got == std::set<std::tuple<int, int, int>>{{0, 0, 0}, {2, 2, -2}, {-2, -2, -2}});
  CHECK(mgr.map(coarse).stride == 2);

  // Two stride-2 steps land on the stride-4 lattice of a direct factor-4 step.
  const int c2 = mgr.downsample(coarse, 2);
  const int c4 = mgr.downsample(fine, 4);
  CHECK(mgr.map(c2).coords == mgr.map(c4).coords);

  CHECK_THROWS_AS(mgr.downsample(fine, 1), std::invalid_argument);
}

TEST_CASE("downsample never grows the voxel count") {
  Rng rng(5);
  CoordinateManager mgr;
  std::vector<VoxelCoord> coords;
  for (int i = 0; i < 200; ++i)
    coords.push_back({static_cast<int32_t>(rng.uniform_int(2)),
                      static_cast<int32_t>(rng.uniform_int(16) - 8),
                      static_cast<int32_t>(rng.uniform_int(16) - 8),
                      static_cast<int32_t>(rng.uniform_int(16) - 8)});
  std::sort(coords.begin(), coords.end());
  coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
  const size_t n = coords.size();
  int id = mgr.register_map(std::move(coords), 1);
  for (int f : {2, 2, 2}) {
    int next = mgr.downsample(id, f);
    CHECK(mgr.map(next).coords.size() <= mgr.map(id).coords.size());
    id = next;
  }
  CHECK(mgr.map(id).coords.size() <= n);
}

TEST_CASE("kernel map: identity for K=1, odd-size enforcement") {
  CoordinateManager mgr;
  std::vector<VoxelCoord> coords{{0, 0, 0, 0}, {0, 1, 0, 0}, {0, 5, 5, 5}};
  const int id = mgr.register_map(std::move(coords), 1);
  auto km = mgr.kernel_map(id, id, 1);
  REQUIRE(km->offsets.size() == 1);
  REQUIRE(km->pairs[0].size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(km->pairs[0][i].first == i);
    CHECK(km->pairs[0][i].second == i);
  }
  CHECK_THROWS_WITH_AS(mgr.kernel_map(id, id, 4), "kernel size must be odd",
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(mgr.kernel_map(id, id, 2), "kernel size must be odd",
                       std::invalid_argument);
}

TEST_CASE("kernel map offsets enumerate x-fastest") {
  CoordinateManager mgr;
  const int id = mgr.register_map({{0, 0, 0, 0}}, 1);
  auto km = mgr.kernel_map(id, id, 3);
  REQUIRE(km->offsets.size() == 27);
  CHECK(km->offsets[0] == std::array<int, 3>{-1, -1, -1});
  CHECK(km->offsets[1] == std::array<int, 3>{0, -1, -1});
  CHECK(km->offsets[2] == std::array<int, 3>{1, -1, -1});
  CHECK(km->offsets[3] == std::array<int, 3>{-1, 0, -1});
  CHECK(km->offsets[13] == std::array<int, 3>{0, 0, 0});
  CHECK(km->offsets[26] == std::array<int, 3>{1, 1, 1});
}

TEST_CASE("kernel map pairs match a brute-force recount on random grids") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    CoordinateManager mgr;
    std::set<std::tuple<int, int, int, int>> want;
    std::vector<VoxelCoord> coords;
    for (int i = 0; i < 40; ++i) {
      VoxelCoord c{static_cast<int32_t>(rng.uniform_int(2)),
                   static_cast<int32_t>(rng.uniform_int(6)),
                   static_cast<int32_t>(rng.uniform_int(6)),
                   static_cast<int32_t>(rng.uniform_int(6))};
      if (want.insert({c.b, c.x, c.y, c.z}).second) coords.push_back(c);
    }
    const int id = mgr.register_map(std::move(coords), 1);
    const auto& cs = mgr.map(id).coords;
    const int k = trial % 2 == 0 ? 3 : 5;
    auto km = mgr.kernel_map(id, id, k);

    // Brute force: for every coordinate pair, which offset connects them?
    size_t expected_pairs = 0;
    const int r = (k - 1) / 2;
    for (const auto& a : cs)
      for (const auto& b : cs) {
        if (a.b != b.b) continue;
        const int dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
        if (std::abs(dx) <= r && std::abs(dy) <= r && std::abs(dz) <= r) ++expected_pairs;
      }
    CHECK(km->total_pairs() == expected_pairs);

    // Per-offset uniqueness of the center row.
    for (const auto& plist : km->pairs) {
      std::set<int> outs;
      for (const auto& [tap, center] : plist) CHECK(outs.insert(center).second);
    }
  }
}

TEST_CASE("kernel maps never pair voxels across batch boundaries") {
  CoordinateManager mgr;
  // Identical geometry in two samples, adjacent coordinates.
  std::vector<VoxelCoord> coords{{0, 0, 0, 0}, {0, 1, 0, 0}, {1, 0, 0, 0}, {1, 1, 0, 0}};
  const int id = mgr.register_map(std::move(coords), 1);
  auto km = mgr.kernel_map(id, id, 3);
  const auto& cs = mgr.map(id).coords;
  for (const auto& plist : km->pairs)
    for (const auto& [tap, center] : plist) CHECK(cs[tap].b == cs[center].b);
}

TEST_CASE("partition kernel map covers every fine voxel exactly once") {
  Rng rng(77);
  CoordinateManager mgr;
  std::vector<VoxelCoord> coords;
  std::set<std::tuple<int, int, int, int>> seen;
  for (int i = 0; i < 60; ++i) {
    VoxelCoord c{static_cast<int32_t>(rng.uniform_int(2)),
                 static_cast<int32_t>(rng.uniform_int(10) - 5),
                 static_cast<int32_t>(rng.uniform_int(10) - 5),
                 static_cast<int32_t>(rng.uniform_int(10) - 5)};
    if (seen.insert({c.b, c.x, c.y, c.z}).second) coords.push_back(c);
  }
  const int n = static_cast<int>(coords.size());
  const int fine = mgr.register_map(std::move(coords), 1);
  const int coarse = mgr.downsample(fine, 2);
  auto km = mgr.downsample_kernel_map(fine, coarse, 2);
  REQUIRE(km->offsets.size() == 8);

  std::vector<int> hits(n, 0);
  for (const auto& plist : km->pairs)
    for (const auto& [tap, center] : plist) {
      ++hits[tap];
      CHECK(center >= 0);
      CHECK(center < mgr.map(coarse).size());
    }
  for (int h : hits) CHECK(h == 1);
}

TEST_CASE("transposed target lookup requires a recorded parent") {
  CoordinateManager mgr;
  const int lone = mgr.register_map({{0, 0, 0, 0}, {0, 2, 0, 0}}, 2);
  CHECK_THROWS_WITH_AS(mgr.parent_for_upsample(lone, 2), doctest::Contains("no finer"),
                       std::runtime_error);
}

TEST_CASE("ones_features builds a single constant channel") {
  CoordinateManager mgr;
  const int id = mgr.register_map({{0, 0, 0, 0}, {0, 3, 1, 2}}, 1);
  SparseTensor<float> t = ones_features<float>(id, mgr);
  CHECK(t.size() == 2);
  CHECK(t.channels() == 1);
  CHECK(t.feats.value().at(0, 0) == 1.0f);
  CHECK(t.feats.value().at(1, 0) == 1.0f);
  CHECK_FALSE(t.feats.requires_grad());
}
