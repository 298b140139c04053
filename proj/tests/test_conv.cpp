#include <doctest.h>

#include <map>
#include <vector>

#include "dense_oracle.hpp"
#include "tenext/layers.hpp"
#include "tenext/rng.hpp"
#include "tenext/sparse.hpp"

using namespace tenext;

namespace {

struct RandomScene {
  CoordinateManager mgr;
  int fine = -1;
  refconv::FeatMap ref;          // coordinate -> input feature (double)
  Tensor<float> feats;           // engine-side features, rows in map order
  int c_in = 0;

  RandomScene(Rng& rng, int dim, int n_batches, int c_in_, double density)
      : c_in(c_in_) {
    std::vector<VoxelCoord> coords;
    for (int b = 0; b < n_batches; ++b)
      for (int x = 0; x < dim; ++x)
        for (int y = 0; y < dim; ++y)
          for (int z = 0; z < dim; ++z)
            if (rng.uniform() < density)
              coords.push_back({b, x - dim / 2, y - dim / 2, z - dim / 2});
    if (coords.empty()) coords.push_back({0, 0, 0, 0});
    fine = mgr.register_map(std::move(coords), 1);

    const auto& cs = mgr.map(fine).coords;
    feats = Tensor<float>({static_cast<int>(cs.size()), c_in});
    for (size_t i = 0; i < cs.size(); ++i) {
      std::vector<double> f(c_in);
      for (int j = 0; j < c_in; ++j) {
        f[j] = rng.uniform(-1, 1);
        feats.at(static_cast<int>(i), j) = static_cast<float>(f[j]);
      }
      ref[{cs[i].b, cs[i].x, cs[i].y, cs[i].z}] = std::move(f);
    }
  }

  SparseTensor<float> tensor() {
    SparseTensor<float> t;
    t.map_id = fine;
    t.stride = 1;
    t.feats = Var<float>::constant(feats);
    return t;
  }
};

refconv::Weights to_ref_weights(const SparseConvLayer<float>& layer) {
  refconv::Weights wt;
  wt.k = layer.kernel_size;
  wt.partition = layer.kernel_size == layer.stride && layer.stride > 1;
  const auto& w = layer.w.value();
  wt.w.resize(w.shape[0]);
  for (int k = 0; k < w.shape[0]; ++k) {
    wt.w[k].resize(w.shape[1]);
    for (int ci = 0; ci < w.shape[1]; ++ci) {
      wt.w[k][ci].resize(w.shape[2]);
      for (int co = 0; co < w.shape[2]; ++co)
        wt.w[k][ci][co] =
            w.data[(static_cast<size_t>(k) * w.shape[1] + ci) * w.shape[2] + co];
    }
  }
  return wt;
}

std::vector<double> to_ref_bias(const SparseConvLayer<float>& layer) {
  std::vector<double> b;
  if (layer.has_bias)
    for (float v : layer.b.value().data) b.push_back(v);
  return b;
}

double compare_against_map(const CoordinateManager& mgr, const SparseTensor<float>& got,
                           const refconv::FeatMap& want) {
  const auto& cs = mgr.map(got.map_id).coords;
  REQUIRE(static_cast<size_t>(got.size()) == want.size());
  double worst = 0;
  for (size_t i = 0; i < cs.size(); ++i) {
    const auto it = want.find({cs[i].b, cs[i].x, cs[i].y, cs[i].z});
    REQUIRE(it != want.end());
    for (int j = 0; j < got.channels(); ++j) {
      const double d = std::abs(got.feats.value().at(static_cast<int>(i), j) -
                                it->second[j]);
      worst = std::max(worst, d);
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("sparse convolution matches the dense oracle across kernel shapes") {
  Rng rng(2024);
  int scenes = 0;
  for (int trial = 0; trial < 6; ++trial) {
    RandomScene scene(rng, 3 + static_cast<int>(rng.uniform_int(6)), 2, 3, 0.4);
    for (int k : {1, 3, 5, 7}) {
      for (int stride : {1, 2}) {
        CAPTURE(trial);
        CAPTURE(k);
        CAPTURE(stride);
        Rng lrng = rng.fork(trial * 100 + k * 10 + stride);
        auto layer = make_sparse_conv_layer<float>(3, 4, k, stride, false, true, lrng, "l");
        SparseTensor<float> y = sparse_conv(scene.tensor(), layer, scene.mgr);
        refconv::FeatMap want = refconv::conv(scene.ref, 1, to_ref_weights(layer), stride,
                                              to_ref_bias(layer));
        CHECK(compare_against_map(scene.mgr, y, want) < 1e-5);
      }
    }
    ++scenes;
  }
  CHECK(scenes == 6);
}

TEST_CASE("kernel-2 stride-2 down/up pair matches the partition oracle") {
  Rng rng(55);
  for (int trial = 0; trial < 4; ++trial) {
    RandomScene scene(rng, 6, 2, 3, 0.35);
    Rng lrng = rng.fork(trial);
    auto down = make_sparse_conv_layer<float>(3, 5, 2, 2, false, true, lrng, "down");
    SparseTensor<float> mid = sparse_conv(scene.tensor(), down, scene.mgr);
    refconv::FeatMap want_mid =
        refconv::conv(scene.ref, 1, to_ref_weights(down), 2, to_ref_bias(down));
    CHECK(compare_against_map(scene.mgr, mid, want_mid) < 1e-5);

    auto up = make_sparse_conv_layer<float>(5, 2, 2, 2, true, true, lrng, "up");
    SparseTensor<float> fine = sparse_conv(mid, up, scene.mgr);
    // The oracle upsamples the oracle's own coarse features into the fine set.
    std::vector<refconv::Key> fine_keys;
    for (const auto& [key, _] : scene.ref) fine_keys.push_back(key);
    refconv::FeatMap want_fine = refconv::conv_transposed(want_mid, fine_keys, 1,
                                                          to_ref_weights(up), to_ref_bias(up));
    CHECK(compare_against_map(scene.mgr, fine, want_fine) < 1e-5);
  }
}

TEST_CASE("odd-kernel transposed convolution matches the adjoint oracle") {
  Rng rng(91);
  for (int k : {1, 3, 5, 7}) {
    RandomScene scene(rng, 6, 2, 2, 0.4);
    const int coarse = scene.mgr.downsample(scene.fine, 2);
    const auto& cc = scene.mgr.map(coarse).coords;

    // Coarse-side input features.
    refconv::FeatMap coarse_ref;
    Tensor<float> cf({static_cast<int>(cc.size()), 2});
    for (size_t i = 0; i < cc.size(); ++i) {
      std::vector<double> f(2);
      for (int j = 0; j < 2; ++j) {
        f[j] = rng.uniform(-1, 1);
        cf.at(static_cast<int>(i), j) = static_cast<float>(f[j]);
      }
      coarse_ref[{cc[i].b, cc[i].x, cc[i].y, cc[i].z}] = std::move(f);
    }
    SparseTensor<float> x;
    x.map_id = coarse;
    x.stride = 2;
    x.feats = Var<float>::constant(cf);

    Rng lrng = rng.fork(k);
    auto up = make_sparse_conv_layer<float>(2, 3, k, 2, true, true, lrng, "up");
    SparseTensor<float> y = sparse_conv(x, up, scene.mgr);
    CHECK(y.map_id == scene.fine);

    std::vector<refconv::Key> fine_keys;
    for (const auto& [key, _] : scene.ref) fine_keys.push_back(key);
    refconv::FeatMap want = refconv::conv_transposed(coarse_ref, fine_keys, 1,
                                                     to_ref_weights(up), to_ref_bias(up));
    CHECK(compare_against_map(scene.mgr, y, want) < 1e-5);
  }
}

TEST_CASE("convolution is linear in its input when bias is off") {
  Rng rng(7);
  RandomScene scene(rng, 5, 1, 3, 0.5);
  Rng lrng(99);
  auto layer = make_sparse_conv_layer<float>(3, 4, 3, 1, false, false, lrng, "l");
  SparseTensor<float> y1 = sparse_conv(scene.tensor(), layer, scene.mgr);

  Tensor<float> scaled = scene.feats;
  for (float& v : scaled.data) v *= -2.5f;
  SparseTensor<float> x2;
  x2.map_id = scene.fine;
  x2.stride = 1;
  x2.feats = Var<float>::constant(scaled);
  SparseTensor<float> y2 = sparse_conv(x2, layer, scene.mgr);
  for (size_t i = 0; i < y1.feats.value().data.size(); ++i)
    CHECK(y2.feats.value().data[i] ==
          doctest::Approx(-2.5f * y1.feats.value().data[i]).epsilon(1e-4));
}

TEST_CASE("convolution commutes with lattice translations") {
  Rng rng(17);
  RandomScene scene(rng, 5, 1, 3, 0.5);
  Rng lrng(5);
  auto layer = make_sparse_conv_layer<float>(3, 4, 3, 1, false, true, lrng, "l");
  SparseTensor<float> y1 = sparse_conv(scene.tensor(), layer, scene.mgr);

  // Shift every coordinate by a constant offset; outputs must shift along.
  CoordinateManager mgr2;
  const auto& cs = scene.mgr.map(scene.fine).coords;
  std::vector<VoxelCoord> shifted;
  for (const auto& c : cs) shifted.push_back({c.b, c.x + 7, c.y - 4, c.z + 2});
  SparseTensor<float> x2;
  x2.map_id = mgr2.register_map(std::move(shifted), 1);
  x2.stride = 1;
  x2.feats = Var<float>::constant(scene.feats);
  SparseTensor<float> y2 = sparse_conv(x2, layer, mgr2);

  // Row order is preserved because a constant shift preserves the sort.
  REQUIRE(y1.size() == y2.size());
  for (size_t i = 0; i < y1.feats.value().data.size(); ++i)
    CHECK(y1.feats.value().data[i] == doctest::Approx(y2.feats.value().data[i]).epsilon(1e-5));
}

TEST_CASE("conv layer validation errors") {
  Rng rng(1);
  CHECK_THROWS_WITH_AS(make_sparse_conv_layer<float>(3, 4, 4, 1, false, true, rng, "l"),
                       "kernel size must be odd", std::invalid_argument);
  CHECK_THROWS_AS(make_sparse_conv_layer<float>(0, 4, 3, 1, false, true, rng, "l"),
                  std::invalid_argument);
  CHECK_THROWS_AS(make_sparse_conv_layer<float>(3, 4, 3, 1, true, true, rng, "l"),
                  std::invalid_argument);  // transposed requires stride >= 2

  auto layer = make_sparse_conv_layer<float>(3, 4, 3, 1, false, true, rng, "l");
  CoordinateManager mgr;
  SparseTensor<float> x;
  x.map_id = mgr.register_map({{0, 0, 0, 0}}, 1);
  x.stride = 1;
  x.feats = Var<float>::constant(Tensor<float>::full({1, 2}, 1.0f));  // wrong channels
  CHECK_THROWS_WITH_AS(sparse_conv(x, layer, mgr), doctest::Contains("channels"),
                       std::invalid_argument);
}
