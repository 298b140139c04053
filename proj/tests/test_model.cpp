// Network-level behavior: parameter budget, output contracts (cardinality,
// open-interval probabilities, equivariances), gradient reach, checkpoint
// round trips, and config plumbing.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "tenext/checkpoint.hpp"
#include "tenext/model.hpp"
#include "tenext/optim.hpp"
#include "tenext/rng.hpp"

using namespace tenext;

namespace {

// Small channel plan for behavior tests where the full-width network would
// just burn time; every width keeps the divisible-by-4 bottleneck contract.
ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.stem_channels = 8;
  cfg.encoder_channels = {8, 16, 16, 32};
  cfg.decoder_channels = {16, 16, 8, 8};
  cfg.spatial_kernel = 3;
  cfg.drop_path_rate = 0.0;
  return cfg;
}

std::vector<std::array<float, 3>> random_cloud(int n, uint64_t seed) {
  Rng rng(seed);
  std::vector<std::array<float, 3>> pts(static_cast<size_t>(n));
  for (auto& p : pts) {
    p[0] = static_cast<float>(rng.uniform(-4.0, 4.0));
    p[1] = static_cast<float>(rng.uniform(-4.0, 4.0));
    p[2] = static_cast<float>(rng.uniform(-0.5, 1.5));
  }
  return pts;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

const char* kTmp = "model_test_tmp";

struct TmpDir {
  TmpDir() { std::filesystem::create_directories(kTmp); }
  ~TmpDir() { std::filesystem::remove_all(kTmp); }
};

}  // namespace

TEST_CASE("default channel plan lands in the documented parameter envelope") {
  TeNextModel model(ModelConfig{}, 7);
  const int64_t n = model.count_parameters();
  CHECK(n == 5410817);  // hand-derived from the layer dimensions below
  // 5.4M +/- 15%
  CHECK(n >= static_cast<int64_t>(5.4e6 * 0.85));
  CHECK(n <= static_cast<int64_t>(5.4e6 * 1.15));

  // Independent recount: walk the state dict instead of count_parameters.
  int64_t by_state = 0;
  for (const auto& [name, t] : model.state()) by_state += t.numel();
  CHECK(by_state == n);
}

TEST_CASE("forward emits one strictly interior probability per voxel") {
  TeNextModel model(tiny_config(), 11);
  const auto pts = random_cloud(500, 21);
  std::vector<int> p2v;
  const std::vector<float> probs = model.infer(pts, &p2v);

  // Cardinality: one probability per occupied voxel, every point assigned.
  CoordinateManager mgr;
  std::vector<int> p2v_ref;
  auto st = quantize<float>(pts, Tensor<float>{}, model.config().quantization_scale, 0, mgr,
                            &p2v_ref);
  CHECK(probs.size() == mgr.map(st.map_id).coords.size());
  REQUIRE(p2v.size() == pts.size());
  for (size_t i = 0; i < p2v.size(); ++i) {
    CHECK(p2v[i] == p2v_ref[i]);
    CHECK(p2v[i] >= 0);
    CHECK(p2v[i] < static_cast<int>(probs.size()));
  }
  for (float p : probs) {
    CHECK(p > 0.0f);
    CHECK(p < 1.0f);
  }
}

TEST_CASE("permuting input points leaves per-point probabilities unchanged") {
  TeNextModel model(tiny_config(), 13);
  auto pts = random_cloud(400, 31);
  std::vector<int> p2v_a;
  const std::vector<float> probs_a = model.infer(pts, &p2v_a);

  std::vector<size_t> perm(pts.size());
  for (size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  Rng rng(77);
  rng.shuffle(perm);
  std::vector<std::array<float, 3>> shuffled(pts.size());
  for (size_t i = 0; i < perm.size(); ++i) shuffled[i] = pts[perm[i]];

  std::vector<int> p2v_b;
  const std::vector<float> probs_b = model.infer(shuffled, &p2v_b);
  REQUIRE(probs_a.size() == probs_b.size());
  for (size_t i = 0; i < perm.size(); ++i) {
    // shuffled point i is original point perm[i]; both name the same voxel.
    CHECK(probs_b[p2v_b[i]] == probs_a[p2v_a[perm[i]]]);
  }
}

TEST_CASE("translating by a full-stride grid step shifts probabilities exactly") {
  TeNextModel model(tiny_config(), 17);
  const auto pts = random_cloud(350, 41);
  const double scale = model.config().quantization_scale;
  // One stride-16 step per axis: the deepest feature grid shifts by exactly
  // one cell, so every kernel map is isomorphic to the untranslated one.
  const float dx = static_cast<float>(scale * 16);
  const float dy = static_cast<float>(scale * -32);
  const float dz = static_cast<float>(scale * 16);

  std::vector<std::array<float, 3>> moved(pts.size());
  for (size_t i = 0; i < pts.size(); ++i)
    moved[i] = {pts[i][0] + dx, pts[i][1] + dy, pts[i][2] + dz};

  std::vector<int> p2v_a, p2v_b;
  const std::vector<float> a = model.infer(pts, &p2v_a);
  const std::vector<float> b = model.infer(moved, &p2v_b);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < pts.size(); ++i)
    CHECK(std::abs(a[p2v_a[i]] - b[p2v_b[i]]) < 1e-5f);
}

TEST_CASE("gradient reaches every parameter (no dead paths)") {
  ModelConfig cfg = tiny_config();
  cfg.drop_path_rate = 0.0;  // stochastic depth off so every branch is live
  TeNextModel model(cfg, 19);
  const auto pts = random_cloud(300, 51);

  CoordinateManager mgr;
  auto st = quantize<float>(pts, Tensor<float>{}, cfg.quantization_scale, 0, mgr, nullptr);
  Rng drop_rng(1);
  Var<float> probs = model.forward(mgr, st.map_id, /*training=*/true, &drop_rng);

  Tensor<float> targets = Tensor<float>::zeros({probs.value().rows(), 1});
  Rng lr(5);
  for (auto& t : targets.data) t = lr.uniform() < 0.5 ? 0.0f : 1.0f;
  Var<float> loss = bce_loss(probs, targets);
  for (auto& p : model.parameters()) p.zero_grad();
  backward(loss);

  for (auto& p : model.parameters()) {
    bool any = false;
    for (float g : p.grad().data)
      if (g != 0.0f) {
        any = true;
        break;
      }
    INFO("parameter ", p.name());
    CHECK(any);
  }
}

TEST_CASE("resnet-basic block variant builds and honors the output contract") {
  ModelConfig cfg = tiny_config();
  cfg.block_variant = "resnet-basic";
  TeNextModel model(cfg, 23);
  const auto pts = random_cloud(250, 61);
  const std::vector<float> probs = model.infer(pts);
  CHECK(!probs.empty());
  for (float p : probs) {
    CHECK(p > 0.0f);
    CHECK(p < 1.0f);
  }
}

TEST_CASE("checkpoint save -> load -> save is byte-identical") {
  TmpDir tmp;
  TeNextModel model(tiny_config(), 29);
  const std::string p1 = std::string(kTmp) + "/a.ckpt";
  const std::string p2 = std::string(kTmp) + "/b.ckpt";

  Checkpoint ck;
  ck.meta = model.config().to_kv();
  ck.tensors = model.state();
  write_checkpoint(p1, ck);

  Checkpoint rt = read_checkpoint(p1);
  write_checkpoint(p2, rt);
  CHECK(slurp(p1) == slurp(p2));

  // And the tensors restore into an identically shaped model.
  TeNextModel other(ModelConfig::from_kv(rt.meta), 31);
  other.load_state(rt.tensors);
  const auto pts = random_cloud(200, 71);
  CHECK(model.infer(pts) == other.infer(pts));
}

TEST_CASE("checkpoint reader rejects malformed files") {
  TmpDir tmp;
  const std::string good = std::string(kTmp) + "/good.ckpt";
  TeNextModel model(tiny_config(), 37);
  Checkpoint ck;
  ck.meta = model.config().to_kv();
  ck.tensors = model.state();
  write_checkpoint(good, ck);
  const std::string bytes = slurp(good);

  SUBCASE("corrupted magic") {
    std::string bad = bytes;
    bad[0] = 'X';
    const std::string path = std::string(kTmp) + "/bad_magic.ckpt";
    std::ofstream(path, std::ios::binary) << bad;
    CHECK_THROWS_WITH_AS(read_checkpoint(path), doctest::Contains("not a checkpoint"),
                         std::runtime_error);
  }
  SUBCASE("truncated body") {
    const std::string path = std::string(kTmp) + "/short.ckpt";
    std::ofstream(path, std::ios::binary) << bytes.substr(0, bytes.size() / 2);
    CHECK_THROWS_WITH_AS(read_checkpoint(path), doctest::Contains("truncated"),
                         std::runtime_error);
  }
  SUBCASE("unsupported version") {
    std::string bad = bytes;
    bad[8] = 9;  // version byte follows the 8-byte magic
    const std::string path = std::string(kTmp) + "/version.ckpt";
    std::ofstream(path, std::ios::binary) << bad;
    CHECK_THROWS_WITH_AS(read_checkpoint(path), doctest::Contains("version"),
                         std::runtime_error);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_WITH_AS(read_checkpoint(std::string(kTmp) + "/nope.ckpt"),
                         doctest::Contains("cannot open"), std::runtime_error);
  }
}

TEST_CASE("state loading reports the first mismatched tensor by name") {
  TeNextModel model(tiny_config(), 41);
  auto tensors = model.state();

  SUBCASE("missing tensor") {
    auto missing = tensors;
    missing.pop_back();
    CHECK_THROWS_WITH_AS(model.load_state(missing), doctest::Contains("missing"),
                         std::runtime_error);
  }
  SUBCASE("unexpected tensor") {
    auto extra = tensors;
    extra.emplace_back("bogus.w", Tensor<float>::zeros({2, 2}));
    CHECK_THROWS_WITH_AS(model.load_state(extra), doctest::Contains("bogus.w"),
                         std::runtime_error);
  }
  SUBCASE("shape mismatch against a different channel plan") {
    ModelConfig wide = tiny_config();
    wide.stem_channels = 16;
    wide.encoder_channels = {16, 16, 16, 32};
    TeNextModel other(wide, 43);
    bool threw = false;
    try {
      other.load_state(tensors);
    } catch (const std::runtime_error& e) {
      threw = true;
      CHECK(std::string(e.what()).find("stem") != std::string::npos);
    }
    CHECK(threw);
  }
}

TEST_CASE("model config round-trips through key=value form") {
  ModelConfig cfg = tiny_config();
  cfg.skip_levels = {0, 1, 2};
  cfg.drop_path_rate = 0.15;
  const KvConfig kv = cfg.to_kv();
  kv.require_known_keys(ModelConfig::known_keys());
  const ModelConfig back = ModelConfig::from_kv(kv);
  CHECK(back.to_kv().serialize() == kv.serialize());

  KvConfig alien = kv;
  alien.set("model.bogus", "1");
  CHECK_THROWS_WITH_AS(alien.require_known_keys(ModelConfig::known_keys()),
                       doctest::Contains("model.bogus"), std::runtime_error);
}

TEST_CASE("model config validation rejects bad shapes") {
  ModelConfig cfg = tiny_config();
  SUBCASE("even stem kernel") {
    cfg.stem_kernel = 4;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
  SUBCASE("even spatial kernel") {
    cfg.spatial_kernel = 2;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
  SUBCASE("drop path out of range") {
    cfg.drop_path_rate = 1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
  SUBCASE("skip level out of range") {
    cfg.skip_levels = {0, 5};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
  SUBCASE("unknown block variant") {
    cfg.block_variant = "dense";
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
  SUBCASE("bottleneck width not divisible by 4") {
    cfg.encoder_channels = {10, 16, 16, 32};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
}
