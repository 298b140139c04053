#pragma once
// The traversability estimation network: a sparse U-shaped encoder/decoder
// over voxelized LiDAR clouds. Occupancy-only input features (all ones), four
// encoder levels of strided convolutions with residual bottleneck blocks, a
// symmetric decoder of transposed convolutions with skip concatenations at the
// configured levels, and a pointwise sigmoid head producing one traversability
// probability per input voxel.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tenext/config.hpp"
#include "tenext/layers.hpp"
#include "tenext/sparse.hpp"

namespace tenext {

struct ModelConfig {
  double quantization_scale = 0.2;  // meters per voxel
  int stem_channels = 32;
  int stem_kernel = 3;
  std::array<int, 4> encoder_channels{32, 64, 128, 256};
  std::array<int, 4> decoder_channels{144, 112, 96, 64};
  // One entry per level, encoder levels first (shallow to deep), then decoder
  // levels (deep to shallow).
  std::array<int, 8> blocks_per_level{1, 1, 1, 1, 1, 1, 1, 1};
  // Decoder levels that concatenate the matching encoder features;
  // 0 is the deepest decoder level. Default: the two deepest.
  std::vector<int> skip_levels{0, 1};
  int spatial_kernel = 7;
  double drop_path_rate = 0.1;
  std::string block_variant = "te-next";  // or "resnet-basic"

  void validate() const;
  KvConfig to_kv() const;
  static ModelConfig from_kv(const KvConfig& kv);
  static const std::set<std::string>& known_keys();
};

class TeNextModel {
 public:
  TeNextModel(ModelConfig cfg, uint64_t init_seed);

  // Forward over an already-registered stride-1 coordinate map (a quantized,
  // possibly batched cloud). Returns one probability per voxel, strictly
  // inside (0, 1). `drop_rng` drives stochastic depth and is only consulted
  // when training.
  Var<float> forward(CoordinateManager& mgr, int base_map_id, bool training,
                     Rng* drop_rng = nullptr);

  // Quantize a single cloud and run inference; probabilities are returned per
  // voxel together with the point -> voxel assignment.
  std::vector<float> infer(const std::vector<std::array<float, 3>>& points,
                           std::vector<int>* point_to_voxel = nullptr);

  const ModelConfig& config() const { return cfg_; }
  std::vector<Var<float>>& parameters() { return params_; }
  int64_t count_parameters() const;

  // Named state for checkpointing; order is construction order and stable.
  std::vector<std::pair<std::string, Tensor<float>>> state() const;
  void load_state(const std::vector<std::pair<std::string, Tensor<float>>>& tensors);

 private:
  struct Level {
    SparseConvLayer<float> resample;
    NormLayer<float> norm;
    std::vector<TeNextBlock<float>> te_blocks;
    std::vector<ResNetBasicBlock<float>> rb_blocks;
  };

  SparseTensor<float> run_blocks(const Level& level, SparseTensor<float> x,
                                 CoordinateManager& mgr, bool training, Rng* drop_rng);

  ModelConfig cfg_;
  SparseConvLayer<float> stem_;
  NormLayer<float> stem_norm_;
  std::vector<Level> enc_, dec_;
  SparseConvLayer<float> head_;
  std::vector<Var<float>> params_;
};

// Thresholded hard decisions from probabilities.
std::vector<uint8_t> predict_labels(const std::vector<float>& probs, float threshold = 0.5f);

}  // namespace tenext
