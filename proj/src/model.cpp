#include "tenext/model.hpp"

#include <stdexcept>
#include <unordered_map>

namespace tenext {

void ModelConfig::validate() const {
  if (quantization_scale <= 0.0)
    throw std::invalid_argument("model config: quantization_scale must be positive");
  if (stem_channels <= 0) throw std::invalid_argument("model config: stem_channels must be positive");
  if (stem_kernel < 1 || stem_kernel % 2 == 0)
    throw std::invalid_argument("model config: stem_kernel must be odd");
  if (spatial_kernel < 1 || spatial_kernel % 2 == 0)
    throw std::invalid_argument("model config: spatial_kernel must be odd");
  if (drop_path_rate < 0.0 || drop_path_rate >= 1.0)
    throw std::invalid_argument("model config: drop_path_rate must be in [0, 1)");
  if (block_variant != "te-next" && block_variant != "resnet-basic")
    throw std::invalid_argument("model config: block_variant must be 'te-next' or 'resnet-basic'");
  for (int c : encoder_channels)
    if (c <= 0) throw std::invalid_argument("model config: encoder channels must be positive");
  for (int c : decoder_channels)
    if (c <= 0) throw std::invalid_argument("model config: decoder channels must be positive");
  for (int b : blocks_per_level)
    if (b < 1) throw std::invalid_argument("model config: each level needs at least one block");
  for (int s : skip_levels)
    if (s < 0 || s > 3)
      throw std::invalid_argument("model config: skip levels must be decoder levels 0..3");
  for (size_t i = 1; i < skip_levels.size(); ++i)
    if (skip_levels[i] == skip_levels[i - 1])
      throw std::invalid_argument("model config: duplicate skip level");

  if (block_variant == "te-next") {
    // Bottleneck blocks reduce their input width by 4; every width a block
    // sees (including after skip concatenation) must be divisible by 4.
    auto check4 = [](int w, const char* where) {
      if (w % 4 != 0)
        throw std::invalid_argument(std::string("model config: ") + where +
                                    " width must be divisible by 4, got " + std::to_string(w));
    };
    for (int c : encoder_channels) check4(c, "encoder level");
    const int skip_width[4] = {encoder_channels[2], encoder_channels[1], encoder_channels[0],
                               stem_channels};
    for (int j = 0; j < 4; ++j) {
      int w = decoder_channels[j];
      for (int s : skip_levels)
        if (s == j) w += skip_width[j];
      check4(w, "decoder level");
    }
  }
}

KvConfig ModelConfig::to_kv() const {
  KvConfig kv;
  kv.set_double("model.quantization_scale", quantization_scale);
  kv.set_int("model.stem_channels", stem_channels);
  kv.set_int("model.stem_kernel", stem_kernel);
  kv.set_int_list("model.encoder_channels",
                  {encoder_channels[0], encoder_channels[1], encoder_channels[2],
                   encoder_channels[3]});
  kv.set_int_list("model.decoder_channels",
                  {decoder_channels[0], decoder_channels[1], decoder_channels[2],
                   decoder_channels[3]});
  kv.set_int_list("model.blocks_per_level",
                  std::vector<int>(blocks_per_level.begin(), blocks_per_level.end()));
  if (skip_levels.empty())
    kv.set("model.skip_levels", "none");
  else
    kv.set_int_list("model.skip_levels", skip_levels);
  kv.set_int("model.spatial_kernel", spatial_kernel);
  kv.set_double("model.drop_path_rate", drop_path_rate);
  kv.set("model.block_variant", block_variant);
  return kv;
}

ModelConfig ModelConfig::from_kv(const KvConfig& kv) {
  ModelConfig cfg;
  if (kv.has("model.quantization_scale"))
    cfg.quantization_scale = kv.get_double("model.quantization_scale");
  if (kv.has("model.stem_channels"))
    cfg.stem_channels = static_cast<int>(kv.get_int("model.stem_channels"));
  if (kv.has("model.stem_kernel"))
    cfg.stem_kernel = static_cast<int>(kv.get_int("model.stem_kernel"));
  auto fill4 = [&kv](const char* key, std::array<int, 4>& dst) {
    if (!kv.has(key)) return;
    const std::vector<int> v = kv.get_int_list(key);
    if (v.size() != 4)
      throw std::runtime_error(std::string("config: key '") + key + "' needs 4 entries");
    std::copy(v.begin(), v.end(), dst.begin());
  };
  fill4("model.encoder_channels", cfg.encoder_channels);
  fill4("model.decoder_channels", cfg.decoder_channels);
  if (kv.has("model.blocks_per_level")) {
    const std::vector<int> v = kv.get_int_list("model.blocks_per_level");
    if (v.size() != 8)
      throw std::runtime_error("config: key 'model.blocks_per_level' needs 8 entries");
    std::copy(v.begin(), v.end(), cfg.blocks_per_level.begin());
  }
  if (kv.has("model.skip_levels")) {
    if (kv.get("model.skip_levels") == "none")
      cfg.skip_levels.clear();
    else
      cfg.skip_levels = kv.get_int_list("model.skip_levels");
  }
  if (kv.has("model.spatial_kernel"))
    cfg.spatial_kernel = static_cast<int>(kv.get_int("model.spatial_kernel"));
  if (kv.has("model.drop_path_rate"))
    cfg.drop_path_rate = kv.get_double("model.drop_path_rate");
  if (kv.has("model.block_variant")) cfg.block_variant = kv.get("model.block_variant");
  cfg.validate();
  return cfg;
}

const std::set<std::string>& ModelConfig::known_keys() {
  static const std::set<std::string> keys{
      "model.quantization_scale", "model.stem_channels",   "model.stem_kernel",
      "model.encoder_channels",   "model.decoder_channels", "model.blocks_per_level",
      "model.skip_levels",        "model.spatial_kernel",   "model.drop_path_rate",
      "model.block_variant",
  };
  return keys;
}

TeNextModel::TeNextModel(ModelConfig cfg, uint64_t init_seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(init_seed);

  stem_ = make_sparse_conv_layer<float>(1, cfg_.stem_channels, cfg_.stem_kernel, 1, false,
                                        true, rng, "stem");
  stem_norm_ = make_norm_layer<float>(cfg_.stem_channels, "stem.norm");

  const bool te = cfg_.block_variant == "te-next";
  auto add_blocks = [&](Level& level, int count, int w_in, int w_out,
                        const std::string& prefix) {
    for (int b = 0; b < count; ++b) {
      const int in = b == 0 ? w_in : w_out;
      const std::string name = prefix + ".blk" + std::to_string(b);
      if (te)
        level.te_blocks.push_back(make_te_next_block<float>(
            in, w_out, cfg_.spatial_kernel, cfg_.drop_path_rate, rng, name));
      else
        level.rb_blocks.push_back(make_resnet_basic_block<float>(in, w_out, rng, name));
    }
  };

  int width = cfg_.stem_channels;
  for (int i = 0; i < 4; ++i) {
    Level level;
    const std::string prefix = "enc" + std::to_string(i + 1);
    level.resample = make_sparse_conv_layer<float>(width, cfg_.encoder_channels[i], 2, 2,
                                                   false, true, rng, prefix + ".down");
    level.norm = make_norm_layer<float>(cfg_.encoder_channels[i], prefix + ".norm");
    add_blocks(level, cfg_.blocks_per_level[i], cfg_.encoder_channels[i],
               cfg_.encoder_channels[i], prefix);
    width = cfg_.encoder_channels[i];
    enc_.push_back(std::move(level));
  }

  const int skip_width[4] = {cfg_.encoder_channels[2], cfg_.encoder_channels[1],
                             cfg_.encoder_channels[0], cfg_.stem_channels};
  for (int j = 0; j < 4; ++j) {
    Level level;
    const std::string prefix = "dec" + std::to_string(j + 1);
    level.resample = make_sparse_conv_layer<float>(width, cfg_.decoder_channels[j], 2, 2,
                                                   true, true, rng, prefix + ".up");
    level.norm = make_norm_layer<float>(cfg_.decoder_channels[j], prefix + ".norm");
    int block_in = cfg_.decoder_channels[j];
    for (int s : cfg_.skip_levels)
      if (s == j) block_in += skip_width[j];
    add_blocks(level, cfg_.blocks_per_level[4 + j], block_in, cfg_.decoder_channels[j],
               prefix);
    width = cfg_.decoder_channels[j];
    dec_.push_back(std::move(level));
  }

  head_ = make_sparse_conv_layer<float>(width, 1, 1, 1, false, true, rng, "head");

  // Stable parameter order: construction order.
  stem_.params(params_);
  stem_norm_.params(params_);
  for (const Level& l : enc_) {
    l.resample.params(params_);
    l.norm.params(params_);
    for (const auto& b : l.te_blocks) b.params(params_);
    for (const auto& b : l.rb_blocks) b.params(params_);
  }
  for (const Level& l : dec_) {
    l.resample.params(params_);
    l.norm.params(params_);
    for (const auto& b : l.te_blocks) b.params(params_);
    for (const auto& b : l.rb_blocks) b.params(params_);
  }
  head_.params(params_);
}

SparseTensor<float> TeNextModel::run_blocks(const Level& level, SparseTensor<float> x,
                                            CoordinateManager& mgr, bool training,
                                            Rng* drop_rng) {
  for (const auto& b : level.te_blocks) {
    Rng fallback(0);
    x = te_next_block(x, b, mgr, training, drop_rng ? *drop_rng : fallback);
  }
  for (const auto& b : level.rb_blocks) x = resnet_basic_block(x, b, mgr);
  return x;
}

Var<float> TeNextModel::forward(CoordinateManager& mgr, int base_map_id, bool training,
                                Rng* drop_rng) {
  if (training && cfg_.drop_path_rate > 0.0 && drop_rng == nullptr)
    throw std::invalid_argument("forward: training with stochastic depth needs an rng");

  SparseTensor<float> x = ones_features<float>(base_map_id, mgr);
  x = sparse_conv(x, stem_, mgr);
  x.feats = relu(layer_norm(x.feats, stem_norm_.gamma, stem_norm_.beta));
  const SparseTensor<float> stem_out = x;

  std::vector<SparseTensor<float>> enc_out;
  for (const Level& level : enc_) {
    x = sparse_conv(x, level.resample, mgr);
    x.feats = relu(layer_norm(x.feats, level.norm.gamma, level.norm.beta));
    x = run_blocks(level, x, mgr, training, drop_rng);
    enc_out.push_back(x);
  }

  // Skip sources by decoder level: matching encoder resolution, stem last.
  const SparseTensor<float>* skip_src[4] = {&enc_out[2], &enc_out[1], &enc_out[0], &stem_out};
  for (int j = 0; j < 4; ++j) {
    const Level& level = dec_[j];
    x = sparse_conv(x, level.resample, mgr);
    x.feats = relu(layer_norm(x.feats, level.norm.gamma, level.norm.beta));
    for (int s : cfg_.skip_levels)
      if (s == j) {
        // Transposed conv lands exactly on the encoder-side map, so the rows
        // line up one-to-one.
        if (x.map_id != skip_src[j]->map_id)
          throw std::logic_error("forward: skip connection geometry mismatch");
        x.feats = concat_cols(x.feats, skip_src[j]->feats);
      }
    x = run_blocks(level, x, mgr, training, drop_rng);
  }

  x = sparse_conv(x, head_, mgr);
  // Keep probabilities strictly inside (0, 1); float sigmoid saturates for
  // |logit| above ~17 and the clamp width matches the loss's.
  return clamp(sigmoid(x.feats), 1e-7f, 1.0f - 1e-7f);
}

std::vector<float> TeNextModel::infer(const std::vector<std::array<float, 3>>& points,
                                      std::vector<int>* point_to_voxel) {
  CoordinateManager mgr;
  Tensor<float> none;
  SparseTensor<float> base =
      quantize(points, none, cfg_.quantization_scale, 0, mgr, point_to_voxel);
  NoGradGuard guard;
  Var<float> probs = forward(mgr, base.map_id, false, nullptr);
  std::vector<float> out(probs.value().data.begin(), probs.value().data.end());
  return out;
}

int64_t TeNextModel::count_parameters() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p.value().numel();
  return n;
}

std::vector<std::pair<std::string, Tensor<float>>> TeNextModel::state() const {
  std::vector<std::pair<std::string, Tensor<float>>> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.emplace_back(p.name(), p.value());
  return out;
}

void TeNextModel::load_state(
    const std::vector<std::pair<std::string, Tensor<float>>>& tensors) {
  std::unordered_map<std::string, const Tensor<float>*> by_name;
  for (const auto& [name, t] : tensors) {
    if (!by_name.emplace(name, &t).second)
      throw std::runtime_error("load_state: duplicate tensor '" + name + "'");
  }
  for (auto& p : params_) {
    auto it = by_name.find(p.name());
    if (it == by_name.end())
      throw std::runtime_error("load_state: checkpoint is missing tensor '" + p.name() + "'");
    if (it->second->shape != p.value().shape)
      throw std::runtime_error("load_state: tensor '" + p.name() + "' has shape " +
                               it->second->shape_str() + ", model expects " +
                               p.value().shape_str());
    p.value() = *it->second;
    by_name.erase(it);
  }
  if (!by_name.empty())
    throw std::runtime_error("load_state: checkpoint has unexpected tensor '" +
                             by_name.begin()->first + "'");
}

std::vector<uint8_t> predict_labels(const std::vector<float>& probs, float threshold) {
  std::vector<uint8_t> out(probs.size());
  for (size_t i = 0; i < probs.size(); ++i) out[i] = probs[i] >= threshold ? 1 : 0;
  return out;
}

}  // namespace tenext
