#include "tenext/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <stdexcept>

#include "tenext/checkpoint.hpp"
#include "tenext/optim.hpp"

namespace tenext {

void TrainConfig::validate() const {
  if (!(lr0 > 0.0)) throw std::invalid_argument("train config: lr0 must be positive");
  if (!(weight_decay >= 0.0))
    throw std::invalid_argument("train config: weight_decay must be non-negative");
  if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be positive");
  if (warmup_epochs < 0)
    throw std::invalid_argument("train config: warmup_epochs must be non-negative");
  if (restart_period < 1)
    throw std::invalid_argument("train config: restart_period must be positive");
  if (restart_mult < 1) throw std::invalid_argument("train config: restart_mult must be >= 1");
  if (!(lr_min_ratio >= 0.0 && lr_min_ratio <= 1.0))
    throw std::invalid_argument("train config: lr_min_ratio must be in [0, 1]");
  if (max_epochs < 1) throw std::invalid_argument("train config: max_epochs must be positive");
  if (patience < 1) throw std::invalid_argument("train config: patience must be >= 1");
  if (!(pos_weight > 0.0)) throw std::invalid_argument("train config: pos_weight must be positive");
  if (!(clip_norm >= 0.0))
    throw std::invalid_argument("train config: clip_norm must be non-negative");
  if (!(threshold > 0.0 && threshold < 1.0))
    throw std::invalid_argument("train config: threshold must be in (0, 1)");
  if (!(target_f1 >= 0.0 && target_f1 <= 1.0))
    throw std::invalid_argument("train config: target_f1 must be in [0, 1]");
}

KvConfig TrainConfig::to_kv() const {
  KvConfig kv;
  kv.set_double("train.lr0", lr0);
  kv.set_double("train.weight_decay", weight_decay);
  kv.set_int("train.batch_size", batch_size);
  kv.set_int("train.warmup_epochs", warmup_epochs);
  kv.set_int("train.restart_period", restart_period);
  kv.set_int("train.restart_mult", restart_mult);
  kv.set_double("train.lr_min_ratio", lr_min_ratio);
  kv.set_int("train.max_epochs", max_epochs);
  kv.set_int("train.patience", patience);
  kv.set_double("train.pos_weight", pos_weight);
  kv.set_double("train.clip_norm", clip_norm);
  kv.set_double("train.threshold", threshold);
  kv.set_double("train.target_f1", target_f1);
  kv.set("train.seed", std::to_string(seed));
  return kv;
}

TrainConfig TrainConfig::from_kv(const KvConfig& kv) {
  TrainConfig c;
  if (kv.has("train.lr0")) c.lr0 = kv.get_double("train.lr0");
  if (kv.has("train.weight_decay")) c.weight_decay = kv.get_double("train.weight_decay");
  if (kv.has("train.batch_size")) c.batch_size = static_cast<int>(kv.get_int("train.batch_size"));
  if (kv.has("train.warmup_epochs"))
    c.warmup_epochs = static_cast<int>(kv.get_int("train.warmup_epochs"));
  if (kv.has("train.restart_period"))
    c.restart_period = static_cast<int>(kv.get_int("train.restart_period"));
  if (kv.has("train.restart_mult"))
    c.restart_mult = static_cast<int>(kv.get_int("train.restart_mult"));
  if (kv.has("train.lr_min_ratio")) c.lr_min_ratio = kv.get_double("train.lr_min_ratio");
  if (kv.has("train.max_epochs")) c.max_epochs = static_cast<int>(kv.get_int("train.max_epochs"));
  if (kv.has("train.patience")) c.patience = static_cast<int>(kv.get_int("train.patience"));
  if (kv.has("train.pos_weight")) c.pos_weight = kv.get_double("train.pos_weight");
  if (kv.has("train.clip_norm")) c.clip_norm = kv.get_double("train.clip_norm");
  if (kv.has("train.threshold")) c.threshold = kv.get_double("train.threshold");
  if (kv.has("train.target_f1")) c.target_f1 = kv.get_double("train.target_f1");
  if (kv.has("train.seed")) c.seed = kv.get_u64("train.seed");
  c.validate();
  return c;
}

const std::set<std::string>& TrainConfig::known_keys() {
  static const std::set<std::string> keys{
      "train.lr0",         "train.weight_decay",  "train.batch_size", "train.warmup_epochs",
      "train.restart_period", "train.restart_mult", "train.lr_min_ratio", "train.max_epochs",
      "train.patience",    "train.pos_weight",    "train.clip_norm",  "train.threshold",
      "train.target_f1",   "train.seed"};
  return keys;
}

namespace {

// Merge a batch of single-scene voxel lists into one coordinate list with the
// batch slot carrying the within-batch position. Scene lists are sorted with
// batch id 0, so appending in slot order keeps the global list sorted.
void merge_batch(const std::vector<VoxelScene>& scenes, const std::vector<int>& members,
                 std::vector<VoxelCoord>* coords, Tensor<float>* targets) {
  size_t total = 0;
  for (int s : members) total += scenes[static_cast<size_t>(s)].coords.size();
  coords->clear();
  coords->reserve(total);
  *targets = Tensor<float>::zeros({static_cast<int>(total), 1});
  int row = 0;
  for (size_t slot = 0; slot < members.size(); ++slot) {
    const VoxelScene& sc = scenes[static_cast<size_t>(members[slot])];
    for (size_t i = 0; i < sc.coords.size(); ++i, ++row) {
      VoxelCoord c = sc.coords[i];
      c.b = static_cast<int32_t>(slot);
      coords->push_back(c);
      targets->data[static_cast<size_t>(row)] = sc.labels[i] ? 1.0f : 0.0f;
    }
  }
}

std::string history_csv(const std::vector<EpochStats>& history) {
  std::string out = "epoch,lr,train_loss,val_f1,val_miou,val_acc\n";
  char buf[200];
  for (const EpochStats& e : history) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g,%.9g\n", e.epoch, e.lr, e.train_loss,
                  e.val_f1, e.val_miou, e.val_acc);
    out += buf;
  }
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

// Re-serialize only the keys under one prefix (configs are stored flat in
// checkpoint meta; this recovers each config's canonical text for comparison).
std::string echo_of_prefix(const KvConfig& kv, const std::string& prefix) {
  KvConfig sub;
  for (const auto& [k, v] : kv.items())
    if (k.rfind(prefix, 0) == 0) sub.set(k, v);
  return sub.serialize();
}

std::string stats_to_row(const EpochStats& e) {
  char buf[220];
  std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g,%.17g", e.epoch, e.lr, e.train_loss,
                e.val_f1, e.val_miou, e.val_acc);
  return buf;
}

EpochStats stats_from_row(const std::string& row) {
  EpochStats e;
  if (std::sscanf(row.c_str(), "%d,%lg,%lg,%lg,%lg,%lg", &e.epoch, &e.lr, &e.train_loss,
                  &e.val_f1, &e.val_miou, &e.val_acc) != 6)
    throw std::runtime_error("resume state: malformed history row '" + row + "'");
  return e;
}

}  // namespace

std::vector<float> eval_scene_probs(TeNextModel& model, const VoxelScene& scene) {
  NoGradGuard guard;
  CoordinateManager mgr;
  std::vector<VoxelCoord> coords = scene.coords;
  const int map_id = mgr.register_map(std::move(coords), 1);
  Var<float> probs = model.forward(mgr, map_id, /*training=*/false);
  return probs.value().data;
}

ConfusionCounts evaluate_scenes(TeNextModel& model, const std::vector<VoxelScene>& scenes,
                                double threshold) {
  ConfusionCounts counts;
  for (const VoxelScene& scene : scenes) {
    const std::vector<float> probs = eval_scene_probs(model, scene);
    const std::vector<uint8_t> pred = predict_labels(probs, static_cast<float>(threshold));
    counts += count_confusion(pred, scene.labels);
  }
  return counts;
}

TrainResult train_model(TeNextModel& model, const std::vector<VoxelScene>& train_scenes,
                        const std::vector<VoxelScene>& val_scenes, const TrainConfig& cfg,
                        const std::string& out_dir, bool resume, int interrupt_after,
                        std::ostream* log) {
  cfg.validate();
  if (train_scenes.empty()) throw std::invalid_argument("train: empty training split");
  if (val_scenes.empty()) throw std::invalid_argument("train: empty validation split");
  std::filesystem::create_directories(out_dir);

  const int n_train = static_cast<int>(train_scenes.size());
  const int n_batches = (n_train + cfg.batch_size - 1) / cfg.batch_size;

  LrSchedule sched;
  sched.lr0 = cfg.lr0;
  sched.lr_min = cfg.lr0 * cfg.lr_min_ratio;
  sched.warmup_epochs = cfg.warmup_epochs;
  sched.t0 = cfg.restart_period;
  sched.t_mult = cfg.restart_mult;
  sched.steps_per_epoch = n_batches;

  AdamWConfig opt_cfg;
  opt_cfg.weight_decay = cfg.weight_decay;
  AdamW opt(&model.parameters(), opt_cfg);
  EarlyStopper stopper;
  stopper.patience = cfg.patience;

  TrainResult result;
  int start_epoch = 0;

  const std::string state_path = out_dir + "/train_state.bin";
  const std::string best_path = out_dir + "/best.ckpt";
  const std::string model_echo = model.config().to_kv().serialize();
  const std::string train_echo = cfg.to_kv().serialize();

  if (resume && std::filesystem::exists(state_path)) {
    Checkpoint st = read_checkpoint(state_path);
    if (echo_of_prefix(st.meta, "model.") != model_echo ||
        echo_of_prefix(st.meta, "train.") != train_echo)
      throw std::runtime_error("resume state '" + state_path +
                               "' was written with a different configuration");
    std::vector<std::pair<std::string, Tensor<float>>> model_tensors;
    std::vector<std::pair<std::string, Tensor<float>>> moments;
    for (auto& [name, tensor] : st.tensors) {
      if (name.rfind("opt.", 0) == 0)
        moments.emplace_back(name, std::move(tensor));
      else
        model_tensors.emplace_back(name, std::move(tensor));
    }
    model.load_state(model_tensors);
    auto& params = model.parameters();
    for (size_t i = 0; i < params.size(); ++i) {
      const std::string mk = "opt.m." + params[i].name();
      const std::string vk = "opt.v." + params[i].name();
      const Tensor<float>* m = nullptr;
      const Tensor<float>* v = nullptr;
      for (const auto& [name, tensor] : moments) {
        if (name == mk) m = &tensor;
        if (name == vk) v = &tensor;
      }
      if (!m || !v)
        throw std::runtime_error("resume state: missing optimizer moments for parameter '" +
                                 params[i].name() + "'");
      opt.load_moments(i, *m, *v);
    }
    opt.set_step_count(st.meta.get_int("state.step"));
    start_epoch = static_cast<int>(st.meta.get_int("state.epoch_next"));
    stopper.best = st.meta.get_double("state.best_f1");
    stopper.best_epoch = static_cast<int>(st.meta.get_int("state.best_epoch"));
    stopper.epochs_since_best = static_cast<int>(st.meta.get_int("state.epochs_since_best"));
    const int rows = static_cast<int>(st.meta.get_int("state.history_rows"));
    for (int i = 0; i < rows; ++i)
      result.history.push_back(stats_from_row(st.meta.get("state.hist." + std::to_string(i))));
    const std::string prior_reason = st.meta.get("state.stop_reason");
    if (prior_reason != "-") {
      // The stored run already finished; nothing to continue.
      result.best_f1 = stopper.best;
      result.best_epoch = stopper.best_epoch;
      result.stop_reason = prior_reason;
      return result;
    }
  }

  const Rng root(cfg.seed);

  auto save_state = [&](int epoch_next, const std::string& stop_reason) {
    Checkpoint st;
    st.meta = KvConfig::parse_text(model_echo, "<model echo>");
    st.meta.merge(KvConfig::parse_text(train_echo, "<train echo>"));
    st.meta.set_int("state.epoch_next", epoch_next);
    st.meta.set_int("state.step", opt.step_count());
    st.meta.set_double("state.best_f1", stopper.best);
    st.meta.set_int("state.best_epoch", stopper.best_epoch);
    st.meta.set_int("state.epochs_since_best", stopper.epochs_since_best);
    st.meta.set("state.stop_reason", stop_reason.empty() ? "-" : stop_reason);
    st.meta.set_int("state.history_rows", static_cast<int64_t>(result.history.size()));
    for (size_t i = 0; i < result.history.size(); ++i)
      st.meta.set("state.hist." + std::to_string(i), stats_to_row(result.history[i]));
    st.tensors = model.state();
    for (auto& [name, tensor] : opt.state()) st.tensors.emplace_back(name, std::move(tensor));
    write_checkpoint(state_path, st);
  };

  std::vector<int> order(train_scenes.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = start_epoch; epoch < cfg.max_epochs; ++epoch) {
    // Scene order and drop-path draws are keyed by epoch (and batch), so a
    // resumed run consumes exactly the streams the uninterrupted run would.
    Rng shuffle_rng = root.fork(0x5E000000ull + static_cast<uint64_t>(epoch));
    std::sort(order.begin(), order.end());
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    int64_t voxel_sum = 0;
    std::vector<VoxelCoord> coords;
    Tensor<float> targets;
    for (int bi = 0; bi < n_batches; ++bi) {
      const int lo = bi * cfg.batch_size;
      const int hi = std::min(n_train, lo + cfg.batch_size);
      const std::vector<int> members(order.begin() + lo, order.begin() + hi);
      merge_batch(train_scenes, members, &coords, &targets);

      CoordinateManager mgr;
      std::vector<VoxelCoord> batch_coords = coords;
      const int map_id = mgr.register_map(std::move(batch_coords), 1);
      Rng drop_rng =
          root.fork(0xD0000000ull + static_cast<uint64_t>(epoch) * 65536ull +
                    static_cast<uint64_t>(bi));
      Var<float> probs = model.forward(mgr, map_id, /*training=*/true, &drop_rng);
      Var<float> loss = bce_loss(probs, targets, static_cast<float>(cfg.pos_weight));
      const double loss_val = loss.value().data[0];
      if (!std::isfinite(loss_val))
        throw std::runtime_error("training diverged: non-finite loss at epoch " +
                                 std::to_string(epoch) + ", batch " + std::to_string(bi));
      opt.zero_grad();
      backward(loss);
      clip_global_norm(model.parameters(), cfg.clip_norm);
      opt.step(sched.lr_at(epoch, bi));

      const int n_vox = targets.rows();
      loss_sum += loss_val * n_vox;
      voxel_sum += n_vox;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = sched.lr_at(epoch, 0);
    stats.train_loss = loss_sum / static_cast<double>(voxel_sum);
    const MetricValues val = compute_metrics(evaluate_scenes(model, val_scenes, cfg.threshold));
    stats.val_f1 = val.f1;
    stats.val_miou = val.miou;
    stats.val_acc = val.accuracy;
    result.history.push_back(stats);
    write_text(out_dir + "/history.csv", history_csv(result.history));

    if (log) {
      char line[160];
      std::snprintf(line, sizeof line,
                    "epoch %4d  lr %.3e  loss %.5f  val_f1 %.4f  miou %.4f  acc %.4f", epoch,
                    stats.lr, stats.train_loss, stats.val_f1, stats.val_miou, stats.val_acc);
      *log << line << std::endl;
    }

    const bool improved = stats.val_f1 > stopper.best;
    const bool patience_exhausted = stopper.observe(epoch, stats.val_f1);
    if (improved) {
      Checkpoint best;
      best.meta = KvConfig::parse_text(model_echo, "<model echo>");
      best.meta.merge(KvConfig::parse_text(train_echo, "<train echo>"));
      best.meta.set_double("ckpt.val_f1", stats.val_f1);
      best.meta.set_int("ckpt.epoch", epoch);
      best.tensors = model.state();
      write_checkpoint(best_path, best);
    }

    std::string stop_reason;
    if (cfg.target_f1 > 0.0 && stats.val_f1 >= cfg.target_f1)
      stop_reason = "target_f1";
    else if (patience_exhausted)
      stop_reason = "early_stopping";
    else if (epoch + 1 == cfg.max_epochs)
      stop_reason = "max_epochs";
    save_state(epoch + 1, stop_reason);
    if (!stop_reason.empty()) {
      result.stop_reason = stop_reason;
      break;
    }
    if (interrupt_after >= 0 && epoch + 1 - start_epoch >= interrupt_after) {
      // Leave exactly what a killed process would: a resumable state file.
      result.best_f1 = stopper.best;
      result.best_epoch = stopper.best_epoch;
      result.stop_reason = "interrupted";
      return result;
    }
  }

  result.best_f1 = stopper.best;
  result.best_epoch = stopper.best_epoch;
  if (result.stop_reason.empty()) result.stop_reason = "max_epochs";
  return result;
}

}  // namespace tenext
