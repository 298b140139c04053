#pragma once
// Training loop: shuffled mini-batches over voxelized scenes, weighted BCE,
// AdamW with warmup + cosine warm restarts, F1-driven checkpoint selection
// and early stopping, resumable at epoch granularity.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "tenext/config.hpp"
#include "tenext/data.hpp"
#include "tenext/metrics.hpp"
#include "tenext/model.hpp"

namespace tenext {

struct TrainConfig {
  double lr0 = 5e-3;
  double weight_decay = 0.05;
  int batch_size = 5;
  int warmup_epochs = 80;
  int restart_period = 20;   // first cosine segment, epochs
  int restart_mult = 2;      // segment growth factor
  double lr_min_ratio = 0.01;  // lr_min = lr0 * ratio
  int max_epochs = 300;
  int patience = 25;
  double pos_weight = 1.0;   // BCE weight on traversable voxels
  double clip_norm = 10.0;   // global-norm gradient clip; 0 disables
  double threshold = 0.5;    // validation decision threshold
  double target_f1 = 0.0;    // stop once val F1 reaches this; 0 disables
  uint64_t seed = 1;

  void validate() const;
  KvConfig to_kv() const;
  static TrainConfig from_kv(const KvConfig& kv);
  static const std::set<std::string>& known_keys();
};

struct EpochStats {
  int epoch = 0;
  double lr = 0.0;          // rate at the epoch's first step
  double train_loss = 0.0;  // voxel-weighted mean over the epoch
  double val_f1 = 0.0;
  double val_miou = 0.0;
  double val_acc = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> history;
  double best_f1 = -1.0;
  int best_epoch = -1;
  std::string stop_reason;  // "max_epochs" | "early_stopping" | "target_f1"
};

// Evaluate one pre-voxelized scene; returns per-voxel probabilities.
std::vector<float> eval_scene_probs(TeNextModel& model, const VoxelScene& scene);

// Confusion counts for a scene list at the given decision threshold.
ConfusionCounts evaluate_scenes(TeNextModel& model, const std::vector<VoxelScene>& scenes,
                                double threshold);

// Runs the loop, writing into out_dir: history.csv (epoch,lr,train_loss,
// val_f1,val_miou,val_acc), best.ckpt (highest validation F1), and
// train_state.bin (epoch-granular resume state). With resume=true, an
// existing state file continues the run; RNG streams are keyed by epoch and
// batch so the continuation matches an uninterrupted run. interrupt_after
// (when >= 0) returns cleanly after that many epochs without recording a stop
// -- the way a killed process would leave the state file -- so resume paths
// can be exercised in-process; such a result reports stop_reason
// "interrupted". `log`, when given, receives one progress line per epoch.
TrainResult train_model(TeNextModel& model, const std::vector<VoxelScene>& train_scenes,
                        const std::vector<VoxelScene>& val_scenes, const TrainConfig& cfg,
                        const std::string& out_dir, bool resume = false,
                        int interrupt_after = -1, std::ostream* log = nullptr);

}  // namespace tenext
