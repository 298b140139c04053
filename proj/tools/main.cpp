// Command-line entry point for the whole pipeline: synthetic corpus
// generation, training, inference, evaluation, gradient checking, planning,
// and simulation.
//
// Exit codes are a stable scripting contract:
//   0  success
//   1  domain failure (planner found no path, simulation timed out,
//      training diverged, a gradient check exceeded tolerance)
//   2  usage, configuration, or file errors

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tenext/checkpoint.hpp"
#include "tenext/config.hpp"
#include "tenext/data.hpp"
#include "tenext/gradcheck.hpp"
#include "tenext/metrics.hpp"
#include "tenext/model.hpp"
#include "tenext/nav.hpp"
#include "tenext/train.hpp"

using namespace tenext;

namespace {

// ---------------------------------------------------------------------------
// Navigation configuration: grid projection, planner, controller, simulator.
// Mirrored into flat keys the same way ModelConfig and TrainConfig are.
// ---------------------------------------------------------------------------

struct NavConfig {
  TravGridParams grid;
  RrtParams rrt;
  SimParams sim;

  void validate() const {
    if (grid.cell <= 0.0) throw std::invalid_argument("nav.cell must be positive");
    if (grid.band_max <= grid.band_min)
      throw std::invalid_argument("nav.band_max must exceed nav.band_min");
    if (!(grid.p_block >= 0.0 && grid.p_block <= 1.0))
      throw std::invalid_argument("nav.p_block must lie in [0, 1]");
    if (grid.inflation < 0.0) throw std::invalid_argument("nav.inflation must be non-negative");
    // Planner and simulator parameters are validated by their consumers;
    // failing early here would duplicate the messages.
  }

  KvConfig to_kv() const {
    KvConfig kv;
    kv.set_double("nav.cell", grid.cell);
    kv.set_double("nav.p_block", grid.p_block);
    kv.set_double("nav.inflation", grid.inflation);
    kv.set_double("nav.band_min", grid.band_min);
    kv.set_double("nav.band_max", grid.band_max);
    kv.set_double("nav.step", rrt.step);
    kv.set_double("nav.goal_bias", rrt.goal_bias);
    kv.set_int("nav.max_iters", rrt.max_iters);
    kv.set_double("nav.goal_tol", rrt.goal_tol);
    kv.set("nav.seed", std::to_string(rrt.seed));
    kv.set("nav.smooth", rrt.smooth ? "true" : "false");
    kv.set_int("nav.smooth_iters", rrt.smooth_iters);
    kv.set_double("nav.k_v", sim.gains.k_v);
    kv.set_double("nav.k_omega", sim.gains.k_omega);
    kv.set_double("nav.k_omega2", sim.gains.k_omega2);
    kv.set_double("nav.v_max", sim.gains.v_max);
    kv.set_double("nav.omega_max", sim.gains.omega_max);
    kv.set_double("nav.dt", sim.dt);
    kv.set_double("nav.capture_radius", sim.capture_radius);
    kv.set_double("nav.sim_goal_tol", sim.goal_tol);
    kv.set_double("nav.time_budget", sim.time_budget);
    return kv;
  }

  static NavConfig from_kv(const KvConfig& kv) {
    NavConfig c;
    auto d = [&](const char* k, double& out) {
      if (kv.has(k)) out = kv.get_double(k);
    };
    d("nav.cell", c.grid.cell);
    d("nav.p_block", c.grid.p_block);
    d("nav.inflation", c.grid.inflation);
    d("nav.band_min", c.grid.band_min);
    d("nav.band_max", c.grid.band_max);
    d("nav.step", c.rrt.step);
    d("nav.goal_bias", c.rrt.goal_bias);
    if (kv.has("nav.max_iters")) c.rrt.max_iters = static_cast<int>(kv.get_int("nav.max_iters"));
    d("nav.goal_tol", c.rrt.goal_tol);
    if (kv.has("nav.seed")) c.rrt.seed = kv.get_u64("nav.seed");
    if (kv.has("nav.smooth")) c.rrt.smooth = kv.get_bool("nav.smooth");
    if (kv.has("nav.smooth_iters"))
      c.rrt.smooth_iters = static_cast<int>(kv.get_int("nav.smooth_iters"));
    d("nav.k_v", c.sim.gains.k_v);
    d("nav.k_omega", c.sim.gains.k_omega);
    d("nav.k_omega2", c.sim.gains.k_omega2);
    d("nav.v_max", c.sim.gains.v_max);
    d("nav.omega_max", c.sim.gains.omega_max);
    d("nav.dt", c.sim.dt);
    d("nav.capture_radius", c.sim.capture_radius);
    d("nav.sim_goal_tol", c.sim.goal_tol);
    d("nav.time_budget", c.sim.time_budget);
    return c;
  }

  static const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = [] {
      std::set<std::string> s;
      const KvConfig kv = NavConfig{}.to_kv();
      for (const auto& [k, v] : kv.items()) s.insert(k);
      return s;
    }();
    return keys;
  }
};

// The full key universe accepted in config files and --set overrides; one
// file can drive every stage of the pipeline.
const std::set<std::string>& all_known_keys() {
  static const std::set<std::string> keys = [] {
    std::set<std::string> s;
    for (const auto& k : ModelConfig::known_keys()) s.insert(k);
    for (const auto& k : TrainConfig::known_keys()) s.insert(k);
    for (const auto& k : NavConfig::known_keys()) s.insert(k);
    return s;
  }();
  return keys;
}

// Config file (if any) + --set overrides, checked against the key universe.
KvConfig load_effective_config(const std::string& config_path,
                               const std::vector<std::string>& overrides) {
  KvConfig kv;
  if (!config_path.empty()) kv = KvConfig::parse_file(config_path);
  for (const auto& kvpair : overrides) {
    const size_t eq = kvpair.find('=');
    if (eq == std::string::npos || eq == 0)
      throw std::invalid_argument("--set expects KEY=VALUE, got '" + kvpair + "'");
    std::string key = kvpair.substr(0, eq);
    std::string value = kvpair.substr(eq + 1);
    // Allow the same spacing people write in config files.
    while (!key.empty() && key.back() == ' ') key.pop_back();
    while (!value.empty() && value.front() == ' ') value.erase(value.begin());
    kv.set(key, value);
  }
  kv.require_known_keys(all_known_keys());
  return kv;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

// The reproducibility record dropped into every output directory.
void echo_config(const std::string& out_dir, const KvConfig& kv) {
  std::filesystem::create_directories(out_dir);
  write_text_file(out_dir + "/config.txt", kv.serialize());
}

std::array<double, 2> parse_xy(const std::string& s, const char* flag) {
  const size_t comma = s.find(',');
  if (comma == std::string::npos)
    throw std::invalid_argument(std::string(flag) + " expects X,Y, got '" + s + "'");
  size_t ax = 0, ay = 0;
  const std::string xs = s.substr(0, comma), ys = s.substr(comma + 1);
  const double x = std::stod(xs, &ax);
  const double y = std::stod(ys, &ay);
  if (ax != xs.size() || ay != ys.size() || xs.empty() || ys.empty())
    throw std::invalid_argument(std::string(flag) + " expects X,Y, got '" + s + "'");
  return {x, y};
}

std::string fmt_g9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Inferred-cloud CSV: x,y,z,prob. Written by infer, consumed by plan.
// ---------------------------------------------------------------------------

void write_prob_csv(const std::string& path, const std::vector<std::array<float, 3>>& points,
                    const std::vector<float>& probs) {
  std::ostringstream out;
  out << "x,y,z,prob\n";
  for (size_t i = 0; i < points.size(); ++i)
    out << fmt_g9(points[i][0]) << ',' << fmt_g9(points[i][1]) << ',' << fmt_g9(points[i][2])
        << ',' << fmt_g9(probs[i]) << '\n';
  write_text_file(path, out.str());
}

void read_prob_csv(const std::string& path, std::vector<std::array<float, 3>>* points,
                   std::vector<float>* probs) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != "x,y,z,prob")
    throw std::runtime_error("'" + path + "' is not an inferred-cloud CSV (bad header)");
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    float x, y, z, p;
    if (std::sscanf(line.c_str(), "%f,%f,%f,%f", &x, &y, &z, &p) != 4)
      throw std::runtime_error("'" + path + "' line " + std::to_string(lineno) +
                               ": expected x,y,z,prob");
    points->push_back({x, y, z});
    probs->push_back(p);
  }
  if (points->empty()) throw std::runtime_error("'" + path + "' lists no points");
}

// Waypoint CSV: x,y. Written by plan, consumed by simulate.
void write_path_csv(const std::string& path, const std::vector<std::array<double, 2>>& wps) {
  std::ostringstream out;
  out << "x,y\n";
  for (const auto& w : wps) out << fmt_g9(w[0]) << ',' << fmt_g9(w[1]) << '\n';
  write_text_file(path, out.str());
}

std::vector<std::array<double, 2>> read_path_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != "x,y")
    throw std::runtime_error("'" + path + "' is not a waypoint CSV (bad header)");
  std::vector<std::array<double, 2>> wps;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    double x, y;
    if (std::sscanf(line.c_str(), "%lf,%lf", &x, &y) != 2)
      throw std::runtime_error("'" + path + "' line " + std::to_string(lineno) +
                               ": expected x,y");
    wps.push_back({x, y});
  }
  if (wps.empty()) throw std::runtime_error("'" + path + "' lists no waypoints");
  return wps;
}

// Rebuild the model a checkpoint was trained with and load its weights.
TeNextModel model_from_checkpoint(const Checkpoint& ckpt) {
  TeNextModel model(ModelConfig::from_kv(ckpt.meta), /*init_seed=*/1);
  model.load_state(ckpt.tensors);
  return model;
}

// ---------------------------------------------------------------------------
// gen-synth
// ---------------------------------------------------------------------------

int cmd_gen_synth(const std::string& out_dir, int scenes, uint64_t seed, const SceneSpec& spec) {
  write_corpus(out_dir, scenes, seed, spec);

  KvConfig echo;
  echo.set("cli.command", "gen-synth");
  echo.set_int("cli.scenes", scenes);
  echo.set("cli.seed", std::to_string(seed));
  echo.set_double("scene.extent", spec.extent);
  echo.set_int("scene.points", spec.points);
  echo.set_int("scene.obstacles", spec.obstacles);
  echo.set_double("scene.slope", spec.slope);
  echo.set_double("scene.clear_radius", spec.clear_radius);
  echo_config(out_dir, echo);

  std::cout << "wrote " << scenes << " scenes to " << out_dir << std::endl;
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const KvConfig& file_cfg, const std::string& data_dir, const std::string& out_dir,
              double val_fraction, bool resume, int interrupt_after) {
  if (!(val_fraction >= 0.0 && val_fraction < 1.0))
    throw std::invalid_argument("--val-fraction must lie in [0, 1)");

  const ModelConfig mcfg = ModelConfig::from_kv(file_cfg);
  const TrainConfig tcfg = TrainConfig::from_kv(file_cfg);
  mcfg.validate();
  tcfg.validate();

  const std::vector<ScenePair> manifest = read_manifest(data_dir);
  const RemapTable remap_table = load_remap_table(data_dir + "/remap.txt");
  std::vector<VoxelScene> all;
  all.reserve(manifest.size());
  for (const auto& sp : manifest)
    all.push_back(
        voxelize_scene(load_scene(data_dir, sp, remap_table), mcfg.quantization_scale));

  // Hold out the trailing fraction for validation; 0 validates on the
  // training scenes themselves (the memorization-check setup).
  int n_val = static_cast<int>(std::lround(val_fraction * static_cast<double>(all.size())));
  n_val = std::min<int>(n_val, static_cast<int>(all.size()) - 1);
  std::vector<VoxelScene> train_split(all.begin(), all.end() - n_val);
  std::vector<VoxelScene> val_split =
      n_val > 0 ? std::vector<VoxelScene>(all.end() - n_val, all.end()) : train_split;

  KvConfig echo = mcfg.to_kv();
  echo.merge(tcfg.to_kv());
  echo.set("cli.command", "train");
  echo.set("cli.data", data_dir);
  echo.set_double("cli.val_fraction", val_fraction);
  echo_config(out_dir, echo);

  TeNextModel model(mcfg, tcfg.seed);
  std::cout << "model parameters: " << model.count_parameters() << "\n"
            << "scenes: " << train_split.size() << " train / " << val_split.size() << " val"
            << std::endl;

  TrainResult result;
  try {
    result = train_model(model, train_split, val_split, tcfg, out_dir, resume, interrupt_after,
                         &std::cout);
  } catch (const std::runtime_error& e) {
    // Divergence is a property of the run, not of how it was invoked.
    if (std::string(e.what()).rfind("training diverged", 0) == 0) {
      std::cerr << "error: " << e.what() << std::endl;
      return 1;
    }
    throw;
  }

  std::cout << "stopped: " << result.stop_reason << "  best val_f1 " << result.best_f1
            << " at epoch " << result.best_epoch << std::endl;
  return 0;
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

int cmd_infer(const std::string& ckpt_path, const std::string& scan_path,
              const std::string& out_path) {
  const Checkpoint ckpt = read_checkpoint(ckpt_path);
  TeNextModel model = model_from_checkpoint(ckpt);

  const LabeledCloud cloud = read_scan(scan_path);
  std::vector<int> point_to_voxel;
  const std::vector<float> voxel_probs = model.infer(cloud.points, &point_to_voxel);

  std::vector<float> point_probs(cloud.points.size());
  for (size_t i = 0; i < cloud.points.size(); ++i)
    point_probs[i] = voxel_probs[static_cast<size_t>(point_to_voxel[i])];

  write_prob_csv(out_path, cloud.points, point_probs);
  std::cout << "wrote " << point_probs.size() << " per-point probabilities to " << out_path
            << std::endl;
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
             const std::string& report_path, double threshold, bool per_point) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw std::invalid_argument("--threshold must lie in (0, 1)");

  const Checkpoint ckpt = read_checkpoint(ckpt_path);
  TeNextModel model = model_from_checkpoint(ckpt);
  const double scale = model.config().quantization_scale;

  std::vector<float> probs;   // pooled over the corpus
  std::vector<uint8_t> refs;  // matching ground-truth labels
  const RemapTable remap_table = load_remap_table(data_dir + "/remap.txt");
  for (const auto& sp : read_manifest(data_dir)) {
    const LabeledCloud cloud = load_scene(data_dir, sp, remap_table);
    if (per_point) {
      std::vector<int> p2v;
      const std::vector<float> vp = model.infer(cloud.points, &p2v);
      for (size_t i = 0; i < cloud.points.size(); ++i) {
        probs.push_back(vp[static_cast<size_t>(p2v[i])]);
        refs.push_back(cloud.labels[i]);
      }
    } else {
      const VoxelScene scene = voxelize_scene(cloud, scale);
      const std::vector<float> vp = eval_scene_probs(model, scene);
      probs.insert(probs.end(), vp.begin(), vp.end());
      refs.insert(refs.end(), scene.labels.begin(), scene.labels.end());
    }
  }

  ConfusionCounts counts =
      count_confusion(predict_labels(probs, static_cast<float>(threshold)), refs);
  const MetricValues m = compute_metrics(counts);
  const PrCurve pr = pr_curve(probs, refs, /*max_points=*/512);

  KvConfig report;
  report.set("eval.command", per_point ? "eval --per-point" : "eval");
  report.set("eval.checkpoint", ckpt_path);
  report.set("eval.data", data_dir);
  report.set_double("eval.threshold", threshold);
  report.set("eval.space", per_point ? "point" : "voxel");
  report.set_int("eval.samples", static_cast<int64_t>(probs.size()));
  report.set_int("eval.tp", counts.tp);
  report.set_int("eval.fp", counts.fp);
  report.set_int("eval.fn", counts.fn);
  report.set_int("eval.tn", counts.tn);
  report.set_double("metrics.accuracy", m.accuracy);
  report.set_double("metrics.precision", m.precision);
  report.set_double("metrics.recall", m.recall);
  report.set_double("metrics.f1", m.f1);
  report.set_double("metrics.miou", m.miou);
  report.set_double("metrics.tpr", m.tpr);
  report.set_double("metrics.tnr", m.tnr);
  report.set_double("metrics.auc_pr", pr.auc);

  const std::filesystem::path rp(report_path);
  if (rp.has_parent_path()) std::filesystem::create_directories(rp.parent_path());
  write_text_file(report_path, report.serialize());

  std::filesystem::path stem = rp;
  stem.replace_extension();
  write_pr_csv(stem.string() + "_pr.csv", pr);
  write_pr_svg(stem.string() + "_pr.svg", pr);

  std::cout << "f1 " << m.f1 << "  miou " << m.miou << "  accuracy " << m.accuracy << "  auc_pr "
            << pr.auc << "\nreport written to " << report_path << std::endl;
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

int cmd_gradcheck(uint64_t seed) {
  const std::vector<GradCheckCase> cases = run_gradient_checks(seed);
  size_t width = 0;
  for (const auto& c : cases) width = std::max(width, c.name.size());
  for (const auto& c : cases) {
    std::printf("%s  %-*s  rel err %.3e  (tol %.0e)\n", c.pass ? "PASS" : "FAIL",
                static_cast<int>(width), c.name.c_str(), c.max_rel_err, c.tolerance);
  }
  if (!all_pass(cases)) {
    std::cout << "gradient checks FAILED" << std::endl;
    return 1;
  }
  std::cout << "all " << cases.size() << " gradient checks passed" << std::endl;
  return 0;
}

// ---------------------------------------------------------------------------
// plan
// ---------------------------------------------------------------------------

int cmd_plan(const KvConfig& file_cfg, const std::string& cloud_path, const std::string& start_s,
             const std::string& goal_s, const std::string& out_dir) {
  NavConfig nav = NavConfig::from_kv(file_cfg);
  nav.validate();
  const std::array<double, 2> start = parse_xy(start_s, "--start");
  const std::array<double, 2> goal = parse_xy(goal_s, "--goal");

  std::vector<std::array<float, 3>> points;
  std::vector<float> probs;
  read_prob_csv(cloud_path, &points, &probs);
  const TravGrid grid = build_grid(points, probs, nav.grid);

  KvConfig echo = nav.to_kv();
  echo.set("cli.command", "plan");
  echo.set("cli.cloud", cloud_path);
  echo.set("cli.start", start_s);
  echo.set("cli.goal", goal_s);
  echo_config(out_dir, echo);

  const PlanResult plan = rrt_plan(grid, start, goal, nav.rrt);

  KvConfig summary;
  summary.set("plan.status", plan_status_name(plan.status));
  summary.set_int("plan.iterations", plan.iterations);
  summary.set_int("plan.tree_size", plan.tree_size);
  summary.set_int("plan.waypoints", static_cast<int64_t>(plan.path.size()));
  write_text_file(out_dir + "/plan.txt", summary.serialize());
  write_scene_svg(out_dir + "/scene.svg", grid, plan.path, {}, start, goal);

  if (plan.status != PlanStatus::kSuccess) {
    std::cerr << "planning failed: " << plan_status_name(plan.status) << " after "
              << plan.iterations << " iterations" << std::endl;
    return 1;
  }
  write_path_csv(out_dir + "/path.csv", plan.path);
  std::cout << "path with " << plan.path.size() << " waypoints written to " << out_dir
            << "/path.csv" << std::endl;
  return 0;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

int cmd_simulate(const KvConfig& file_cfg, const std::string& path_csv, double start_theta,
                 const std::string& out_dir, const std::string& grid_from) {
  NavConfig nav = NavConfig::from_kv(file_cfg);
  nav.validate();

  const std::vector<std::array<double, 2>> path = read_path_csv(path_csv);
  Pose2D start;
  start.x = path.front()[0];
  start.y = path.front()[1];
  start.theta = wrap_angle(start_theta);

  KvConfig echo = nav.to_kv();
  echo.set("cli.command", "simulate");
  echo.set("cli.path", path_csv);
  echo.set_double("cli.start_theta", start_theta);
  echo_config(out_dir, echo);

  const SimResult sim = simulate_path(path, start, nav.sim);
  write_trajectory_csv(out_dir + "/trajectory.csv", sim);

  KvConfig summary;
  summary.set("sim.success", sim.success ? "true" : "false");
  summary.set_double("sim.time", sim.time);
  summary.set_int("sim.samples", static_cast<int64_t>(sim.trajectory.size()));
  summary.set_double("sim.final_goal_distance", sim.final_goal_distance);
  write_text_file(out_dir + "/summary.txt", summary.serialize());

  // With the source cloud at hand the grid can be redrawn under the track.
  if (!grid_from.empty()) {
    std::vector<std::array<float, 3>> points;
    std::vector<float> probs;
    read_prob_csv(grid_from, &points, &probs);
    const TravGrid grid = build_grid(points, probs, nav.grid);
    write_scene_svg(out_dir + "/scene.svg", grid, path, sim.trajectory, path.front(),
                    path.back());
  }

  if (!sim.success) {
    std::cerr << "simulation did not reach the goal: " << sim.time << "s simulated, "
              << sim.final_goal_distance << "m short" << std::endl;
    return 1;
  }
  std::cout << "reached the goal in " << sim.time << "s simulated ("
            << sim.trajectory.size() << " samples)" << std::endl;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse-voxel traversability pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;

  // gen-synth ---------------------------------------------------------------
  auto* gen = app.add_subcommand("gen-synth", "Generate a synthetic labeled corpus");
  std::string gen_out;
  int gen_scenes = 10;
  uint64_t gen_seed = 1;
  SceneSpec gen_spec;
  gen->add_option("--out", gen_out, "Output corpus directory")->required();
  gen->add_option("--scenes", gen_scenes, "Number of scenes")->required();
  gen->add_option("--seed", gen_seed, "Corpus seed");
  gen->add_option("--points", gen_spec.points, "Points per scene");
  gen->add_option("--obstacles", gen_spec.obstacles, "Obstacles per scene");
  gen->add_option("--extent", gen_spec.extent, "Scene diameter, meters");
  gen->add_option("--slope", gen_spec.slope, "Ground slope amplitude");
  gen->add_option("--clear-radius", gen_spec.clear_radius, "Obstacle-free radius at origin");

  // train -------------------------------------------------------------------
  auto* train = app.add_subcommand("train", "Train on a corpus directory");
  std::string train_data, train_out;
  double val_fraction = 0.0;
  bool resume = false;
  int interrupt_after = -1;
  train->add_option("--config", config_path, "Flat key=value config file");
  train->add_option("--set", overrides, "Override a config key (KEY=VALUE, repeatable)");
  train->add_option("--data", train_data, "Corpus directory")->required();
  train->add_option("--out", train_out, "Run output directory")->required();
  train->add_option("--val-fraction", val_fraction,
                    "Fraction of scenes held out for validation; 0 validates on the training "
                    "scenes");
  train->add_flag("--resume", resume, "Continue from train_state.bin in --out");
  train->add_option("--interrupt-after", interrupt_after,
                    "Stop without recording a result after N epochs (for resume testing)");

  // infer -------------------------------------------------------------------
  auto* infer = app.add_subcommand("infer", "Per-point traversability probabilities");
  std::string infer_ckpt, infer_scan, infer_out;
  infer->add_option("--ckpt", infer_ckpt, "Checkpoint file")->required();
  infer->add_option("--scan", infer_scan, "Point-cloud scan file")->required();
  infer->add_option("--out", infer_out, "Output CSV (x,y,z,prob)")->required();

  // eval --------------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "Metrics report over a labeled corpus");
  std::string eval_ckpt, eval_data, eval_report;
  double eval_threshold = 0.5;
  bool per_point = false;
  eval->add_option("--ckpt", eval_ckpt, "Checkpoint file")->required();
  eval->add_option("--data", eval_data, "Corpus directory")->required();
  eval->add_option("--report", eval_report, "Report file; PR curve lands beside it")->required();
  eval->add_option("--threshold", eval_threshold, "Decision threshold");
  eval->add_flag("--per-point", per_point, "Score per point instead of per voxel");

  // gradcheck ---------------------------------------------------------------
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
  uint64_t grad_seed = 1;
  grad->add_option("--seed", grad_seed, "Probe seed");

  // plan ----------------------------------------------------------------- --
  auto* plan = app.add_subcommand("plan", "Plan a path over an inferred cloud");
  std::string plan_cloud, plan_start, plan_goal, plan_out;
  plan->add_option("--config", config_path, "Flat key=value config file");
  plan->add_option("--set", overrides, "Override a config key (KEY=VALUE, repeatable)");
  plan->add_option("--cloud", plan_cloud, "Inferred-cloud CSV from `infer`")->required();
  plan->add_option("--start", plan_start, "Start position X,Y")->required();
  plan->add_option("--goal", plan_goal, "Goal position X,Y")->required();
  plan->add_option("--out", plan_out, "Output directory")->required();

  // simulate ------------------------------------------------------------- --
  auto* sim = app.add_subcommand("simulate", "Track a planned path with the controller");
  std::string sim_path, sim_out, sim_grid_from;
  double start_theta = 0.0;
  sim->add_option("--config", config_path, "Flat key=value config file");
  sim->add_option("--set", overrides, "Override a config key (KEY=VALUE, repeatable)");
  sim->add_option("--path", sim_path, "Waypoint CSV from `plan`")->required();
  sim->add_option("--start-theta", start_theta, "Initial heading, radians");
  sim->add_option("--out", sim_out, "Output directory")->required();
  sim->add_option("--grid-from", sim_grid_from,
                  "Inferred-cloud CSV; when given, scene.svg shows the track over the grid");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_synth(gen_out, gen_scenes, gen_seed, gen_spec);
    const KvConfig file_cfg = load_effective_config(config_path, overrides);
    if (train->parsed())
      return cmd_train(file_cfg, train_data, train_out, val_fraction, resume, interrupt_after);
    if (infer->parsed()) return cmd_infer(infer_ckpt, infer_scan, infer_out);
    if (eval->parsed())
      return cmd_eval(eval_ckpt, eval_data, eval_report, eval_threshold, per_point);
    if (grad->parsed()) return cmd_gradcheck(grad_seed);
    if (plan->parsed()) return cmd_plan(file_cfg, plan_cloud, plan_start, plan_goal, plan_out);
    if (sim->parsed())
      return cmd_simulate(file_cfg, sim_path, start_theta, sim_out, sim_grid_from);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  }
  return 2;  // unreachable with require_subcommand(1)
}
