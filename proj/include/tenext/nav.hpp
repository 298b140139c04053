#pragma once
// Navigation at desk scale: a 2D traversability grid projected from inferred
// point probabilities, RRT planning over it, a Lyapunov heading/velocity
// controller, and a differential-drive kinematic simulator.

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tenext/rng.hpp"

namespace tenext {

struct TravGridParams {
  double cell = 0.1;        // meters per cell
  double p_block = 0.5;     // any projected point below this blocks its cell
  double inflation = 0.35;  // robot radius added around blocked cells, meters
  double band_min = -1.0;   // height band relative to the cell's local ground
  double band_max = 2.0;
};

class TravGrid {
 public:
  enum class Cell : uint8_t { kUnknown = 0, kTraversable = 1, kBlocked = 2 };

  TravGrid() = default;
  TravGrid(double origin_x, double origin_y, double cell, int nx, int ny)
      : origin_x_(origin_x), origin_y_(origin_y), cell_(cell), nx_(nx), ny_(ny),
        cells_(static_cast<size_t>(nx) * static_cast<size_t>(ny), Cell::kUnknown) {}

  int nx() const { return nx_; }
  int ny() const { return ny_; }
  double cell_size() const { return cell_; }
  double origin_x() const { return origin_x_; }
  double origin_y() const { return origin_y_; }
  double width() const { return nx_ * cell_; }
  double height() const { return ny_ * cell_; }

  bool in_bounds(int ix, int iy) const { return ix >= 0 && ix < nx_ && iy >= 0 && iy < ny_; }
  Cell at(int ix, int iy) const { return cells_[index(ix, iy)]; }
  void set(int ix, int iy, Cell c) { cells_[index(ix, iy)] = c; }

  int cell_x(double x) const { return static_cast<int>(std::floor((x - origin_x_) / cell_)); }
  int cell_y(double y) const { return static_cast<int>(std::floor((y - origin_y_) / cell_)); }
  double center_x(int ix) const { return origin_x_ + (ix + 0.5) * cell_; }
  double center_y(int iy) const { return origin_y_ + (iy + 0.5) * cell_; }

  // Out-of-bounds and unknown cells are not traversable.
  bool traversable_at(double x, double y) const {
    const int ix = cell_x(x), iy = cell_y(y);
    return in_bounds(ix, iy) && at(ix, iy) == Cell::kTraversable;
  }

 private:
  size_t index(int ix, int iy) const {
    return static_cast<size_t>(iy) * static_cast<size_t>(nx_) + static_cast<size_t>(ix);
  }

  double origin_x_ = 0.0, origin_y_ = 0.0;
  double cell_ = 0.1;
  int nx_ = 0, ny_ = 0;
  std::vector<Cell> cells_;
};

// Vertical projection of per-point probabilities: within each cell the lowest
// point defines local ground, points inside the height band vote, any vote
// below p_block blocks the cell, and blocked cells grow by the inflation
// radius (center-to-center).
TravGrid build_grid(const std::vector<std::array<float, 3>>& points,
                    const std::vector<float>& probs, const TravGridParams& params);

// ---------------------------------------------------------------------------
// Planning.

struct RrtParams {
  double step = 0.4;       // extension length, meters
  double goal_bias = 0.1;  // probability of sampling the goal
  int max_iters = 5000;
  double goal_tol = 0.3;   // success radius around the goal
  uint64_t seed = 1;
  bool smooth = true;      // shortcut smoothing of the returned path
  int smooth_iters = 100;
};

enum class PlanStatus { kSuccess, kBlockedStart, kExhausted };
const char* plan_status_name(PlanStatus s);

struct PlanResult {
  PlanStatus status = PlanStatus::kExhausted;
  std::vector<std::array<double, 2>> path;  // start..goal-region waypoints
  int iterations = 0;
  int tree_size = 0;
};

// Collision check for a straight segment: every grid cell the segment
// crosses must be traversable (an exact traversal, at least as strict as
// half-cell point sampling).
bool segment_free(const TravGrid& grid, std::array<double, 2> a, std::array<double, 2> b);

PlanResult rrt_plan(const TravGrid& grid, std::array<double, 2> start,
                    std::array<double, 2> goal, const RrtParams& params);

// ---------------------------------------------------------------------------
// Control and simulation.

struct Pose2D {
  double x = 0.0, y = 0.0;
  double theta = 0.0;  // wrapped to (-pi, pi]
};

struct Twist {
  double v = 0.0;
  double omega = 0.0;
};

double wrap_angle(double a);  // into (-pi, pi]

struct ControlGains {
  double k_v = 0.5;
  double k_omega = 1.5;
  double k_omega2 = -1.0;  // gain on the bare heading-error term; <0 reuses k_omega
  double v_max = 1.0;
  double omega_max = 2.0;
};

// v = |x| * k_v * cos(th_e); omega = k_w * cos(th_e) * sin(th_e) + k_w2 * th_e,
// where th_e is the bearing-to-target error; both saturated.
Twist control_step(const Pose2D& current, const Pose2D& target, const ControlGains& gains);

struct SimParams {
  double dt = 0.05;             // integration step, must lie in (0, 0.1]
  double capture_radius = 0.3;  // advance to the next waypoint inside this
  double goal_tol = 0.15;       // success radius at the final waypoint
  double time_budget = 120.0;   // simulated seconds before timing out
  ControlGains gains;
};

struct SimSample {
  double t, x, y, theta, v, omega;
};

struct SimResult {
  bool success = false;
  double time = 0.0;
  Pose2D final_pose;
  double final_goal_distance = 0.0;
  std::vector<SimSample> trajectory;
};

// Unicycle integration along the waypoint list. A timeout leaves success
// false with the trajectory so far.
SimResult simulate_path(const std::vector<std::array<double, 2>>& path, Pose2D start,
                        const SimParams& params);

void write_trajectory_csv(const std::string& path, const SimResult& result);

// Grid + planned path + driven trace in one picture.
void write_scene_svg(const std::string& path, const TravGrid& grid,
                     const std::vector<std::array<double, 2>>& plan,
                     const std::vector<SimSample>& trajectory, std::array<double, 2> start,
                     std::array<double, 2> goal);

}  // namespace tenext
