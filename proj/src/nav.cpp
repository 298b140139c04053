#include "tenext/nav.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "tenext/svg.hpp"

namespace tenext {

TravGrid build_grid(const std::vector<std::array<float, 3>>& points,
                    const std::vector<float>& probs, const TravGridParams& params) {
  if (points.empty()) throw std::invalid_argument("traversability grid: empty cloud");
  if (points.size() != probs.size())
    throw std::invalid_argument("traversability grid: point/probability count mismatch");
  if (!(params.cell > 0.0)) throw std::invalid_argument("traversability grid: cell must be positive");
  if (!(params.band_max > params.band_min))
    throw std::invalid_argument("traversability grid: empty height band");

  double min_x = std::numeric_limits<double>::infinity(), max_x = -min_x;
  double min_y = min_x, max_y = max_x;
  for (const auto& p : points) {
    min_x = std::min(min_x, static_cast<double>(p[0]));
    max_x = std::max(max_x, static_cast<double>(p[0]));
    min_y = std::min(min_y, static_cast<double>(p[1]));
    max_y = std::max(max_y, static_cast<double>(p[1]));
  }
  if (!std::isfinite(min_x) || !std::isfinite(max_x) || !std::isfinite(min_y) ||
      !std::isfinite(max_y) || max_x - min_x < params.cell || max_y - min_y < params.cell)
    throw std::invalid_argument("traversability grid: degenerate cloud bounds");

  const int nx = static_cast<int>(std::ceil((max_x - min_x) / params.cell)) + 1;
  const int ny = static_cast<int>(std::ceil((max_y - min_y) / params.cell)) + 1;
  if (static_cast<int64_t>(nx) * ny > 64'000'000)
    throw std::invalid_argument("traversability grid: bounds span too many cells");
  TravGrid grid(min_x, min_y, params.cell, nx, ny);

  // Pass 1: the lowest point per cell estimates local ground height.
  const size_t n_cells = static_cast<size_t>(nx) * static_cast<size_t>(ny);
  std::vector<float> ground(n_cells, std::numeric_limits<float>::infinity());
  std::vector<size_t> cell_of(points.size());
  for (size_t i = 0; i < points.size(); ++i) {
    const size_t ci = static_cast<size_t>(grid.cell_y(points[i][1])) * nx +
                      static_cast<size_t>(grid.cell_x(points[i][0]));
    cell_of[i] = ci;
    ground[ci] = std::min(ground[ci], points[i][2]);
  }

  // Pass 2: points inside the height band vote; any low-probability vote
  // blocks the cell.
  std::vector<uint8_t> seen(n_cells, 0), low(n_cells, 0);
  for (size_t i = 0; i < points.size(); ++i) {
    const size_t ci = cell_of[i];
    const double rel = points[i][2] - ground[ci];
    if (rel < params.band_min || rel > params.band_max) continue;
    seen[ci] = 1;
    if (probs[i] < params.p_block) low[ci] = 1;
  }
  for (int iy = 0; iy < ny; ++iy)
    for (int ix = 0; ix < nx; ++ix) {
      const size_t ci = static_cast<size_t>(iy) * nx + ix;
      if (!seen[ci]) continue;
      grid.set(ix, iy, low[ci] ? TravGrid::Cell::kBlocked : TravGrid::Cell::kTraversable);
    }

  // Pass 3: grow blocked cells by the robot radius (center-to-center).
  const int reach = static_cast<int>(std::floor(params.inflation / params.cell));
  std::vector<std::pair<int, int>> disk;
  for (int dy = -reach; dy <= reach; ++dy)
    for (int dx = -reach; dx <= reach; ++dx)
      if (params.cell * std::sqrt(static_cast<double>(dx) * dx + static_cast<double>(dy) * dy) <=
          params.inflation)
        disk.emplace_back(dx, dy);

  TravGrid inflated = grid;
  for (int iy = 0; iy < ny; ++iy)
    for (int ix = 0; ix < nx; ++ix) {
      if (grid.at(ix, iy) != TravGrid::Cell::kBlocked) continue;
      for (const auto& [dx, dy] : disk)
        if (inflated.in_bounds(ix + dx, iy + dy))
          inflated.set(ix + dx, iy + dy, TravGrid::Cell::kBlocked);
    }
  return inflated;
}

// ---------------------------------------------------------------------------
// Planning.

const char* plan_status_name(PlanStatus s) {
  switch (s) {
    case PlanStatus::kSuccess:
      return "success";
    case PlanStatus::kBlockedStart:
      return "blocked-start";
    case PlanStatus::kExhausted:
      return "exhausted";
  }
  return "?";
}

bool segment_free(const TravGrid& grid, std::array<double, 2> a, std::array<double, 2> b) {
  // Exact grid walk: every cell the segment crosses must be traversable.
  // Strictly more conservative than sampling points along the segment, so any
  // finer-resolution recheck of an accepted edge also passes.
  const double cell = grid.cell_size();
  const double x0 = (a[0] - grid.origin_x()) / cell, y0 = (a[1] - grid.origin_y()) / cell;
  const double x1 = (b[0] - grid.origin_x()) / cell, y1 = (b[1] - grid.origin_y()) / cell;
  int ix = static_cast<int>(std::floor(x0)), iy = static_cast<int>(std::floor(y0));
  const int ix1 = static_cast<int>(std::floor(x1)), iy1 = static_cast<int>(std::floor(y1));
  const double dx = x1 - x0, dy = y1 - y0;
  const int sx = dx > 0.0 ? 1 : -1, sy = dy > 0.0 ? 1 : -1;
  const double inf = std::numeric_limits<double>::infinity();
  double t_max_x = dx != 0.0 ? (sx > 0 ? (ix + 1 - x0) : (x0 - ix)) / std::abs(dx) : inf;
  double t_max_y = dy != 0.0 ? (sy > 0 ? (iy + 1 - y0) : (y0 - iy)) / std::abs(dy) : inf;
  const double t_delta_x = dx != 0.0 ? 1.0 / std::abs(dx) : inf;
  const double t_delta_y = dy != 0.0 ? 1.0 / std::abs(dy) : inf;

  const int max_steps = std::abs(ix1 - ix) + std::abs(iy1 - iy) + 2;
  for (int k = 0; k <= max_steps; ++k) {
    if (!grid.in_bounds(ix, iy) || grid.at(ix, iy) != TravGrid::Cell::kTraversable) return false;
    if (ix == ix1 && iy == iy1) return true;
    if (t_max_x < t_max_y) {
      ix += sx;
      t_max_x += t_delta_x;
    } else {
      iy += sy;
      t_max_y += t_delta_y;
    }
  }
  return false;  // numerically wedged walk counts as a collision
}

PlanResult rrt_plan(const TravGrid& grid, std::array<double, 2> start,
                    std::array<double, 2> goal, const RrtParams& params) {
  if (!(params.step > 0.0)) throw std::invalid_argument("rrt: step must be positive");
  if (!(params.goal_bias >= 0.0 && params.goal_bias <= 1.0))
    throw std::invalid_argument("rrt: goal_bias must be in [0, 1]");
  if (params.max_iters < 1) throw std::invalid_argument("rrt: max_iters must be positive");

  PlanResult result;
  if (!grid.traversable_at(start[0], start[1])) {
    result.status = PlanStatus::kBlockedStart;
    return result;
  }

  struct Node {
    std::array<double, 2> p;
    int parent;
  };
  std::vector<Node> tree{{start, -1}};
  Rng rng(params.seed);

  const double x0 = grid.origin_x(), y0 = grid.origin_y();
  const double x1 = x0 + grid.width(), y1 = y0 + grid.height();

  int reached = -1;
  for (int it = 0; it < params.max_iters && reached < 0; ++it) {
    ++result.iterations;
    std::array<double, 2> target;
    if (rng.uniform() < params.goal_bias)
      target = goal;
    else
      target = {rng.uniform(x0, x1), rng.uniform(y0, y1)};

    // Nearest tree node by Euclidean distance.
    int ni = 0;
    double nd = std::numeric_limits<double>::infinity();
    for (size_t k = 0; k < tree.size(); ++k) {
      const double dx = tree[k].p[0] - target[0], dy = tree[k].p[1] - target[1];
      const double d = dx * dx + dy * dy;
      if (d < nd) {
        nd = d;
        ni = static_cast<int>(k);
      }
    }

    const double dist = std::sqrt(nd);
    if (dist < 1e-12) continue;
    const double r = std::min(params.step, dist) / dist;
    const std::array<double, 2> next{tree[ni].p[0] + r * (target[0] - tree[ni].p[0]),
                                     tree[ni].p[1] + r * (target[1] - tree[ni].p[1])};
    if (!segment_free(grid, tree[ni].p, next)) continue;
    tree.push_back({next, ni});
    if (std::hypot(next[0] - goal[0], next[1] - goal[1]) <= params.goal_tol)
      reached = static_cast<int>(tree.size()) - 1;
  }
  result.tree_size = static_cast<int>(tree.size());
  if (reached < 0) {
    result.status = PlanStatus::kExhausted;
    return result;
  }

  for (int k = reached; k >= 0; k = tree[static_cast<size_t>(k)].parent)
    result.path.push_back(tree[static_cast<size_t>(k)].p);
  std::reverse(result.path.begin(), result.path.end());

  if (params.smooth && result.path.size() > 2) {
    // Shortcutting: keep replacing random sub-chains with one free segment.
    for (int k = 0; k < params.smooth_iters && result.path.size() > 2; ++k) {
      const size_t n = result.path.size();
      size_t i = static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(n - 1)));
      size_t j = static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(n)));
      if (j < i) std::swap(i, j);
      if (j - i < 2) continue;
      if (segment_free(grid, result.path[i], result.path[j]))
        result.path.erase(result.path.begin() + static_cast<long>(i) + 1,
                          result.path.begin() + static_cast<long>(j));
    }
  }
  result.status = PlanStatus::kSuccess;
  return result;
}

// ---------------------------------------------------------------------------
// Control and simulation.

double wrap_angle(double a) {
  while (a > M_PI) a -= 2.0 * M_PI;
  while (a <= -M_PI) a += 2.0 * M_PI;
  return a;
}

Twist control_step(const Pose2D& current, const Pose2D& target, const ControlGains& gains) {
  if (!(gains.k_v > 0.0) || !(gains.k_omega > 0.0))
    throw std::invalid_argument("control: gains must be positive");
  const double dx = target.x - current.x;
  const double dy = target.y - current.y;
  const double dist = std::hypot(dx, dy);
  Twist tw;
  if (dist < 1e-12) return tw;  // at the target: no bearing, no motion

  const double theta_e = wrap_angle(std::atan2(dy, dx) - current.theta);
  const double k2 = gains.k_omega2 < 0.0 ? gains.k_omega : gains.k_omega2;
  tw.v = dist * gains.k_v * std::cos(theta_e);
  tw.omega = gains.k_omega * std::cos(theta_e) * std::sin(theta_e) + k2 * theta_e;
  tw.v = std::clamp(tw.v, -gains.v_max, gains.v_max);
  tw.omega = std::clamp(tw.omega, -gains.omega_max, gains.omega_max);
  return tw;
}

SimResult simulate_path(const std::vector<std::array<double, 2>>& path, Pose2D start,
                        const SimParams& params) {
  if (path.empty()) throw std::invalid_argument("simulate: empty path");
  if (!(params.dt > 0.0 && params.dt <= 0.1))
    throw std::invalid_argument("simulate: dt must be in (0, 0.1]");

  SimResult result;
  Pose2D pose = start;
  pose.theta = wrap_angle(pose.theta);
  size_t w = 0;
  double t = 0.0;
  const size_t last = path.size() - 1;

  while (t <= params.time_budget + 1e-12) {
    // Capture waypoints (final one uses the tighter goal tolerance).
    double dist = std::hypot(path[w][0] - pose.x, path[w][1] - pose.y);
    while (w < last && dist <= params.capture_radius) {
      ++w;
      dist = std::hypot(path[w][0] - pose.x, path[w][1] - pose.y);
    }
    if (w == last && dist <= params.goal_tol) {
      result.success = true;
      break;
    }

    const Pose2D target{path[w][0], path[w][1], 0.0};
    const Twist tw = control_step(pose, target, params.gains);
    result.trajectory.push_back({t, pose.x, pose.y, pose.theta, tw.v, tw.omega});
    pose.x += tw.v * std::cos(pose.theta) * params.dt;
    pose.y += tw.v * std::sin(pose.theta) * params.dt;
    pose.theta = wrap_angle(pose.theta + tw.omega * params.dt);
    t += params.dt;
  }

  result.time = t;
  result.final_pose = pose;
  result.final_goal_distance = std::hypot(path[last][0] - pose.x, path[last][1] - pose.y);
  return result;
}

void write_trajectory_csv(const std::string& path, const SimResult& result) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << "t,x,y,theta,v,omega\n";
  char buf[220];
  for (const SimSample& s : result.trajectory) {
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", s.t, s.x, s.y, s.theta,
                  s.v, s.omega);
    out << buf;
  }
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

void write_scene_svg(const std::string& path, const TravGrid& grid,
                     const std::vector<std::array<double, 2>>& plan,
                     const std::vector<SimSample>& trajectory, std::array<double, 2> start,
                     std::array<double, 2> goal) {
  const double px = 6.0;  // pixels per cell
  const double W = grid.nx() * px, H = grid.ny() * px;
  SvgDoc doc(W, H);
  // y flips so +y points up in the picture.
  const auto X = [&](double x) { return (x - grid.origin_x()) / grid.cell_size() * px; };
  const auto Y = [&](double y) { return H - (y - grid.origin_y()) / grid.cell_size() * px; };

  doc.rect(0, 0, W, H, "#c9c9c9");  // unknown
  for (int iy = 0; iy < grid.ny(); ++iy)
    for (int ix = 0; ix < grid.nx(); ++ix) {
      const TravGrid::Cell c = grid.at(ix, iy);
      if (c == TravGrid::Cell::kUnknown) continue;
      const char* color = c == TravGrid::Cell::kBlocked ? "#7a3030" : "#e8f0e2";
      doc.rect(ix * px, H - (iy + 1) * px, px, px, color);
    }

  std::vector<std::pair<double, double>> pts;
  for (const auto& p : plan) pts.emplace_back(X(p[0]), Y(p[1]));
  if (pts.size() > 1) doc.polyline(pts, "#1f6fb2", 2.0);

  pts.clear();
  for (const SimSample& s : trajectory) pts.emplace_back(X(s.x), Y(s.y));
  if (pts.size() > 1) doc.polyline(pts, "#c86a1f", 1.5);

  doc.circle(X(start[0]), Y(start[1]), 4.0, "#2a7a2a");
  doc.circle(X(goal[0]), Y(goal[1]), 4.0, "#b03060");
  doc.save(path);
}

}  // namespace tenext
