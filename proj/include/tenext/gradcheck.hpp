#pragma once
// Finite-difference gradient verification, run in double precision. Each case
// rebuilds a scalar loss from scratch for every probe, so ops with internal
// randomness must derive their draws from a fixed seed inside the builder.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tenext/autograd.hpp"

namespace tenext {

struct GradCheckCase {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

// Central differences with step eps on every element of every leaf; the
// analytic gradient comes from one reverse pass. Errors are reported relative
// to the largest gradient magnitude of the tensor being probed, which keeps
// the measure scale-free without blowing up on near-zero entries.
double finite_difference_max_rel_err(
    std::vector<Var<double>> leaves,
    const std::function<Var<double>(const std::vector<Var<double>>&)>& build,
    double eps = 1e-3);

// The full verification suite: every differentiable op plus both residual
// block flavors end to end.
std::vector<GradCheckCase> run_gradient_checks(uint64_t seed);

inline bool all_pass(const std::vector<GradCheckCase>& cases) {
  for (const auto& c : cases)
    if (!c.pass) return false;
  return true;
}

}  // namespace tenext
