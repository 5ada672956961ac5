#pragma once

/// Minimisation of a smooth energy over a box {x_i >= lower_i}: projected
/// gradient with Barzilai-Borwein steps and a monotone Armijo search, followed
/// by projected-Newton refinement when a Hessian is available.

#include <functional>
#include <limits>
#include <vector>

namespace branchlab {

struct HessianEntry {
  int row;
  int col;
  double value;
};

struct BoxProblem {
  std::size_t n = 0;
  std::vector<double> lower;  // -infinity for unconstrained variables
  std::vector<double> scale;  // residual divisor per variable (lumped node volume)
  /// Energy and gradient; the gradient vector is only written when non-null.
  std::function<double(const std::vector<double>&, std::vector<double>*)> energy;
  /// Optional symmetric Hessian (all entries, both triangles).
  std::function<void(const std::vector<double>&, std::vector<HessianEntry>&)> hessian;
  /// Optional extra admissibility test applied to every trial point.
  std::function<bool(const std::vector<double>&)> admissible;
};

struct BoxOptions {
  double tol = 1e-8;
  int max_iter = 400;
  int bb_iter = 40;
  bool newton = true;
};

struct BoxResult {
  std::vector<double> x;
  double energy = 0.0;
  double residual = 0.0;
  int iterations = 0;
  bool converged = false;
  int rejected_steps = 0;  // trial points refused by the admissibility test
  std::vector<double> history;
};

constexpr double kNoBound = -std::numeric_limits<double>::infinity();

/// Scaled projected-gradient residual: |g_i| / scale_i off the bound and
/// max(0, -g_i) / scale_i on it.
double projected_residual(const std::vector<double>& x, const std::vector<double>& g,
                          const std::vector<double>& lower, const std::vector<double>& scale);

/// Requires x0 feasible (and admissible when a test is given).
BoxResult minimize_box(const BoxProblem& problem, std::vector<double> x0, const BoxOptions& options);

}  // namespace branchlab
