#pragma once

/// One-phase free boundary problem above an obstacle: minimise
/// int |grad u|^2 + |{u > 0} cap A| with u >= 0, u = 0 outside
/// A = {x_d > phi(x')} and u = u0 on the sphere. The volume term is smoothed to
/// beta_eps(u) = min(1, max(0, u / eps)) with eps >= 2h.

#include <functional>
#include <vector>

#include "branchlab/box_descent.hpp"
#include "branchlab/geometry.hpp"
#include "branchlab/grid.hpp"

namespace branchlab {

struct BernoulliProblem {
  GridPtr grid;
  AnalyticObstacle obstacle;
  /// Boundary datum, evaluated at every node that is not an unknown.
  std::function<double(const Point&)> datum;
  double eps = 0.0;  // 0 selects 2h
};

struct BernoulliSolution {
  ScalarField u;
  double eps = 0.0;
  double smoothed_energy = 0.0;
  double J1 = 0.0;  // Dirichlet energy plus lumped volume of {u > 0}
  double residual = 0.0;
  int iterations = 0;
  std::vector<double> history;
  /// Free-boundary height per column (index = column id, see column_nodes).
  std::vector<double> f;
  std::vector<Point> column_base;
};

/// Columns of the lattice: base point x' and node ids bottom to top.
std::vector<std::vector<std::size_t>> column_nodes(const HalfBallGrid& g);

/// Fills sol.f and sol.column_base from sol.u: per column, the zero of the
/// secant through the lowest positive node and the node above it, clamped to the
/// cell below and to phi from below; columns with no positive node get the
/// sphere height.
void free_boundary_heights(BernoulliSolution& sol, const AnalyticObstacle& obstacle);

/// Throws ValidationError for eps < 2h, NumericalError carrying the last
/// residual when the descent does not converge.
BernoulliSolution minimize_J1(const BernoulliProblem& problem, const BoxOptions& options = {});

struct ContactSets {
  std::vector<std::size_t> contact;   // column ids with |f - phi| <= 2h
  std::vector<std::size_t> singular;  // contact columns with ||grad u| - 1| <= tau
  std::vector<double> boundary_gradient;  // one-sided |grad u| per contact column
};

/// The one-sided gradient at a contact column is the vertical derivative
/// extrapolated linearly to f from the first two nodes above the smoothing layer
/// {u < eps}, times sqrt(1 + |grad phi|^2) since u vanishes along the graph.
ContactSets extract_sets(const BernoulliSolution& sol, const AnalyticObstacle& obstacle,
                         double tau = 0.05);

/// Free-boundary height of the slab problem with datum amplitude * x_d on the
/// top face, by brute-force scan of E(f) = amplitude^2 / (1 - f) + (1 - f) over f in [0, 1).
double slab_height_oracle(double amplitude, int samples = 200001);

}  // namespace branchlab
