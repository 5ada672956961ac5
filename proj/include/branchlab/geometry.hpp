#pragma once

/// Obstacle graph, its harmonic extension m, the normalising flow Phi with
/// m(Phi(x', t)) = t, and the coefficient fields it induces on the half ball.

#include <string>
#include <vector>

#include <json.hpp>

#include "branchlab/grid.hpp"
#include "branchlab/polynomial.hpp"

namespace branchlab {

/// Polynomial graph x_d = phi(x') with phi(0) = 0 and grad phi(0) = 0.
struct AnalyticObstacle {
  int d = 2;
  Poly phi{1};

  static AnalyticObstacle flat(int d);
  /// d = 2 obstacle phi(x1) = sum_k coeffs[k] x1^k.
  static AnalyticObstacle univariate(const std::vector<double>& coeffs);

  void validate() const;
  double value(const Point& xp) const { return phi.value(xp); }
  Point grad(const Point& xp) const { return phi.grad(xp); }
};

/// Harmonic polynomial m vanishing on the graph with unit inward normal derivative.
struct HarmonicExtension {
  int d = 2;
  int order = 0;
  Poly m{2};

  /// Wraps a closed-form m supplied by the caller; rejects non-harmonic input.
  static HarmonicExtension from_polynomial(int d, const Poly& m);

  double value(const Point& x) const { return m.value(x); }
  Point grad(const Point& x) const { return m.grad(x); }
  Mat3 hess(const Point& x) const { return m.hess(x); }
  /// Coefficient table keyed "j,k" (or "i,j,k" in 3-D).
  nlohmann::json to_json() const;
};

/// Cauchy-Kovalevskaya power series for m up to total degree `order`.
HarmonicExtension ck_extend(const AnalyticObstacle& obstacle, int order = 8);

/// Largest R (sampled) with |grad m| >= 1/2 on the lattice of [-R,R]^{d-1} x [0,R]
/// restricted to points on or above the graph.
double validity_radius(const HarmonicExtension& m, const AnalyticObstacle& obstacle,
                       double r_max = 4.0, int samples = 33);

struct FlowSample {
  Point phi{0, 0, 0};
  /// jac[i] = d Phi / d x_i for tangential i; jac[d-1] = d Phi / d t.
  std::array<Point, 3> jac{};
};

struct FlowMap {
  int d = 2;
  double dt = 0.0;
  std::vector<Point> columns;  // tangential base points, trailing entries zero
  std::vector<double> times;   // increasing, starting at 0
  std::vector<FlowSample> samples;

  const FlowSample& at(std::size_t col, std::size_t k) const {
    return samples[col * times.size() + k];
  }
};

/// RK4 integration of dPhi/dt = grad m / |grad m|^2 from the graph together with
/// the variational equation for the tangential Jacobian columns. Throws
/// NumericalError("flow left validity region") when |grad m| < 1/2.
FlowMap flow_map(const HarmonicExtension& m, const AnalyticObstacle& obstacle,
                 const std::vector<Point>& columns, const std::vector<double>& times, double dt);

/// Flow sampled at delta * (grid node coordinates).
FlowMap flow_for_grid(const HarmonicExtension& m, const AnalyticObstacle& obstacle,
                      const HalfBallGrid& grid, double delta, double dt);

struct FlowInvariants {
  double level = 0.0;          // max |m(Phi) - t|
  double metric = 0.0;         // max |dPhi_i . dPhi_j - (delta_ij + phi_i phi_j)| at t = 0
  double orthogonality = 0.0;  // max |dPhi_j . dPhi_t|
  double conservation = 0.0;   // max |d/dt (|grad m|^2(Phi) det DPhi)|, centred differences
};

FlowInvariants check_flow_invariants(const FlowMap& flow, const HarmonicExtension& m,
                                     const AnalyticObstacle& obstacle);

/// Node fields M, Q, mu, F on the grid. M is stored as a full symmetric matrix.
struct CoefficientSet {
  GridPtr grid;
  bool identity = false;  // M = I, Q = 0, mu = 1, F = x exactly
  std::array<std::array<std::vector<double>, 3>, 3> M;
  std::vector<double> Q;
  std::vector<double> mu;
  std::array<std::vector<double>, 3> F;

  static CoefficientSet flat(GridPtr g);
  Mat3 M_at(std::size_t node) const;
};

/// Builds the coefficients from a flow sampled by flow_for_grid with the same delta.
CoefficientSet assemble_coefficients(const FlowMap& flow, const HarmonicExtension& m,
                                     GridPtr grid, double delta);

struct CoefficientChecks {
  double asymmetry = 0.0;
  double min_eigenvalue = 0.0;
  double max_eigenvalue = 0.0;
  double q_on_flat = 0.0;       // max |Q| on flat nodes
  double radial_identity = 0.0;  // max |F.x/|x| - |x||
  double normal_f_on_flat = 0.0;  // max |F_d| on flat nodes
};

CoefficientChecks check_coefficients(const CoefficientSet& c);

/// Eigenvalues of a symmetric d x d matrix in increasing order.
std::array<double, 3> symmetric_eigenvalues(const Mat3& A, int d);

}  // namespace branchlab
