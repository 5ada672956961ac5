#pragma once

/// Thin-obstacle energy G = F + E on the half ball,
///   F(w) = int M grad w . grad w + d_dQ w d_d w,
///   E(w) = int sum_k g_k(x, w, grad w) w^(3-k) P_k(grad w),
/// minimised over w >= 0 on the flat part with a Dirichlet trace, by Q1
/// elements with 2^d Gauss points per cell.

#include <functional>
#include <optional>
#include <vector>

#include "branchlab/box_descent.hpp"
#include "branchlab/geometry.hpp"
#include "branchlab/grid.hpp"
#include "branchlab/polynomial.hpp"

namespace branchlab {

struct NonlinearTerm {
  int k = 3;  // homogeneity of P
  /// P(p) = (M(x) p . p) p_d; otherwise `P` is used.
  bool metric_cubic = false;
  Poly P{3};
  double g_const = 1.0;
  /// Optional prefactor g(x, y, p); its derivatives are taken by central
  /// differences and left out of the Newton Hessian.
  std::function<double(const Point&, double, const Point&)> g;
};

struct NonlinearityModel {
  bool enabled = false;
  std::vector<NonlinearTerm> terms;

  static NonlinearityModel off() { return {}; }
  /// g_3 = -1, P_3(p) = (M p . p) p_d: the leading term of 1/(1 + d_d w).
  static NonlinearityModel cubic_default();

  double P_value(const NonlinearTerm& t, const Mat3& M, const Point& p, int d) const;
  /// max |P_k(lambda p) - lambda^k P_k(p)| / (1 + |lambda^k P_k(p)|) over a seeded sample.
  double homogeneity_defect(int d, unsigned seed = 7, int samples = 200) const;
};

struct EnergyParts {
  double F = 0.0;
  double E = 0.0;
  double total() const { return F + E; }
};

/// Discrete energy on a fixed lattice. All node values enter; which of them are
/// unknowns is decided by the caller.
class ThinObstacleEnergy {
 public:
  ThinObstacleEnergy(const CoefficientSet& coefficients, const NonlinearityModel& nonlinearity);

  EnergyParts parts(const std::vector<double>& w) const;
  /// Energy and, when grad is non-null, its derivative with respect to every
  /// node value.
  double value(const std::vector<double>& w, std::vector<double>* grad) const;
  /// Hessian restricted to node pairs where var[] >= 0, in variable numbering.
  void hessian(const std::vector<double>& w, const std::vector<int>& var,
               std::vector<HessianEntry>& out) const;
  /// Largest |grad w| at Gauss points of cells that meet the half ball.
  double max_gradient(const std::vector<double>& w) const;

  const HalfBallGrid& grid() const { return *grid_; }

 private:
  struct GaussData {
    Mat3 M;
    double q;  // d_d Q
    Point x;
  };
  void local(const GaussData& G, double y, const Point& p, bool nonlinear, double& e, double& ey,
             Point& ep) const;
  double evaluate(const std::vector<double>& w, std::vector<double>* grad, bool nonlinear) const;

  GridPtr grid_;
  NonlinearityModel nonlin_;
  std::vector<std::size_t> cells_;
  std::vector<GaussData> gauss_;  // per retained cell and Gauss point
};

struct ThinObstacleProblem {
  CoefficientSet coefficients;
  NonlinearityModel nonlinearity;
  /// Dirichlet values at every node that is not an unknown; also the initial guess.
  std::function<double(const Point&)> datum;
  double lipschitz_cap = 0.5;  // enforced when the nonlinearity is enabled
  /// Hold the datum at every node of a cell cut by the sphere, instead of only
  /// at nodes outside the ball.
  bool rim_dirichlet = true;
};

struct ThinObstacleSolution {
  ScalarField w;
  EnergyParts energy;
  double residual = 0.0;
  int iterations = 0;
  int rejected_steps = 0;
  std::vector<double> history;
  std::vector<std::size_t> active;  // flat nodes with w <= tau
  double tau = 0.0;
};

/// Corners of cells cut by the sphere.
std::vector<char> rim_nodes(const HalfBallGrid& g);

/// Active-set threshold 10 h^(3/2).
double active_threshold(double h);

/// Throws ValidationError if E is on and the initial guess breaks the Lipschitz
/// cap, NumericalError("Lipschitz cap violated ...") if the descent stalls with
/// rejected steps, NumericalError carrying the residual otherwise.
ThinObstacleSolution minimize_thin_obstacle(const ThinObstacleProblem& problem,
                                            const BoxOptions& options = {});

/// Min over admissible unit directions (+-e_i inside, +e_i on the flat part,
/// -e_i on the flat part where w > 0) of the first variation, divided by the
/// lumped node volume. Directions vanish on the Dirichlet nodes of the solver
/// (rim nodes included when rim_dirichlet is set).
double vi_residual(const ScalarField& w, const CoefficientSet& coefficients,
                   const NonlinearityModel& nonlinearity, bool rim_dirichlet = true);

struct AssumptionReport {
  double sup_w = 0.0;
  double sup_grad = 0.0;
  double holder_grad = 0.0;  // sampled [grad w]_{C^{0,alpha}} over lattice pairs
  double alpha = 0.5;
  double c1alpha_norm = 0.0;
  bool within_delta = false;
  double w0 = 0.0;
  Point grad0{0, 0, 0};
  bool branching = false;  // |w(0)| <= 5h and |grad w(0)| <= 5 h^(1/2)
  std::vector<double> radii;
  std::vector<double> l2_mass;         // int_{B_r+} w^2
  std::vector<double> dirichlet_mass;  // int_{B_r+} |grad w|^2
  bool nondegenerate = false;          // both masses > 0 at every radius
};

AssumptionReport validate_assumptions(const ScalarField& w, double delta, double alpha = 0.5);

}  // namespace branchlab
