#pragma once

/// Almgren-type frequency of a thin-obstacle field with variable coefficients:
/// height H, Dirichlet energies D_i and D_b, the radial and tangential splits
/// A and B, and the remainders of the three differential identities
///   H' = (d-1)H/r + 2B/r + e_H,
///   D - B/r = e_O,
///   (d-2)D - rD' + 2A/r + e_I = 0.
/// Integrals use polar quadrature with panels aligned to the cutoff kinks and
/// C^1 cubic sampling of the node fields.

#include <array>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "branchlab/geometry.hpp"
#include "branchlab/grid.hpp"
#include "branchlab/quadrature.hpp"
#include "branchlab/signorini.hpp"

namespace branchlab {

struct WhitneyDecomposition;

struct FrequencyReport {
  double r = 0.0;
  bool degenerate = false;  // H(r) == 0; N is NaN
  double H = 0.0;
  double D_i = 0.0;
  double D_b = 0.0;
  double D = 0.0;
  double N = std::numeric_limits<double>::quiet_NaN();
  double G = 0.0;
  double A = 0.0;
  double B = 0.0;
  double e_H = 0.0;
  double E_M = 0.0;
  double E_F = 0.0;
  double E_Q = 0.0;
  double flat_inner = 0.0;  // 1/2 int_flat phi ((d-2) q - div'(q F)) w^2, q = d_d Q
  double outer_bulk = 0.0;  // 1/2 int phi d_d^2 Q w^2
  double e_I() const { return flat_inner + E_M + E_F + E_Q; }
  /// max(D, H/r, 1e-12), the scale every identity residual is divided by.
  double scale() const;
};

struct FrequencyConstants {
  double C = 1.0;
  double kappa = 0.5;
  void validate() const;
};

/// Field and coefficient values at one quadrature point.
struct PointSample {
  Point x{0, 0, 0};
  double rho = 0.0;
  double phi = 0.0;   // phi(|x|/r)
  double dphi = 0.0;  // phi'(|x|/r)
  double w = 0.0;
  Point gw{0, 0, 0};
  Mat3 M{};
  std::array<Mat3, 3> dM{};  // dM[k] = d_k M
  double mu = 1.0;
  Point F{0, 0, 0};  // M x / mu
  Mat3 J{};          // J[a][b] = d_b (F - x)_a
  double q = 0.0;    // d_d Q
  Point gq{0, 0, 0};
};

using SampleIntegrand = std::function<double(const PointSample&)>;

/// Samples w and the coefficients once; reports at many radii reuse them.
class FrequencyEvaluator {
 public:
  FrequencyEvaluator(const ScalarField& w, const CoefficientSet& coefficients);
  FrequencyEvaluator(const FrequencyEvaluator&) = delete;
  FrequencyEvaluator& operator=(const FrequencyEvaluator&) = delete;

  /// Throws ValidationError unless 0 < r <= 1.
  FrequencyReport report(double r, const CutoffProfile& cutoff) const;
  /// Step of the r-differences: max(h, r/64). The stencil is five-point centred,
  /// one-sided near r = 0 and r = 1.
  double radial_step(double r) const;
  double height_identity(double r, const CutoffProfile& cutoff) const;
  double outer_assembled(double r, const CutoffProfile& cutoff) const;
  double inner_assembled(double r, const CutoffProfile& cutoff) const;

  double bulk_integral(double r, const CutoffProfile& cutoff, const SampleIntegrand& f) const;
  double flat_integral(double r, const CutoffProfile& cutoff, const SampleIntegrand& f) const;
  /// -int phi'(|x|/r) f(x) dx, which for the sharp profile is r times the
  /// integral of f over the half sphere of radius r.
  double shell_integral(double r, const CutoffProfile& cutoff, const SampleIntegrand& f) const;

  /// Raw quadrature passes calling fn(sample, weight); instantiated only in frequency.cpp.
  template <class Fn>
  void bulk_pass(double r, const CutoffProfile& cutoff, Fn&& fn) const;
  template <class Fn>
  void flat_pass(double r, const CutoffProfile& cutoff, Fn&& fn) const;
  template <class Fn>
  void sphere_pass(double r, Fn&& fn) const;

  const ScalarField& field() const { return w_; }
  const CoefficientSet& coefficients() const { return coeffs_; }

 private:
  void sample(const Point& x, double r, const CutoffProfile& cutoff, PointSample& out) const;

  ScalarField w_;  // owned: samplers below point into it
  CoefficientSet coeffs_;
  int d_;
  CubicSampler ws_;
  std::vector<ScalarField> mfields_;  // M_ab for a <= b, row-major upper triangle
  std::vector<CubicSampler> ms_;
  ScalarField qfield_;
  std::vector<CubicSampler> qs_;
};

FrequencyReport frequency_report(const ScalarField& w, const CoefficientSet& coefficients,
                                 double r, const CutoffProfile& cutoff);

/// |H' - (d-1)H/r - 2B/r - e_H| / scale.
double height_derivative_identity(const ScalarField& w, const CoefficientSet& coefficients,
                                  double r, const CutoffProfile& cutoff);

struct VariationResidual {
  double gateaux = 0.0;  // discrete first variation / scale
  /// Assembled identity residual; NaN when the nonlinearity is on.
  double assembled = std::numeric_limits<double>::quiet_NaN();
  std::string warning;
};

/// Derivative of the discrete energy at t = 0 along w + t phi(|x|/r) w.
double outer_gateaux(const ScalarField& w, const CoefficientSet& coefficients,
                     const NonlinearityModel& nonlinearity, double r, const CutoffProfile& cutoff);

/// Derivative of the discrete energy at eps = 0 along the Q1 pushforward
/// w o T_eps^{-1}, T_eps(x) = x + eps phi(|x|/r) F(x). The value returned is
/// the eps -> 0 limit of the symmetric difference quotient, taken in closed form.
double inner_gateaux(const ScalarField& w, const CoefficientSet& coefficients,
                     const NonlinearityModel& nonlinearity, double r, const CutoffProfile& cutoff);

/// The pushforward itself, node by node, for a finite eps (fixed-point inverse of T_eps).
ScalarField inner_pushforward(const ScalarField& w, const CoefficientSet& coefficients, double r,
                              const CutoffProfile& cutoff, double eps);

VariationResidual outer_variation_identity(const ThinObstacleSolution& solution,
                                           const CoefficientSet& coefficients, double r,
                                           const CutoffProfile& cutoff,
                                           const NonlinearityModel& nonlinearity = {});
VariationResidual inner_variation_identity(const ThinObstacleSolution& solution,
                                           const CoefficientSet& coefficients, double r,
                                           const CutoffProfile& cutoff,
                                           const NonlinearityModel& nonlinearity = {});

struct InequalityRow {
  double r = 0.0;
  // int_flat phi w^2 against 2^{d-1} (8/r int phi w^2 + 4 int phi |w||grad w|)
  double trace_lhs = 0.0;
  double trace_rhs = 0.0;
  bool trace_holds = false;
  // G(r) against int_0^r H
  double height_lhs = 0.0;
  double height_rhs = 0.0;
  double height_constant = 0.0;  // G / int_0^r H
  bool height_holds = false;     // G <= int_0^r H / min mu
  double lower_bound = 0.0;      // r D_i / H
  double bulk_control = 0.0;     // G / (r^2 D_i)
  double boundary_control = 0.0;  // |D / D_i - 1| / r
};

struct InequalityReport {
  std::vector<InequalityRow> rows;
  double min_mu = 1.0;
  bool all_trace = true;
  bool all_height = true;
};

InequalityReport inequality_diagnostics(const ScalarField& w, const CoefficientSet& coefficients,
                                      const std::vector<double>& radii,
                                      const CutoffProfile& cutoff);

struct ScanReport {
  std::vector<double> radii;
  std::vector<double> N;
  std::vector<double> g;  // g(r) at the requested C
  std::vector<double> gamma;  // g(r) / C
  double min_C = 0.0;    // infinity when no C >= 0 works
  bool feasible = true;
  bool truncated = false;  // stopped at the first degenerate radius
  double slack = 1e-3;
  double max_drop = 0.0;  // largest relative decrease of N between neighbours
  double g_at_rmin = 0.0;
  double N0 = std::numeric_limits<double>::quiet_NaN();  // extrapolated N(0+)
  bool monotone_uncorrected = false;  // N nondecreasing within slack with g = 0
};

/// Requires increasing radii. The integrals of H are cumulative trapezoids that
/// start from H(0) = 0.
ScanReport monotonicity_scan(const ScalarField& w, const CoefficientSet& coefficients,
                             const std::vector<double>& radii, const CutoffProfile& cutoff,
                             const FrequencyConstants& constants, double slack = 1e-3);

/// Extrapolates N(0+) by a least-squares line through the smaller half of the samples.
double extrapolate_to_zero(const std::vector<double>& r, const std::vector<double>& N);

struct ErrorBound {
  std::string name;
  std::vector<double> integral;  // bounding integrand, one per radius
  std::vector<double> ratio;     // integral / power form at the fitted kappa
  double C = 0.0;
  double kappa = std::numeric_limits<double>::quiet_NaN();  // NaN when the form has no kappa
  std::vector<double> local_kappa;  // between neighbouring radii, when a kappa form applies
};

struct ErrorReport {
  std::vector<double> radii;
  std::vector<ErrorBound> bounds;  // o1, o2, i1, i2, i3
  /// Cube-wise factor sum_L sup_L(|w| + |grad w|) int_L phi |grad w|^2 per radius,
  /// filled when a decomposition is supplied.
  std::vector<double> cube_factor;
};

ErrorReport error_term_report(const ScalarField& w, const CoefficientSet& coefficients,
                              const std::vector<double>& radii, const CutoffProfile& cutoff,
                              const WhitneyDecomposition* whitney = nullptr);

}  // namespace branchlab
