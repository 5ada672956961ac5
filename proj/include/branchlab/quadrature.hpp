#pragma once

/// Radial cutoffs and polar-coordinate quadrature on half balls. Radial panels
/// are aligned with the cutoff breakpoints so the kinks of phi are integrated
/// without smearing.

#include <functional>
#include <vector>

#include "branchlab/grid.hpp"

namespace branchlab {

/// phi = 1 on [0, upsilon], linear down to 0 on [upsilon, 1], 0 beyond.
/// The sharp variant is the indicator of [0, 1].
struct CutoffProfile {
  double upsilon = 0.9;
  bool sharp = false;

  static CutoffProfile smooth(double upsilon);
  static CutoffProfile sharp_limit();

  void validate() const;
  double phi(double s) const;
  double dphi(double s) const;
  /// Radial breakpoints (in units of r) where phi changes formula.
  std::vector<double> breakpoints() const;
};

using PointVisitor = std::function<void(const Point& x, double rho, double weight)>;

/// Visits quadrature points of B_r+ (bulk). `breaks` lists interior radii where
/// the integrand may kink; panels never straddle them. Panel length is at most h.
void visit_half_ball(int d, double r, const std::vector<double>& breaks, double h,
                     const PointVisitor& visit);

/// Visits quadrature points of the flat disk B_r' = {|x'| < r, x_d = 0}.
void visit_flat_disk(int d, double r, const std::vector<double>& breaks, double h,
                     const PointVisitor& visit);

/// Visits quadrature points of the half sphere {|x| = r, x_d > 0}.
void visit_half_sphere(int d, double r, double h, const PointVisitor& visit);

/// Integral of f over B_r' weighted by phi(|x'|/r). Throws ValidationError for r <= 0.
double boundary_integrate_flat(const ScalarField& f, double r, const CutoffProfile& cutoff);

}  // namespace branchlab
