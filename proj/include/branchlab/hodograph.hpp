#pragma once

/// Straightening of a one-phase solution along the level sets of m: v = u o Phi,
/// the vertical inverse w~ of x_d -> v(x', x_d), and its linearisation
/// w = w~ - x_d. Coordinates on the result grid are scaled by delta, so that
/// v(y', s) = u(Phi(delta y', delta s)) / delta.

#include <vector>

#include "branchlab/geometry.hpp"
#include "branchlab/grid.hpp"

namespace branchlab {

struct HodographOptions {
  /// Width of the smoothing layer {u < layer} of the one-phase solver, in the
  /// physical scale of u. Nodes in that layer are ignored by the invertibility
  /// margin and by the boundary gradient of w.
  double layer = 0.0;
  double bisection_tol = 1e-10;
};

struct HodographResult {
  GridPtr grid;
  double delta = 1.0;
  double layer = 0.0;  // smoothing width in the scaled coordinates (layer / delta)
  /// Height below which w is polluted by the layer: layer plus the reach of
  /// the cubic sampler of u (one cell of u's lattice, scaled). Zero without a layer.
  double exclusion = 0.0;
  ScalarField v;
  ScalarField wtilde;
  ScalarField w;
  /// 1 where the node lies in T(B1' x [0,1]); w is extended as a column
  /// constant elsewhere, and columns with no footprint node copy the nearest
  /// column that has one.
  std::vector<char> footprint;
  double margin = 0.0;  // min d_d v over in-disk nodes above the layer
  VectorField grad_w;   // lattice gradient of w
};

/// Throws NumericalError("hodograph not invertible here: ...") listing nodes
/// where d_d v <= 1/2. `flow` must come from flow_for_grid on `grid`.
HodographResult m_hodograph(const ScalarField& u, const FlowMap& flow, const HarmonicExtension& m,
                            GridPtr grid, const HodographOptions& options = {});

/// Gradient of w at a flat node of an in-disk column. Above the layer it is the
/// lattice gradient; at flat nodes it is extrapolated linearly from the first
/// two nodes whose lower neighbour lies above the exclusion height.
Point boundary_gradient_w(const HodographResult& r, std::size_t column);

struct BranchLists {
  std::vector<std::size_t> zero;      // flat nodes with |w| <= tau
  std::vector<std::size_t> singular;  // flat nodes with |w| <= tau and |grad w| <= tau
};

/// Flat nodes strictly inside the unit disk.
BranchLists branch_characterization(const HodographResult& r, double tau);

struct RoundTrip {
  double identity = 0.0;  // max |v(y', w~(y)) - y_d| over footprint nodes
  /// One interpolate-and-invert pass: max |v_rec - v| with v_rec at lattice
  /// heights obtained by inverting the cubic interpolant of w~ columnwise.
  double interpolation = 0.0;
  /// Second pass: max |w~_rec - w~| with w~_rec from inverting the cubic
  /// interpolant of v_rec. Expected within 2 * interpolation.
  double round_trip = 0.0;
  double monotonicity = 0.0;  // min over columns of the increment of x_d + w (must be > 0)
};
RoundTrip check_round_trip(const HodographResult& r, const ScalarField& u, const FlowMap& flow);

/// Flat obstacle, delta = 1: the one-phase energy of u over the preimage of
/// Omega = footprint cap B_R, and the hodograph energy
/// int_Omega (|grad' w|^2 + (d_d w)^2) / (1 + d_d w) + 2 |Omega|. They agree up to
/// quadrature error.
struct EnergyCorrespondence {
  double one_phase = 0.0;
  double hodograph = 0.0;
};
EnergyCorrespondence energy_correspondence(const ScalarField& u, const HodographResult& r,
                                           double R, int sub = 4);

}  // namespace branchlab
