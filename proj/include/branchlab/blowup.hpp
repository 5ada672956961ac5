#pragma once

/// Homogeneous thin-obstacle solutions of the half plane and the rescalings
/// w(r x) / sqrt(avg height at r) that are compared against them.

#include <string>
#include <vector>

#include "branchlab/grid.hpp"

namespace branchlab {

enum class OracleKind { cos_even, sin_odd, sin_half };

const char* to_string(OracleKind k);
/// Accepts "cos-even", "sin-odd", "sin-half"; throws ValidationError otherwise.
OracleKind parse_oracle_kind(const std::string& s);

/// Sampled checks of one oracle. Coordinates are (x1, x2) with x2 = r sin(theta) >= 0.
struct OracleStatus {
  double harmonic_residual = 0.0;   // max |5-point Laplacian| / max |w| over the sample
  double homogeneity_defect = 0.0;  // max |w(t x) - t^k w(x)| / max |w|
  bool flat_nonnegative = false;    // w >= 0 on the flat part
  bool complementarity = false;     // d_2 w <= 0 on the flat part, = 0 where w > 0
  bool interior_nonnegative = false;
  /// Odd-degree sine modes vanish on the whole flat part and change sign inside;
  /// they are kept but marked as admissible only under the reflection convention.
  bool symmetry_convention = false;
  bool admissible = false;  // harmonic, homogeneous, sign and complementarity
};

class HomogeneousOracle {
 public:
  /// k = 2n (cos-even), 2n - 1 (sin-odd) or 2n - 1/2 (sin-half), n >= 1.
  HomogeneousOracle(OracleKind kind, double k);

  OracleKind kind() const { return kind_; }
  double degree() const { return k_; }
  std::string name() const;

  double value(const Point& x) const;
  /// Exact gradient; zero at the origin.
  Point gradient(const Point& x) const;
  ScalarField sample(GridPtr g) const;
  /// Uses the first two coordinates; a 3-D grid gives the cylindrical extension.
  OracleStatus check(int samples = 400, unsigned seed = 3) const;

 private:
  OracleKind kind_;
  double k_;
};

/// Degrees up to max_degree in all three families.
std::vector<HomogeneousOracle> oracle_catalog(double max_degree = 4.0);

struct RescaleSequence {
  ScalarField source;
  std::vector<double> radii;  // the radii kept, decreasing
  std::vector<double> height;  // r^{1-d} int_{dB_r} w^2 at each kept radius
  std::vector<ScalarField> fields;
  std::vector<double> unit_height;  // same height of each rescaled field at r = 1
  std::vector<double> l2_norm;      // ||w_n||_{L^2(B1+)}
  bool truncated = false;           // stopped at a radius with vanishing height
};

/// Radii must lie in (0, 1] and decrease. Fields are resampled by bicubic
/// Lagrange interpolation of the source at r x for every lattice node x.
RescaleSequence rescale(const ScalarField& w, const std::vector<double>& radii);

struct OracleFit {
  std::string name;
  double degree = 0.0;
  double amplitude = 0.0;
  double misfit = 0.0;  // ||w - a o|| / ||w|| in L^2(B1+)
};

struct BlowupMatch {
  OracleFit best;
  std::vector<OracleFit> fits;
  double N0 = 0.0;  // frequency of the source extrapolated to r = 0
  bool degree_consistent = false;  // |best.degree - N0| <= tol * best.degree
};

/// Throws ValidationError for an empty sequence or empty oracle list.
BlowupMatch classify_blowup(const RescaleSequence& seq, const std::vector<HomogeneousOracle>& oracles,
                            double degree_tol = 0.02);

/// max |d_axis w| / max |grad w| over in-ball nodes; zero for fields that do not
/// depend on that coordinate.
double translation_defect(const ScalarField& w, int axis);

}  // namespace branchlab
