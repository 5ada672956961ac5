#pragma once

/// Stopping-time decomposition of the slab [-1,1]^{d-1} x [0,1] into triadic
/// cubes. A cube stops when the energy or the height of w on its enlarged ball
/// B_L = B_{3l}(a) ∩ B1+ is large compared with a power of its size; cubes
/// that never stop down to the finest generation make up the residual set.
///
/// Generation j has side 3^{1-j}; a cube is named by (j, k) with k integer and
/// occupies prod_a [3^{1-j} k_a, 3^{1-j} (k_a + 1)]. Sons of (j, k) are
/// (j + 1, 3k + m), m in {0,1,2}^d, so nesting is integer arithmetic.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "branchlab/grid.hpp"

namespace branchlab {

enum class CubeClass : std::uint8_t { excess, height, subdivided, residual };

const char* to_string(CubeClass c);

struct WhitneyParams {
  double C0 = 1.0;
  double alpha = 0.25;  // in (0, 1/2)
  int j_max = 4;
  int N0 = 0;       // check (c) only when positive
  double c0 = 0.0;  // check (d) only when positive
  /// Throws ValidationError for bad constants or when 3^{1-j_max} < 4h.
  void validate(const HalfBallGrid& g) const;
};

struct WhitneyCube {
  int j = 1;
  std::array<std::int64_t, 3> k{0, 0, 0};
  CubeClass cls = CubeClass::residual;
  double grad_integral = 0.0;  // int_{B_L} |grad w|^2
  double l2_integral = 0.0;    // int_{B_L} w^2
  std::int64_t parent = -1;    // index into WhitneyDecomposition::cubes

  double side() const;
  double half_side() const { return 0.5 * side(); }
  Point center(int d) const;
  /// Classified or residual: the cubes that tile the slab.
  bool leaf() const { return cls != CubeClass::subdivided; }
  bool classified() const { return cls == CubeClass::excess || cls == CubeClass::height; }
  bool contains(const Point& x, int d) const;
};

struct WhitneyDecomposition {
  int d = 2;
  WhitneyParams params;
  std::vector<WhitneyCube> cubes;         // every cube visited, in breadth-first order
  std::vector<std::size_t> gamma_nodes;  // lattice nodes of B1+ closure in residual cubes
};

WhitneyDecomposition whitney_decompose(const ScalarField& w, const WhitneyParams& params);

struct WhitneyProperties {
  bool cover = false;     // (a) leaves tile the slab exactly once
  std::size_t cover_defects = 0;
  double gamma_sup_w = 0.0;     // (b)
  double gamma_sup_grad = 0.0;
  bool gamma_zero = false;      // both sups within their thresholds
  bool early_generations_empty = true;  // (c), when N0 > 0
  std::size_t center_violations = 0;    // (d), when c0 > 0
  double excess_l2_constant = 0.0;      // (e) max int_{B_H} w^2 / (l^2 int_{B_L} |grad w|^2)
  double excess_energy_constant = 0.0;  // (e) max int_{B_H} |grad w|^2 / int_{B_L} |grad w|^2
  double height_l2_constant = 0.0;      // (f) max int_{B_H} w^2 / int_{B_L} w^2
  double height_energy_constant = 0.0;  // (f) max l^2 int_{B_H} |grad w|^2 / int_{B_L} w^2
  std::size_t excess_count = 0;
  std::size_t height_count = 0;
  std::size_t residual_count = 0;
};

WhitneyProperties check_whitney_properties(const WhitneyDecomposition& dec, const ScalarField& w,
                                           double tau_w, double tau_grad);

struct DoublingFlags {
  double energy_ratio = 0.0;        // int_{B_3r} |grad w|^2 / int_{B_r} |grad w|^2
  double height_by_energy = 0.0;    // int_{B_3r} w^2 / (r^2 int_{B_r} |grad w|^2)
  double energy_by_height = 0.0;    // r^2 int_{B_3r} |grad w|^2 / int_{B_r} w^2
  double height_ratio = 0.0;        // int_{B_3r} w^2 / int_{B_r} w^2
  bool excess_hypotheses = false;   // first two ratios <= C
  bool height_hypotheses = false;   // last two ratios <= C
  bool degenerate = false;          // a denominator vanished
};

/// Balls are intersected with B1+. Throws ValidationError when B_3r(x) misses B1+.
DoublingFlags doubling_predicates(const ScalarField& w, const Point& x, double r, double C);

struct CubeStats {
  double sup_w = 0.0;
  double sup_grad = 0.0;
  double distance_to_origin = 0.0;  // from the closed cube
};

/// Sup norms over the lattice nodes of the closed cube that lie in the closed half ball.
CubeStats cube_stats(const ScalarField& w, const WhitneyCube& cube);

/// JSON tree: parameters, then one record per cube with generation, index,
/// class, parent and both stopping integrals.
void write_whitney_json(const std::string& path, const WhitneyDecomposition& dec);
/// CSV with header x1,...,xd,w of the residual-set nodes.
void write_gamma_csv(const std::string& path, const WhitneyDecomposition& dec, const ScalarField& w);

}  // namespace branchlab
