#pragma once

#include <array>
#include <vector>

#include "branchlab/grid.hpp"

namespace branchlab {

using Mat3 = std::array<std::array<double, 3>, 3>;

/// Sparse polynomial in up to three variables.
class Poly {
 public:
  struct Term {
    std::array<int, 3> e{0, 0, 0};
    double c = 0.0;
  };

  Poly() = default;
  explicit Poly(int nvars) : nvars_(nvars) {}

  int nvars() const { return nvars_; }
  const std::vector<Term>& terms() const { return terms_; }
  /// Adds c * x^e, merging with an existing monomial.
  void add(const std::array<int, 3>& e, double c);
  double coeff(const std::array<int, 3>& e) const;
  int degree() const;

  double value(const Point& x) const;
  Point grad(const Point& x) const;
  Mat3 hess(const Point& x) const;
  /// Sum of pure second derivatives.
  double laplacian(const Point& x) const;

 private:
  int nvars_ = 1;
  std::vector<Term> terms_;
};

}  // namespace branchlab
