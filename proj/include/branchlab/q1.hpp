#pragma once

/// Multilinear (Q1) element data on a cell of side h with 2^d Gauss points.

#include <array>
#include <cmath>

namespace branchlab {

struct Q1Element {
  int d = 2;
  int nq = 4;  // quadrature points
  int nc = 4;  // corners
  std::array<std::array<double, 3>, 8> qp{};    // local coordinates in [0,1]^d
  std::array<std::array<double, 8>, 8> N{};     // N[q][corner]
  std::array<std::array<std::array<double, 3>, 8>, 8> dN{};  // dN[q][corner][axis], per unit length
  double qweight = 0.0;                          // h^d / 2^d

  Q1Element(int dim, double h) : d(dim), nq(1 << dim), nc(1 << dim) {
    const double g = 0.5 / std::sqrt(3.0);
    qweight = std::pow(h, d) / nq;
    for (int q = 0; q < nq; ++q) {
      for (int a = 0; a < d; ++a) qp[q][a] = 0.5 + ((q >> a) & 1 ? g : -g);
      for (int c = 0; c < nc; ++c) {
        double v = 1.0;
        std::array<double, 3> f{};
        for (int a = 0; a < d; ++a) f[a] = ((c >> a) & 1) ? qp[q][a] : 1.0 - qp[q][a];
        for (int a = 0; a < d; ++a) v *= f[a];
        N[q][c] = v;
        for (int a = 0; a < d; ++a) {
          double dv = ((c >> a) & 1) ? 1.0 / h : -1.0 / h;
          for (int b = 0; b < d; ++b)
            if (b != a) dv *= f[b];
          dN[q][c][a] = dv;
        }
      }
    }
  }
};

}  // namespace branchlab
