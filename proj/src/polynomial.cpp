#include "branchlab/polynomial.hpp"

#include <algorithm>
#include <cmath>

namespace branchlab {

namespace {

// x^e and its first two derivatives, with the convention 0^0 = 1.
struct Pow {
  double v, d1, d2;
};

Pow power(double x, int e) {
  if (e == 0) return {1.0, 0.0, 0.0};
  if (e == 1) return {x, 1.0, 0.0};
  const double xm2 = std::pow(x, e - 2);
  return {xm2 * x * x, e * xm2 * x, e * (e - 1) * xm2};
}

}  // namespace

void Poly::add(const std::array<int, 3>& e, double c) {
  for (auto& t : terms_)
    if (t.e == e) {
      t.c += c;
      return;
    }
  terms_.push_back({e, c});
}

double Poly::coeff(const std::array<int, 3>& e) const {
  for (const auto& t : terms_)
    if (t.e == e) return t.c;
  return 0.0;
}

int Poly::degree() const {
  int deg = 0;
  for (const auto& t : terms_)
    if (t.c != 0.0) deg = std::max(deg, t.e[0] + t.e[1] + t.e[2]);
  return deg;
}

double Poly::value(const Point& x) const {
  double s = 0.0;
  for (const auto& t : terms_) {
    double m = t.c;
    for (int a = 0; a < nvars_; ++a) m *= power(x[a], t.e[a]).v;
    s += m;
  }
  return s;
}

Point Poly::grad(const Point& x) const {
  Point g{0, 0, 0};
  for (const auto& t : terms_) {
    std::array<Pow, 3> p{};
    for (int a = 0; a < 3; ++a) p[a] = a < nvars_ ? power(x[a], t.e[a]) : Pow{1.0, 0.0, 0.0};
    g[0] += t.c * p[0].d1 * p[1].v * p[2].v;
    if (nvars_ > 1) g[1] += t.c * p[0].v * p[1].d1 * p[2].v;
    if (nvars_ > 2) g[2] += t.c * p[0].v * p[1].v * p[2].d1;
  }
  return g;
}

Mat3 Poly::hess(const Point& x) const {
  Mat3 H{};
  for (const auto& t : terms_) {
    std::array<Pow, 3> p{};
    for (int a = 0; a < 3; ++a) p[a] = a < nvars_ ? power(x[a], t.e[a]) : Pow{1.0, 0.0, 0.0};
    for (int a = 0; a < nvars_; ++a)
      for (int b = a; b < nvars_; ++b) {
        double m = t.c;
        for (int k = 0; k < 3; ++k) {
          if (k == a && k == b) m *= p[k].d2;
          else if (k == a || k == b) m *= p[k].d1;
          else m *= p[k].v;
        }
        H[a][b] += m;
        if (a != b) H[b][a] += m;
      }
  }
  return H;
}

double Poly::laplacian(const Point& x) const {
  const Mat3 H = hess(x);
  double s = 0.0;
  for (int a = 0; a < nvars_; ++a) s += H[a][a];
  return s;
}

}  // namespace branchlab
