#include "branchlab/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "branchlab/errors.hpp"

namespace branchlab {

namespace {

constexpr double kGauss = 0.57735026918962576451;  // 1/sqrt(3)

// Two-point Gauss rule on panels of length <= max_len covering [a, b].
template <typename F>
void gauss_panels(double a, double b, double max_len, F&& f) {
  if (b <= a) return;
  const int panels = std::max(1, static_cast<int>(std::ceil((b - a) / max_len)));
  const double len = (b - a) / panels;
  for (int p = 0; p < panels; ++p) {
    const double mid = a + (p + 0.5) * len;
    f(mid - 0.5 * len * kGauss, 0.5 * len);
    f(mid + 0.5 * len * kGauss, 0.5 * len);
  }
}

std::vector<double> radial_nodes(double r, const std::vector<double>& breaks) {
  std::vector<double> cuts{0.0};
  for (double b : breaks)
    if (b > 0.0 && b < r) cuts.push_back(b);
  cuts.push_back(r);
  std::sort(cuts.begin(), cuts.end());
  return cuts;
}

}  // namespace

CutoffProfile CutoffProfile::smooth(double upsilon) {
  CutoffProfile c;
  c.upsilon = upsilon;
  c.validate();
  return c;
}

CutoffProfile CutoffProfile::sharp_limit() {
  CutoffProfile c;
  c.upsilon = 1.0;
  c.sharp = true;
  return c;
}

void CutoffProfile::validate() const {
  if (sharp) return;
  if (!(upsilon > 0.5 && upsilon < 1.0))
    throw ValidationError("cutoff plateau must lie in (1/2, 1)");
}

double CutoffProfile::phi(double s) const {
  if (s <= upsilon) return 1.0;
  if (sharp || s >= 1.0) return 0.0;
  return (1.0 - s) / (1.0 - upsilon);
}

double CutoffProfile::dphi(double s) const {
  if (sharp || s <= upsilon || s >= 1.0) return 0.0;
  return -1.0 / (1.0 - upsilon);
}

std::vector<double> CutoffProfile::breakpoints() const {
  if (sharp) return {};
  return {upsilon};
}

void visit_half_ball(int d, double r, const std::vector<double>& breaks, double h,
                     const PointVisitor& visit) {
  const auto cuts = radial_nodes(r, breaks);
  const double pi = std::numbers::pi;
  for (std::size_t s = 0; s + 1 < cuts.size(); ++s) {
    gauss_panels(cuts[s], cuts[s + 1], h, [&](double rho, double wr) {
      if (d == 2) {
        gauss_panels(0.0, pi, h / std::max(r, h), [&](double th, double wt) {
          visit({rho * std::cos(th), rho * std::sin(th), 0.0}, rho, wr * wt * rho);
        });
      } else {
        const int naz = std::max(16, static_cast<int>(std::ceil(2.0 * pi * r / h)));
        const double waz = 2.0 * pi / naz;
        gauss_panels(0.0, 0.5 * pi, h / std::max(r, h), [&](double beta, double wb) {
          const double sb = std::sin(beta), cb = std::cos(beta);
          for (int k = 0; k < naz; ++k) {
            const double al = (k + 0.5) * waz;
            visit({rho * sb * std::cos(al), rho * sb * std::sin(al), rho * cb}, rho,
                  wr * wb * waz * rho * rho * sb);
          }
        });
      }
    });
  }
}

void visit_flat_disk(int d, double r, const std::vector<double>& breaks, double h,
                     const PointVisitor& visit) {
  const auto cuts = radial_nodes(r, breaks);
  const double pi = std::numbers::pi;
  for (std::size_t s = 0; s + 1 < cuts.size(); ++s) {
    gauss_panels(cuts[s], cuts[s + 1], h, [&](double rho, double wr) {
      if (d == 2) {
        visit({rho, 0.0, 0.0}, rho, wr);
        visit({-rho, 0.0, 0.0}, rho, wr);
      } else {
        const int naz = std::max(16, static_cast<int>(std::ceil(2.0 * pi * r / h)));
        const double waz = 2.0 * pi / naz;
        for (int k = 0; k < naz; ++k) {
          const double al = (k + 0.5) * waz;
          visit({rho * std::cos(al), rho * std::sin(al), 0.0}, rho, wr * waz * rho);
        }
      }
    });
  }
}

void visit_half_sphere(int d, double r, double h, const PointVisitor& visit) {
  const double pi = std::numbers::pi;
  if (d == 2) {
    gauss_panels(0.0, pi, h / std::max(r, h), [&](double th, double wt) {
      visit({r * std::cos(th), r * std::sin(th), 0.0}, r, wt * r);
    });
    return;
  }
  const int naz = std::max(16, static_cast<int>(std::ceil(2.0 * pi * r / h)));
  const double waz = 2.0 * pi / naz;
  gauss_panels(0.0, 0.5 * pi, h / std::max(r, h), [&](double beta, double wb) {
    const double sb = std::sin(beta), cb = std::cos(beta);
    for (int k = 0; k < naz; ++k) {
      const double al = (k + 0.5) * waz;
      visit({r * sb * std::cos(al), r * sb * std::sin(al), r * cb}, r, wb * waz * r * r * sb);
    }
  });
}

double boundary_integrate_flat(const ScalarField& f, double r, const CutoffProfile& cutoff) {
  if (!(r > 0.0)) throw ValidationError("flat-boundary radius must be positive");
  cutoff.validate();
  const CubicSampler s(f);
  std::vector<double> breaks;
  for (double b : cutoff.breakpoints()) breaks.push_back(b * r);
  double total = 0.0;
  visit_flat_disk(f.grid->dim(), r, breaks, f.grid->h(), [&](const Point& x, double rho, double w) {
    total += w * cutoff.phi(rho / r) * s.value(x);
  });
  return total;
}

}  // namespace branchlab
