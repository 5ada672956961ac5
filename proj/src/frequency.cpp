#include "branchlab/frequency.hpp"

#include <algorithm>
#include <cmath>

#include "branchlab/errors.hpp"
#include "branchlab/whitney.hpp"

namespace branchlab {

namespace {

constexpr double kTiny = 1e-30;

double dot(const Point& a, const Point& b, int d) {
  double s = 0.0;
  for (int k = 0; k < d; ++k) s += a[k] * b[k];
  return s;
}

Point mat_vec(const Mat3& M, const Point& p, int d) {
  Point out{0, 0, 0};
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < d; ++b) out[a] += M[a][b] * p[b];
  return out;
}

double norm(const Point& p, int d) { return std::sqrt(dot(p, p, d)); }

std::vector<double> absolute_breaks(const CutoffProfile& cutoff, double r) {
  std::vector<double> out;
  for (double b : cutoff.breakpoints()) out.push_back(b * r);
  return out;
}

void check_radius(double r) {
  if (!(r > 0.0 && r <= 1.0)) throw ValidationError("frequency radius must lie in (0, 1]");
}

// Five-point centred difference of f at r; one-sided fourth order when the
// stencil would leave (0, 1].
template <class Fn>
double radial_derivative(Fn&& f, double r, double dr) {
  if (r + 2.0 * dr <= 1.0 + 1e-12 && r - 2.0 * dr > 0.0)
    return (f(r - 2.0 * dr) - 8.0 * f(r - dr) + 8.0 * f(r + dr) - f(r + 2.0 * dr)) / (12.0 * dr);
  if (r + 2.0 * dr > 1.0 + 1e-12)
    return (25.0 * f(r) - 48.0 * f(r - dr) + 36.0 * f(r - 2.0 * dr) - 16.0 * f(r - 3.0 * dr) +
            3.0 * f(r - 4.0 * dr)) / (12.0 * dr);
  return (-25.0 * f(r) + 48.0 * f(r + dr) - 36.0 * f(r + 2.0 * dr) + 16.0 * f(r + 3.0 * dr) -
          3.0 * f(r + 4.0 * dr)) / (12.0 * dr);
}

}  // namespace

double FrequencyReport::scale() const { return std::max({D, H / r, 1e-12}); }

void FrequencyConstants::validate() const {
  if (!(C >= 0.0 && std::isfinite(C))) throw ValidationError("frequency constant C must be finite and nonnegative");
  if (!(kappa > 0.0 && kappa < 1.0)) throw ValidationError("frequency exponent kappa must lie in (0, 1)");
}

FrequencyEvaluator::FrequencyEvaluator(const ScalarField& w, const CoefficientSet& coefficients)
    : w_(w), coeffs_(coefficients), d_(w.grid->dim()), ws_(w_) {
  if (!coefficients.grid || !(*coefficients.grid == *w.grid))
    throw ValidationError("incompatible grids");
  if (coeffs_.identity) return;
  const GridPtr g = w.grid;
  for (int a = 0; a < d_; ++a)
    for (int b = a; b < d_; ++b) mfields_.push_back(ScalarField{g, coeffs_.M[a][b]});
  for (const ScalarField& f : mfields_) ms_.emplace_back(f);
  const VectorField gq = gradient(ScalarField{g, coeffs_.Q});
  qfield_ = ScalarField{g, gq.comp[d_ - 1]};
  qs_.emplace_back(qfield_);
}

void FrequencyEvaluator::sample(const Point& x, double r, const CutoffProfile& cutoff,
                                PointSample& s) const {
  const int d = d_;
  s.x = x;
  s.rho = norm(x, d);
  s.phi = cutoff.phi(s.rho / r);
  s.dphi = cutoff.dphi(s.rho / r);
  s.w = ws_.value_grad(x, s.gw);
  s.M = Mat3{};
  s.dM = {};
  s.J = Mat3{};
  if (coeffs_.identity) {
    for (int a = 0; a < d; ++a) s.M[a][a] = 1.0;
    s.mu = 1.0;
    s.F = x;
    s.q = 0.0;
    s.gq = {0, 0, 0};
    return;
  }
  int t = 0;
  for (int a = 0; a < d; ++a)
    for (int b = a; b < d; ++b, ++t) {
      Point g;
      const double v = ms_[t].value_grad(x, g);
      s.M[a][b] = s.M[b][a] = v;
      for (int k = 0; k < d; ++k) s.dM[k][a][b] = s.dM[k][b][a] = g[k];
    }
  s.q = qs_[0].value_grad(x, s.gq);
  const double rho2 = s.rho * s.rho;
  if (rho2 <= 0.0) {
    s.mu = s.M[d - 1][d - 1];
    s.F = {0, 0, 0};
    return;
  }
  const Point Mx = mat_vec(s.M, x, d);
  s.mu = dot(x, Mx, d) / rho2;
  Point dmu{0, 0, 0};
  for (int b = 0; b < d; ++b) {
    double xdx = 0.0;
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) xdx += s.dM[b][i][j] * x[i] * x[j];
    dmu[b] = (xdx + 2.0 * Mx[b]) / rho2 - 2.0 * x[b] * s.mu / rho2;
  }
  for (int a = 0; a < d; ++a) {
    s.F[a] = Mx[a] / s.mu;
    for (int b = 0; b < d; ++b) {
      double dMx = s.M[a][b];
      for (int c = 0; c < d; ++c) dMx += s.dM[b][a][c] * x[c];
      s.J[a][b] = dMx / s.mu - Mx[a] * dmu[b] / (s.mu * s.mu) - (a == b ? 1.0 : 0.0);
    }
  }
}

template <class Fn>
void FrequencyEvaluator::bulk_pass(double r, const CutoffProfile& cutoff, Fn&& fn) const {
  PointSample s;
  visit_half_ball(d_, r, absolute_breaks(cutoff, r), w_.grid->h(),
                  [&](const Point& x, double, double wt) {
                    sample(x, r, cutoff, s);
                    fn(s, wt);
                  });
}

template <class Fn>
void FrequencyEvaluator::flat_pass(double r, const CutoffProfile& cutoff, Fn&& fn) const {
  PointSample s;
  visit_flat_disk(d_, r, absolute_breaks(cutoff, r), w_.grid->h(),
                  [&](const Point& x, double, double wt) {
                    sample(x, r, cutoff, s);
                    fn(s, wt);
                  });
}

template <class Fn>
void FrequencyEvaluator::sphere_pass(double r, Fn&& fn) const {
  PointSample s;
  const CutoffProfile sharp = CutoffProfile::sharp_limit();
  visit_half_sphere(d_, r, w_.grid->h(), [&](const Point& x, double, double wt) {
    sample(x, r, sharp, s);
    fn(s, wt);
  });
}

double FrequencyEvaluator::bulk_integral(double r, const CutoffProfile& cutoff,
                                         const SampleIntegrand& f) const {
  check_radius(r);
  cutoff.validate();
  double total = 0.0;
  bulk_pass(r, cutoff, [&](const PointSample& s, double wt) { total += wt * f(s); });
  return total;
}

double FrequencyEvaluator::flat_integral(double r, const CutoffProfile& cutoff,
                                         const SampleIntegrand& f) const {
  check_radius(r);
  cutoff.validate();
  double total = 0.0;
  flat_pass(r, cutoff, [&](const PointSample& s, double wt) { total += wt * f(s); });
  return total;
}

double FrequencyEvaluator::shell_integral(double r, const CutoffProfile& cutoff,
                                          const SampleIntegrand& f) const {
  check_radius(r);
  cutoff.validate();
  double total = 0.0;
  if (cutoff.sharp) {
    sphere_pass(r, [&](const PointSample& s, double wt) { total += wt * r * f(s); });
  } else {
    bulk_pass(r, cutoff, [&](const PointSample& s, double wt) {
      if (s.dphi != 0.0) total -= wt * s.dphi * f(s);
    });
  }
  return total;
}

FrequencyReport FrequencyEvaluator::report(double r, const CutoffProfile& cutoff) const {
  check_radius(r);
  cutoff.validate();
  const int d = d_;
  FrequencyReport rep;
  rep.r = r;

  // Integrands of the shell terms H, A, B and r e_H.
  auto shell_terms = [&](const PointSample& s, double weight) {
    const Point Mg = mat_vec(s.M, s.gw, d);
    const double mgx = dot(Mg, s.x, d) / s.rho;
    rep.H += weight * s.mu * s.w * s.w / s.rho;
    rep.A += weight * s.rho * mgx * mgx / s.mu;
    rep.B += weight * s.w * mgx;
    double c = 0.0;
    if (!coeffs_.identity) {
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) c += s.dM[i][i][j] * s.x[j];
      for (int i = 0; i < d; ++i) c += s.M[i][i] - 1.0;
      c -= d * (s.mu - 1.0);
      c /= s.rho * s.rho;
    }
    rep.e_H += weight * s.rho * s.w * s.w * c;
  };

  bulk_pass(r, cutoff, [&](const PointSample& s, double wt) {
    if (s.phi > 0.0) {
      const Point Mg = mat_vec(s.M, s.gw, d);
      const double energy = dot(Mg, s.gw, d);
      rep.D_i += wt * s.phi * energy;
      rep.G += wt * s.phi * s.w * s.w;
      if (!coeffs_.identity) {
        double em = 0.0;
        for (int k = 0; k < d; ++k) {
          double quad = 0.0;
          for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) quad += s.dM[k][i][j] * s.gw[i] * s.gw[j];
          em += quad * s.F[k];
        }
        rep.E_M += wt * s.phi * em;
        double divJ = 0.0, jterm = 0.0;
        for (int a = 0; a < d; ++a) {
          divJ += s.J[a][a];
          for (int b = 0; b < d; ++b) jterm += s.gw[a] * s.J[a][b] * Mg[b];
        }
        rep.E_F += wt * s.phi * (energy * divJ - 2.0 * jterm);
        const double dq = s.gq[d - 1];
        rep.E_Q += wt * s.phi * dq * s.w * dot(s.F, s.gw, d);
        rep.outer_bulk += 0.5 * wt * s.phi * dq * s.w * s.w;
      }
    }
    if (s.dphi != 0.0) shell_terms(s, -wt * s.dphi);
  });
  if (cutoff.sharp) sphere_pass(r, [&](const PointSample& s, double wt) { shell_terms(s, wt * r); });
  rep.e_H /= r;

  if (!coeffs_.identity) {
    flat_pass(r, cutoff, [&](const PointSample& s, double wt) {
      if (s.phi <= 0.0) return;
      double div = 0.0;
      for (int a = 0; a + 1 < d; ++a) div += s.gq[a] * s.F[a] + s.q * (s.J[a][a] + 1.0);
      rep.D_b -= 0.5 * wt * s.phi * s.q * s.w * s.w;
      rep.flat_inner += 0.5 * wt * s.phi * ((d - 2) * s.q - div) * s.w * s.w;
    });
  }
  rep.D = rep.D_i + rep.D_b;
  rep.degenerate = !(rep.H > kTiny);
  if (!rep.degenerate) rep.N = r * rep.D / rep.H;
  return rep;
}

double FrequencyEvaluator::radial_step(double r) const { return std::max(w_.grid->h(), r / 64.0); }

double FrequencyEvaluator::height_identity(double r, const CutoffProfile& cutoff) const {
  const FrequencyReport rep = report(r, cutoff);
  const double Hp = radial_derivative([&](double s) { return report(s, cutoff).H; }, r, radial_step(r));
  const int d = d_;
  return std::abs(Hp - (d - 1) * rep.H / r - 2.0 * rep.B / r - rep.e_H) / rep.scale();
}

double FrequencyEvaluator::outer_assembled(double r, const CutoffProfile& cutoff) const {
  const FrequencyReport rep = report(r, cutoff);
  return std::abs(rep.D - rep.B / r - rep.outer_bulk) / rep.scale();
}

double FrequencyEvaluator::inner_assembled(double r, const CutoffProfile& cutoff) const {
  const FrequencyReport rep = report(r, cutoff);
  const double Dp = radial_derivative([&](double s) { return report(s, cutoff).D; }, r, radial_step(r));
  const int d = d_;
  return std::abs((d - 2) * rep.D - r * Dp + 2.0 * rep.A / r + rep.e_I()) / rep.scale();
}

FrequencyReport frequency_report(const ScalarField& w, const CoefficientSet& coefficients, double r,
                                 const CutoffProfile& cutoff) {
  return FrequencyEvaluator(w, coefficients).report(r, cutoff);
}

double height_derivative_identity(const ScalarField& w, const CoefficientSet& coefficients,
                                  double r, const CutoffProfile& cutoff) {
  return FrequencyEvaluator(w, coefficients).height_identity(r, cutoff);
}

double outer_gateaux(const ScalarField& w, const CoefficientSet& coefficients,
                     const NonlinearityModel& nonlinearity, double r, const CutoffProfile& cutoff) {
  check_radius(r);
  cutoff.validate();
  require_same_grid(w, ScalarField{coefficients.grid, {}});
  const ThinObstacleEnergy energy(coefficients, nonlinearity);
  std::vector<double> grad;
  energy.value(w.values, &grad);
  const HalfBallGrid& g = *w.grid;
  double total = 0.0;
  for (std::size_t i = 0; i < g.node_count(); ++i) {
    const double psi = cutoff.phi(std::sqrt(norm2(g.node_coord(i))) / r);
    if (psi > 0.0) total += grad[i] * psi * w[i];
  }
  return total;
}

double inner_gateaux(const ScalarField& w, const CoefficientSet& coefficients,
                     const NonlinearityModel& nonlinearity, double r, const CutoffProfile& cutoff) {
  check_radius(r);
  cutoff.validate();
  require_same_grid(w, ScalarField{coefficients.grid, {}});
  const ThinObstacleEnergy energy(coefficients, nonlinearity);
  std::vector<double> grad;
  energy.value(w.values, &grad);
  const HalfBallGrid& g = *w.grid;
  const int d = g.dim();
  const double h = g.h();
  double total = 0.0;
  for (std::size_t i = 0; i < g.node_count(); ++i) {
    const Point x = g.node_coord(i);
    const double psi = cutoff.phi(std::sqrt(norm2(x)) / r);
    if (psi <= 0.0) continue;
    // The symmetric quotient averages the two one-sided Q1 slopes at the node,
    // which is the centred lattice difference.
    const Index idx = g.node_multi(i);
    double eta = 0.0;
    for (int a = 0; a < d; ++a) {
      const double v = psi * coefficients.F[a][i];
      if (v == 0.0) continue;
      const bool lo = idx[a] > 0, hi = idx[a] + 1 < g.node_extent(a);
      const double wl = lo ? w[i - g.stride(a)] : w[i];
      const double wh = hi ? w[i + g.stride(a)] : w[i];
      const double span = ((lo ? 1 : 0) + (hi ? 1 : 0)) * h;
      eta -= v * (wh - wl) / span;
    }
    total += grad[i] * eta;
  }
  return total;
}

ScalarField inner_pushforward(const ScalarField& w, const CoefficientSet& coefficients, double r,
                              const CutoffProfile& cutoff, double eps) {
  check_radius(r);
  cutoff.validate();
  const HalfBallGrid& g = *w.grid;
  const int d = g.dim();
  std::array<ScalarField, 3> F;
  for (int a = 0; a < d; ++a) F[a] = ScalarField{w.grid, coefficients.F[a]};
  ScalarField out = w;
  for (std::size_t i = 0; i < g.node_count(); ++i) {
    const Point y = g.node_coord(i);
    if (std::sqrt(norm2(y)) >= r) continue;  // T_eps fixes the complement of B_r
    Point x = y;
    for (int it = 0; it < 100; ++it) {
      const double psi = cutoff.phi(std::sqrt(norm2(x)) / r);
      Point next = y;
      for (int a = 0; a < d; ++a) next[a] -= eps * psi * linear_sample(F[a], x);
      double move = 0.0;
      for (int a = 0; a < d; ++a) move = std::max(move, std::abs(next[a] - x[a]));
      x = next;
      if (move < 1e-15) break;
    }
    out[i] = linear_sample(w, x);
  }
  return out;
}

namespace {

VariationResidual variation(const ThinObstacleSolution& solution, const CoefficientSet& coefficients,
                            double r, const CutoffProfile& cutoff, const NonlinearityModel& nonlin,
                            bool inner) {
  const FrequencyEvaluator ev(solution.w, coefficients);
  const FrequencyReport rep = ev.report(r, cutoff);
  VariationResidual out;
  const double raw = inner ? inner_gateaux(solution.w, coefficients, nonlin, r, cutoff)
                           : outer_gateaux(solution.w, coefficients, nonlin, r, cutoff);
  out.gateaux = std::abs(raw) / rep.scale();
  if (!nonlin.enabled)
    out.assembled = inner ? ev.inner_assembled(r, cutoff) : ev.outer_assembled(r, cutoff);
  if (solution.residual > 1e-6)
    out.warning = "solution residual " + std::to_string(solution.residual) +
                  " exceeds 1e-6; the first variation need not vanish";
  return out;
}

}  // namespace

VariationResidual outer_variation_identity(const ThinObstacleSolution& solution,
                                           const CoefficientSet& coefficients, double r,
                                           const CutoffProfile& cutoff,
                                           const NonlinearityModel& nonlinearity) {
  return variation(solution, coefficients, r, cutoff, nonlinearity, false);
}

VariationResidual inner_variation_identity(const ThinObstacleSolution& solution,
                                           const CoefficientSet& coefficients, double r,
                                           const CutoffProfile& cutoff,
                                           const NonlinearityModel& nonlinearity) {
  return variation(solution, coefficients, r, cutoff, nonlinearity, true);
}

InequalityReport inequality_diagnostics(const ScalarField& w, const CoefficientSet& coefficients,
                                      const std::vector<double>& radii,
                                      const CutoffProfile& cutoff) {
  cutoff.validate();
  const FrequencyEvaluator ev(w, coefficients);
  const int d = w.grid->dim();
  InequalityReport out;
  // int_0^r H(rho) d rho = int mu w^2 K(|x|/r), K(t) = int_t^inf -phi'(s) / s^2 ds.
  auto kernel = [&](double t) {
    if (t >= 1.0) return 0.0;
    if (cutoff.sharp) return 1.0;
    return (1.0 / std::max(t, cutoff.upsilon) - 1.0) / (1.0 - cutoff.upsilon);
  };
  double min_mu = std::numeric_limits<double>::infinity();
  for (double r : radii) {
    InequalityRow row;
    row.r = r;
    double G = 0.0, wgw = 0.0, hint = 0.0;
    ev.bulk_pass(r, cutoff, [&](const PointSample& s, double wt) {
      const double gn = norm(s.gw, d);
      G += wt * s.phi * s.w * s.w;
      wgw += wt * s.phi * std::abs(s.w) * gn;
      hint += wt * s.mu * s.w * s.w * kernel(s.rho / r);
      min_mu = std::min(min_mu, s.mu);
    });
    row.trace_lhs = ev.flat_integral(r, cutoff, [](const PointSample& s) { return s.phi * s.w * s.w; });
    row.trace_rhs = std::pow(2.0, d - 1) * (8.0 / r * G + 4.0 * wgw);
    row.trace_holds = row.trace_lhs <= row.trace_rhs * (1.0 + 1e-9) + kTiny;
    const FrequencyReport rep = ev.report(r, cutoff);
    row.height_lhs = G;
    row.height_rhs = hint;
    row.height_constant = hint > kTiny ? G / hint : std::numeric_limits<double>::quiet_NaN();
    row.height_holds = G <= hint / min_mu * (1.0 + 1e-9) + kTiny;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    row.lower_bound = rep.H > kTiny ? r * rep.D_i / rep.H : nan;
    row.bulk_control = rep.D_i > kTiny ? G / (r * r * rep.D_i) : nan;
    row.boundary_control = rep.D_i > kTiny ? std::abs(rep.D / rep.D_i - 1.0) / r : nan;
    out.all_trace = out.all_trace && row.trace_holds;
    out.all_height = out.all_height && row.height_holds;
    out.rows.push_back(row);
  }
  out.min_mu = std::isfinite(min_mu) ? min_mu : 1.0;
  return out;
}

double extrapolate_to_zero(const std::vector<double>& r, const std::vector<double>& N) {
  const std::size_t n = std::min(r.size(), N.size());
  if (n == 0) return std::numeric_limits<double>::quiet_NaN();
  if (n == 1) return N[0];
  const std::size_t m = std::max<std::size_t>(2, (n + 1) / 2);
  double sr = 0, sn = 0, srr = 0, srn = 0;
  for (std::size_t k = 0; k < m; ++k) {
    sr += r[k];
    sn += N[k];
    srr += r[k] * r[k];
    srn += r[k] * N[k];
  }
  const double det = m * srr - sr * sr;
  if (std::abs(det) < 1e-300) return sn / m;
  const double slope = (m * srn - sr * sn) / det;
  return (sn - slope * sr) / m;
}

ScanReport monotonicity_scan(const ScalarField& w, const CoefficientSet& coefficients,
                             const std::vector<double>& radii, const CutoffProfile& cutoff,
                             const FrequencyConstants& constants, double slack) {
  constants.validate();
  cutoff.validate();
  for (std::size_t k = 1; k < radii.size(); ++k)
    if (!(radii[k] > radii[k - 1])) throw ValidationError("scan radii must increase");
  const FrequencyEvaluator ev(w, coefficients);
  ScanReport out;
  out.slack = slack;
  std::vector<double> D, Di, H;
  for (double r : radii) {
    const FrequencyReport rep = ev.report(r, cutoff);
    if (rep.degenerate) {
      out.truncated = true;
      break;
    }
    out.radii.push_back(r);
    out.N.push_back(rep.N);
    D.push_back(rep.D);
    Di.push_back(rep.D_i);
    H.push_back(rep.H);
  }
  const std::size_t n = out.radii.size();
  if (n == 0) {
    out.feasible = false;
    out.min_C = std::numeric_limits<double>::infinity();
    return out;
  }
  const double kappa = constants.kappa;
  double intH = 0.0, intHD = 0.0, prev_r = 0.0, prev_H = 0.0, prev_HD = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double r = out.radii[k];
    const double HD = D[k] > kTiny ? H[k] / D[k] : 0.0;
    intH += 0.5 * (r - prev_r) * (H[k] + prev_H);
    intHD += 0.5 * (r - prev_r) * (HD + prev_HD);
    prev_r = r;
    prev_H = H[k];
    prev_HD = HD;
    const double gamma = (std::pow(r, kappa) + std::pow(std::max(D[k], 0.0), kappa)) / kappa -
                         (Di[k] > kTiny ? intH / Di[k] : 0.0) + intHD;
    out.gamma.push_back(gamma);
    out.g.push_back(constants.C * gamma);
  }
  out.g_at_rmin = out.g.front();

  double lower = 0.0, upper = std::numeric_limits<double>::infinity();
  bool ok = true;
  out.monotone_uncorrected = true;
  for (std::size_t k = 0; k + 1 < n; ++k) {
    const double a = std::max(out.N[k], kTiny), b = std::max(out.N[k + 1], kTiny);
    const double need = std::log(a) - std::log(b) - slack;
    const double dg = out.gamma[k + 1] - out.gamma[k];
    out.max_drop = std::max(out.max_drop, (a - b) / a);
    if (need > 0.0) out.monotone_uncorrected = false;
    if (dg > 0.0) {
      lower = std::max(lower, need / dg);
    } else if (dg < 0.0) {
      upper = std::min(upper, need / dg);
    } else if (need > 0.0) {
      ok = false;
    }
  }
  out.feasible = ok && lower <= upper;
  out.min_C = out.feasible ? lower : std::numeric_limits<double>::infinity();
  out.N0 = extrapolate_to_zero(out.radii, out.N);
  return out;
}

ErrorReport error_term_report(const ScalarField& w, const CoefficientSet& coefficients,
                              const std::vector<double>& radii, const CutoffProfile& cutoff,
                              const WhitneyDecomposition* whitney) {
  cutoff.validate();
  const FrequencyEvaluator ev(w, coefficients);
  const int d = w.grid->dim();
  ErrorReport out;
  out.radii = radii;
  const std::size_t n = radii.size();
  std::vector<double> Di(n), D(n), H(n), Dip(n);
  std::array<std::vector<double>, 5> I;
  for (auto& v : I) v.assign(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    const double r = radii[k];
    const FrequencyReport rep = ev.report(r, cutoff);
    Di[k] = rep.D_i;
    D[k] = rep.D;
    H[k] = rep.H;
    Dip[k] = radial_derivative([&](double s) { return ev.report(s, cutoff).D_i; }, r, ev.radial_step(r));
    double o1 = 0, i1 = 0, i2 = 0;
    ev.bulk_pass(r, cutoff, [&](const PointSample& s, double wt) {
      if (s.phi <= 0.0) return;
      const double g = norm(s.gw, d), a = std::abs(s.w);
      o1 += wt * s.phi * (a * g * g + g * g * g);
      i1 += wt * s.phi * (g * g + a * g);
      i2 += wt * s.phi * (g * g * g + a * g * g + a * a * g);
    });
    const double o2 = ev.shell_integral(r, cutoff, [&](const PointSample& s) {
      const double g = norm(s.gw, d), a = std::abs(s.w);
      return a * a * g + a * g * g;
    });
    const double i3 = ev.shell_integral(r, cutoff, [&](const PointSample& s) {
      const double g = norm(s.gw, d), a = std::abs(s.w);
      return s.rho * (g * g * g + a * g * g + a * a * g);
    });
    I[0][k] = o1;
    I[1][k] = o2 / r;
    I[2][k] = r * i1;
    I[3][k] = i2;
    I[4][k] = i3 / r;
  }

  using Form = std::function<double(std::size_t, double)>;
  const std::array<std::string, 5> names{"E_o1", "E_o2", "E_i1", "E_i2", "E_i3"};
  const std::array<Form, 5> forms{
      Form([&](std::size_t k, double kap) { return std::pow(Di[k], 1.0 + kap); }),
      Form([&](std::size_t k, double kap) {
        return std::sqrt(std::max(H[k] * std::pow(Di[k], 2.0 * kap) * Dip[k], 0.0));
      }),
      Form([&](std::size_t k, double) { return radii[k] * Di[k]; }),
      Form([&](std::size_t k, double kap) { return std::pow(Di[k], 1.0 + kap); }),
      Form([&](std::size_t k, double kap) {
        return radii[k] * (std::pow(Di[k], kap) * Dip[k] + std::pow(std::max(D[k], 0.0), 1.0 + kap));
      })};
  const std::array<bool, 5> has_kappa{true, true, false, true, true};

  for (int t = 0; t < 5; ++t) {
    ErrorBound b;
    b.name = names[t];
    b.integral = I[t];
    // Pick kappa on a grid by the smallest spread of log(integral / form).
    auto spread = [&](double kap, double& cmax) {
      double s1 = 0, s2 = 0;
      int m = 0;
      cmax = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const double f = forms[t](k, kap);
        if (!(I[t][k] > kTiny && f > kTiny)) continue;
        const double l = std::log(I[t][k] / f);
        s1 += l;
        s2 += l * l;
        ++m;
        cmax = std::max(cmax, I[t][k] / f);
      }
      if (m == 0) return std::numeric_limits<double>::infinity();
      return s2 / m - (s1 / m) * (s1 / m);
    };
    double best = std::numeric_limits<double>::infinity(), kap_best = 0.5, c_best = 0.0;
    if (has_kappa[t]) {
      for (int j = 1; j < 100; ++j) {
        double c;
        const double v = spread(0.01 * j, c);
        if (v < best) {
          best = v;
          kap_best = 0.01 * j;
          c_best = c;
        }
      }
      if (std::isfinite(best)) b.kappa = kap_best;
    } else {
      spread(0.0, c_best);
    }
    b.C = c_best;
    for (std::size_t k = 0; k < n; ++k) {
      const double f = forms[t](k, has_kappa[t] ? kap_best : 0.0);
      b.ratio.push_back(f > kTiny ? I[t][k] / f : 0.0);
    }
    if (t == 0 || t == 3)
      for (std::size_t k = 0; k + 1 < n; ++k) {
        const double lr = std::log(Di[k + 1] / Di[k]);
        b.local_kappa.push_back(I[t][k] > kTiny && I[t][k + 1] > kTiny && std::abs(lr) > 0.0
                                    ? std::log(I[t][k + 1] / I[t][k]) / lr - 1.0
                                    : std::numeric_limits<double>::quiet_NaN());
      }
    out.bounds.push_back(std::move(b));
  }

  if (whitney) {
    // Finest-generation cell -> leaf cube, then one pass per radius.
    const int jm = whitney->params.j_max;
    const double fs = std::pow(3.0, 1 - jm);
    const std::int64_t n1 = static_cast<std::int64_t>(std::llround(1.0 / fs));
    const std::int64_t nx = 2 * n1, ny = d == 3 ? 2 * n1 : 1, nz = n1;
    std::vector<std::int64_t> leaf_of(static_cast<std::size_t>(nx * ny * nz), -1);
    std::vector<CubeStats> stats(whitney->cubes.size());
    for (std::size_t c = 0; c < whitney->cubes.size(); ++c) {
      const WhitneyCube& L = whitney->cubes[c];
      if (!L.leaf()) continue;
      stats[c] = cube_stats(w, L);
      std::int64_t f = 1;
      for (int t = L.j; t < jm; ++t) f *= 3;
      for (std::int64_t x = L.k[0] * f + n1; x < (L.k[0] + 1) * f + n1; ++x)
        for (std::int64_t y = d == 3 ? L.k[1] * f + n1 : 0; y < (d == 3 ? (L.k[1] + 1) * f + n1 : 1); ++y)
          for (std::int64_t z = L.k[d - 1] * f; z < (L.k[d - 1] + 1) * f; ++z)
            if (x >= 0 && x < nx && y >= 0 && y < ny && z >= 0 && z < nz)
              leaf_of[static_cast<std::size_t>((x * ny + y) * nz + z)] = static_cast<std::int64_t>(c);
    }
    auto cell = [&](double v, std::int64_t shift, std::int64_t n) {
      return std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor(v / fs)) + shift, 0, n - 1);
    };
    for (double r : radii) {
      std::vector<double> energy(whitney->cubes.size(), 0.0);
      ev.bulk_pass(r, cutoff, [&](const PointSample& s, double wt) {
        if (s.phi <= 0.0) return;
        const std::int64_t x = cell(s.x[0], n1, nx);
        const std::int64_t y = d == 3 ? cell(s.x[1], n1, ny) : 0;
        const std::int64_t z = cell(s.x[d - 1], 0, nz);
        const std::int64_t c = leaf_of[static_cast<std::size_t>((x * ny + y) * nz + z)];
        if (c >= 0) energy[static_cast<std::size_t>(c)] += wt * s.phi * dot(s.gw, s.gw, d);
      });
      double total = 0.0;
      for (std::size_t c = 0; c < energy.size(); ++c)
        total += (stats[c].sup_w + stats[c].sup_grad) * energy[c];
      out.cube_factor.push_back(total);
    }
  }
  return out;
}

}  // namespace branchlab
