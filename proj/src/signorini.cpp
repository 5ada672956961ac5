#include "branchlab/signorini.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "branchlab/errors.hpp"
#include "branchlab/q1.hpp"

namespace branchlab {

namespace {

Point mat_vec(const Mat3& M, const Point& p, int d) {
  Point out{0, 0, 0};
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < d; ++b) out[a] += M[a][b] * p[b];
  return out;
}

double dot(const Point& a, const Point& b, int d) {
  double s = 0.0;
  for (int k = 0; k < d; ++k) s += a[k] * b[k];
  return s;
}

double ipow(double y, int e) {
  double r = 1.0;
  for (int k = 0; k < e; ++k) r *= y;
  return r;
}

}  // namespace

NonlinearityModel NonlinearityModel::cubic_default() {
  NonlinearityModel m;
  m.enabled = true;
  NonlinearTerm t;
  t.k = 3;
  t.metric_cubic = true;
  t.g_const = -1.0;
  m.terms.push_back(t);
  return m;
}

double NonlinearityModel::P_value(const NonlinearTerm& t, const Mat3& M, const Point& p, int d) const {
  if (t.metric_cubic) return dot(mat_vec(M, p, d), p, d) * p[d - 1];
  return t.P.value(p);
}

double NonlinearityModel::homogeneity_defect(int d, unsigned seed, int samples) const {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> U(-1.0, 1.0), L(0.1, 3.0);
  Mat3 M{};
  for (int a = 0; a < d; ++a) M[a][a] = 1.0 + 0.1 * a;
  if (d > 1) M[0][1] = M[1][0] = 0.2;
  double worst = 0.0;
  for (const NonlinearTerm& t : terms)
    for (int s = 0; s < samples; ++s) {
      Point p{0, 0, 0};
      for (int a = 0; a < d; ++a) p[a] = U(rng);
      const double lam = L(rng);
      Point lp = p;
      for (int a = 0; a < d; ++a) lp[a] *= lam;
      const double ref = ipow(lam, t.k) * P_value(t, M, p, d);
      worst = std::max(worst, std::abs(P_value(t, M, lp, d) - ref) / (1.0 + std::abs(ref)));
    }
  return worst;
}

ThinObstacleEnergy::ThinObstacleEnergy(const CoefficientSet& c, const NonlinearityModel& n)
    : grid_(c.grid), nonlin_(n) {
  const HalfBallGrid& g = *grid_;
  const int d = g.dim();
  const Q1Element el(d, g.h());
  for (std::size_t cell = 0; cell < g.cell_count(); ++cell)
    if (g.cell_weight(cell) > 0.0) cells_.push_back(cell);
  gauss_.resize(cells_.size() * el.nq);
  for (std::size_t ci = 0; ci < cells_.size(); ++ci) {
    const auto cn = g.cell_corners(cells_[ci]);
    const Point lo = g.node_coord(cn[0]);
    for (int q = 0; q < el.nq; ++q) {
      GaussData& G = gauss_[ci * el.nq + q];
      G.M = Mat3{};
      G.q = 0.0;
      G.x = {0, 0, 0};
      for (int a = 0; a < d; ++a) G.x[a] = lo[a] + el.qp[q][a] * g.h();
      if (c.identity) {
        for (int a = 0; a < d; ++a) G.M[a][a] = 1.0;
        continue;
      }
      for (int k = 0; k < el.nc; ++k) {
        const std::size_t i = cn[k];
        for (int a = 0; a < d; ++a)
          for (int b = 0; b < d; ++b) G.M[a][b] += el.N[q][k] * c.M[a][b][i];
        G.q += el.dN[q][k][d - 1] * c.Q[i];
      }
    }
  }
}

void ThinObstacleEnergy::local(const GaussData& G, double y, const Point& p, bool nonlinear, double& e,
                               double& ey, Point& ep) const {
  const int d = grid_->dim();
  const Point Mp = mat_vec(G.M, p, d);
  e = dot(Mp, p, d) + G.q * y * p[d - 1];
  ey = G.q * p[d - 1];
  for (int a = 0; a < d; ++a) ep[a] = 2.0 * Mp[a];
  ep[d - 1] += G.q * y;
  if (!nonlinear) return;
  for (const NonlinearTerm& t : nonlin_.terms) {
    const int m = 3 - t.k;
    const double P = nonlin_.P_value(t, G.M, p, d);
    Point dP{0, 0, 0};
    if (t.metric_cubic) {
      const double mpp = dot(Mp, p, d);
      for (int a = 0; a < d; ++a) dP[a] = 2.0 * Mp[a] * p[d - 1];
      dP[d - 1] += mpp;
    } else {
      dP = t.P.grad(p);
    }
    const double ym = ipow(y, m), dym = m > 0 ? m * ipow(y, m - 1) : 0.0;
    double gv = t.g_const, gy = 0.0;
    Point gp{0, 0, 0};
    if (t.g) {
      const double s = 1e-6;
      gv = t.g(G.x, y, p);
      gy = (t.g(G.x, y + s, p) - t.g(G.x, y - s, p)) / (2 * s);
      for (int a = 0; a < d; ++a) {
        Point pp = p, pm = p;
        pp[a] += s;
        pm[a] -= s;
        gp[a] = (t.g(G.x, y, pp) - t.g(G.x, y, pm)) / (2 * s);
      }
    }
    e += gv * ym * P;
    ey += gy * ym * P + gv * dym * P;
    for (int a = 0; a < d; ++a) ep[a] += gp[a] * ym * P + gv * ym * dP[a];
  }
}

double ThinObstacleEnergy::value(const std::vector<double>& w, std::vector<double>* grad) const {
  return evaluate(w, grad, nonlin_.enabled);
}

double ThinObstacleEnergy::evaluate(const std::vector<double>& w, std::vector<double>* grad,
                                    bool nonlinear) const {
  const HalfBallGrid& g = *grid_;
  const int d = g.dim();
  const Q1Element el(d, g.h());
  if (grad) grad->assign(w.size(), 0.0);
  double E = 0.0;
  for (std::size_t ci = 0; ci < cells_.size(); ++ci) {
    const std::size_t cell = cells_[ci];
    const double cw = g.cell_weight(cell) * el.qweight;
    const auto cn = g.cell_corners(cell);
    std::array<double, 8> u{};
    for (int k = 0; k < el.nc; ++k) u[k] = w[cn[k]];
    for (int q = 0; q < el.nq; ++q) {
      double y = 0.0;
      Point p{0, 0, 0};
      for (int k = 0; k < el.nc; ++k) {
        y += el.N[q][k] * u[k];
        for (int a = 0; a < d; ++a) p[a] += el.dN[q][k][a] * u[k];
      }
      double e, ey;
      Point ep;
      local(gauss_[ci * el.nq + q], y, p, nonlinear, e, ey, ep);
      E += cw * e;
      if (grad)
        for (int k = 0; k < el.nc; ++k) {
          double s = ey * el.N[q][k];
          for (int a = 0; a < d; ++a) s += ep[a] * el.dN[q][k][a];
          (*grad)[cn[k]] += cw * s;
        }
    }
  }
  return E;
}

EnergyParts ThinObstacleEnergy::parts(const std::vector<double>& w) const {
  EnergyParts out;
  out.F = evaluate(w, nullptr, false);
  out.E = nonlin_.enabled ? evaluate(w, nullptr, true) - out.F : 0.0;
  return out;
}

void ThinObstacleEnergy::hessian(const std::vector<double>& w, const std::vector<int>& var,
                                 std::vector<HessianEntry>& out) const {
  const HalfBallGrid& g = *grid_;
  const int d = g.dim();
  const Q1Element el(d, g.h());
  out.clear();
  for (std::size_t ci = 0; ci < cells_.size(); ++ci) {
    const std::size_t cell = cells_[ci];
    const auto cn = g.cell_corners(cell);
    bool any = false;
    for (int k = 0; k < el.nc; ++k) any = any || var[cn[k]] >= 0;
    if (!any) continue;
    const double cw = g.cell_weight(cell) * el.qweight;
    std::array<std::array<double, 8>, 8> K{};
    for (int q = 0; q < el.nq; ++q) {
      const GaussData& G = gauss_[ci * el.nq + q];
      double y = 0.0;
      Point p{0, 0, 0};
      for (int k = 0; k < el.nc; ++k) {
        y += el.N[q][k] * w[cn[k]];
        for (int a = 0; a < d; ++a) p[a] += el.dN[q][k][a] * w[cn[k]];
      }
      // Second derivatives of the integrand in (y, p): Hyy, Hyp, Hpp.
      double Hyy = 0.0;
      Point Hyp{0, 0, 0};
      Mat3 Hpp{};
      for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b) Hpp[a][b] = 2.0 * G.M[a][b];
      Hyp[d - 1] = G.q;
      if (nonlin_.enabled)
        for (const NonlinearTerm& t : nonlin_.terms) {
          const double gv = t.g ? t.g(G.x, y, p) : t.g_const;
          const int m = 3 - t.k;
          const double ym = ipow(y, m), dym = m > 0 ? m * ipow(y, m - 1) : 0.0;
          const double ddym = m > 1 ? m * (m - 1) * ipow(y, m - 2) : 0.0;
          const double P = nonlin_.P_value(t, G.M, p, d);
          Point dP{0, 0, 0};
          Mat3 ddP{};
          if (t.metric_cubic) {
            const Point Mp = mat_vec(G.M, p, d);
            const double mpp = dot(Mp, p, d);
            for (int a = 0; a < d; ++a) dP[a] = 2.0 * Mp[a] * p[d - 1];
            dP[d - 1] += mpp;
            for (int a = 0; a < d; ++a)
              for (int b = 0; b < d; ++b) ddP[a][b] = 2.0 * G.M[a][b] * p[d - 1];
            for (int a = 0; a < d; ++a) {
              ddP[a][d - 1] += 2.0 * Mp[a];
              ddP[d - 1][a] += 2.0 * Mp[a];
            }
          } else {
            dP = t.P.grad(p);
            ddP = t.P.hess(p);
          }
          Hyy += gv * ddym * P;
          for (int a = 0; a < d; ++a) {
            Hyp[a] += gv * dym * dP[a];
            for (int b = 0; b < d; ++b) Hpp[a][b] += gv * ym * ddP[a][b];
          }
        }
      for (int k = 0; k < el.nc; ++k)
        for (int l = 0; l < el.nc; ++l) {
          double s = Hyy * el.N[q][k] * el.N[q][l];
          for (int a = 0; a < d; ++a) {
            s += Hyp[a] * (el.N[q][k] * el.dN[q][l][a] + el.N[q][l] * el.dN[q][k][a]);
            for (int b = 0; b < d; ++b) s += Hpp[a][b] * el.dN[q][k][a] * el.dN[q][l][b];
          }
          K[k][l] += cw * s;
        }
    }
    for (int k = 0; k < el.nc; ++k) {
      const int vk = var[cn[k]];
      if (vk < 0) continue;
      for (int l = 0; l < el.nc; ++l) {
        const int vl = var[cn[l]];
        if (vl >= 0) out.push_back({vk, vl, K[k][l]});
      }
    }
  }
}

double ThinObstacleEnergy::max_gradient(const std::vector<double>& w) const {
  const HalfBallGrid& g = *grid_;
  const int d = g.dim();
  const Q1Element el(d, g.h());
  double worst = 0.0;
  for (std::size_t cell : cells_) {
    const auto cn = g.cell_corners(cell);
    for (int q = 0; q < el.nq; ++q) {
      Point p{0, 0, 0};
      for (int k = 0; k < el.nc; ++k)
        for (int a = 0; a < d; ++a) p[a] += el.dN[q][k][a] * w[cn[k]];
      worst = std::max(worst, norm2(p));
    }
  }
  return std::sqrt(worst);
}

std::vector<char> rim_nodes(const HalfBallGrid& g) {
  std::vector<char> rim(g.node_count(), 0);
  const int nc = g.corners_per_cell();
  for (std::size_t c = 0; c < g.cell_count(); ++c) {
    const double w = g.cell_weight(c);
    if (w <= 0.0 || w >= 1.0) continue;
    const auto cn = g.cell_corners(c);
    for (int k = 0; k < nc; ++k) rim[cn[k]] = 1;
  }
  return rim;
}

double active_threshold(double h) { return 10.0 * std::pow(h, 1.5); }

ThinObstacleSolution minimize_thin_obstacle(const ThinObstacleProblem& prob, const BoxOptions& options) {
  const CoefficientSet& coeff = prob.coefficients;
  const GridPtr grid = coeff.grid;
  const HalfBallGrid& g = *grid;
  const ThinObstacleEnergy energy(coeff, prob.nonlinearity);
  const bool capped = prob.nonlinearity.enabled;

  std::vector<int> var(g.node_count(), -1);
  std::vector<std::size_t> node_of;
  const std::vector<char> rim = prob.rim_dirichlet ? rim_nodes(g) : std::vector<char>(g.node_count(), 0);
  for (std::size_t i = 0; i < g.node_count(); ++i)
    if (g.unknown(i) && !rim[i]) {
      var[i] = static_cast<int>(node_of.size());
      node_of.push_back(i);
    }
  std::vector<double> work(g.node_count());
  for (std::size_t i = 0; i < g.node_count(); ++i) work[i] = prob.datum(g.node_coord(i));
  auto scatter = [&](const std::vector<double>& x) {
    for (std::size_t k = 0; k < x.size(); ++k) work[node_of[k]] = x[k];
  };

  BoxProblem bp;
  bp.n = node_of.size();
  bp.lower.assign(bp.n, kNoBound);
  bp.scale.resize(bp.n);
  std::vector<double> x0(bp.n);
  for (std::size_t k = 0; k < bp.n; ++k) {
    const std::size_t i = node_of[k];
    bp.scale[k] = g.node_volume()[i];
    if (g.kind(i) == NodeKind::flat) {
      bp.lower[k] = 0.0;
      work[i] = std::max(0.0, work[i]);
    }
    x0[k] = work[i];
  }
  std::vector<double> full;
  bp.energy = [&](const std::vector<double>& x, std::vector<double>* grad) {
    scatter(x);
    if (!grad) return energy.value(work, nullptr);
    const double E = energy.value(work, &full);
    grad->resize(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) (*grad)[k] = full[node_of[k]];
    return E;
  };
  bp.hessian = [&](const std::vector<double>& x, std::vector<HessianEntry>& H) {
    scatter(x);
    energy.hessian(work, var, H);
  };
  if (capped) {
    if (energy.max_gradient(work) > prob.lipschitz_cap)
      throw ValidationError("initial guess violates the Lipschitz cap");
    bp.admissible = [&](const std::vector<double>& x) {
      scatter(x);
      return energy.max_gradient(work) <= prob.lipschitz_cap;
    };
  }

  const BoxResult r = minimize_box(bp, x0, options);
  if (!r.converged) {
    if (capped && r.rejected_steps > 0)
      throw NumericalError("Lipschitz cap violated during descent", r.residual);
    throw NumericalError("thin-obstacle descent did not converge", r.residual);
  }
  scatter(r.x);
  ThinObstacleSolution sol;
  sol.w = ScalarField::zeros(grid);
  sol.w.values = work;
  sol.energy = energy.parts(work);
  sol.residual = r.residual;
  sol.iterations = r.iterations;
  sol.rejected_steps = r.rejected_steps;
  sol.history = r.history;
  sol.tau = active_threshold(g.h());
  for (std::size_t i = 0; i < g.node_count(); ++i)
    if (g.kind(i) == NodeKind::flat && work[i] <= sol.tau) sol.active.push_back(i);
  return sol;
}

double vi_residual(const ScalarField& w, const CoefficientSet& coefficients,
                   const NonlinearityModel& nonlinearity, bool rim_dirichlet) {
  const HalfBallGrid& g = *w.grid;
  const std::vector<char> rim = rim_dirichlet ? rim_nodes(g) : std::vector<char>(g.node_count(), 0);
  const ThinObstacleEnergy energy(coefficients, nonlinearity);
  std::vector<double> grad;
  energy.value(w.values, &grad);
  double worst = 0.0;
  for (std::size_t i = 0; i < g.node_count(); ++i) {
    if (!g.unknown(i) || rim[i]) continue;
    const double gi = grad[i] / g.node_volume()[i];
    const bool can_decrease = g.kind(i) != NodeKind::flat || w[i] > 0.0;
    worst = std::min(worst, gi);  // direction +e_i
    if (can_decrease) worst = std::min(worst, -gi);
  }
  return worst;
}

AssumptionReport validate_assumptions(const ScalarField& w, double delta, double alpha) {
  const HalfBallGrid& g = *w.grid;
  const int d = g.dim();
  const double h = g.h();
  const VectorField gw = gradient(w);
  AssumptionReport rep;
  rep.alpha = alpha;
  std::vector<std::size_t> in;
  for (std::size_t i = 0; i < g.node_count(); ++i)
    if (g.unknown(i)) in.push_back(i);
  for (std::size_t i : in) {
    rep.sup_w = std::max(rep.sup_w, std::abs(w[i]));
    rep.sup_grad = std::max(rep.sup_grad, std::sqrt(norm2(gw.at(i))));
  }
  // Hoelder quotient of grad w over lattice offsets 2^j h along each axis.
  for (std::size_t i : in) {
    const Index a = g.node_multi(i);
    for (int axis = 0; axis < d; ++axis)
      for (int step = 1; step <= g.node_extent(axis); step *= 2) {
        Index b = a;
        b[axis] += step;
        if (b[axis] >= g.node_extent(axis)) break;
        const std::size_t j = g.node_index(b);
        if (!g.unknown(j)) continue;
        Point diff = gw.at(i);
        const Point o = gw.at(j);
        for (int k = 0; k < d; ++k) diff[k] -= o[k];
        rep.holder_grad = std::max(rep.holder_grad, std::sqrt(norm2(diff)) / std::pow(step * h, alpha));
      }
  }
  rep.c1alpha_norm = rep.sup_w + rep.sup_grad + rep.holder_grad;
  rep.within_delta = rep.c1alpha_norm <= delta;
  const std::size_t origin = g.node_index(g.nearest({0, 0, 0}));
  rep.w0 = w[origin];
  rep.grad0 = gw.at(origin);
  rep.branching = std::abs(rep.w0) <= 5.0 * h && std::sqrt(norm2(rep.grad0)) <= 5.0 * std::sqrt(h);
  ScalarField w2 = ScalarField::zeros(w.grid), g2 = ScalarField::zeros(w.grid);
  for (std::size_t i = 0; i < g.node_count(); ++i) {
    w2[i] = w[i] * w[i];
    g2[i] = norm2(gw.at(i));
  }
  rep.nondegenerate = true;
  for (int k = 1; k <= 9; ++k) {
    const double r = 0.1 * k;
    rep.radii.push_back(r);
    rep.l2_mass.push_back(ball_integral(w2, {0, 0, 0}, r));
    rep.dirichlet_mass.push_back(ball_integral(g2, {0, 0, 0}, r));
    rep.nondegenerate = rep.nondegenerate && rep.l2_mass.back() > 0.0 && rep.dirichlet_mass.back() > 0.0;
  }
  return rep;
}

}  // namespace branchlab
