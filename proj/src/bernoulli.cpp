#include "branchlab/bernoulli.hpp"

#include <algorithm>
#include <cmath>

#include "branchlab/errors.hpp"
#include "branchlab/q1.hpp"

namespace branchlab {

namespace {

struct Layout {
  std::vector<int> var;              // node -> unknown index or -1
  std::vector<std::size_t> node_of;  // unknown index -> node
};

Layout make_layout(const BernoulliProblem& p) {
  const HalfBallGrid& g = *p.grid;
  const int d = g.dim();
  Layout L;
  L.var.assign(g.node_count(), -1);
  for (std::size_t i = 0; i < g.node_count(); ++i) {
    if (!g.unknown(i)) continue;
    const Point x = g.node_coord(i);
    if (x[d - 1] <= p.obstacle.value({x[0], d == 3 ? x[1] : 0.0, 0.0})) continue;
    L.var[i] = static_cast<int>(L.node_of.size());
    L.node_of.push_back(i);
  }
  return L;
}

// Vertical derivative at column node k: central, one-sided at the top.
double column_slope(const ScalarField& u, const std::vector<std::size_t>& col, std::size_t k, double h) {
  if (k + 1 < col.size()) return (u[col[k + 1]] - u[col[k - 1]]) / (2.0 * h);
  return (u[col[k]] - u[col[k - 1]]) / h;
}

double beta(double u, double eps) { return std::clamp(u / eps, 0.0, 1.0); }
// Right derivative, so a node sitting at u = 0 feels the volume penalty.
double beta_prime(double u, double eps) { return (u >= 0.0 && u < eps) ? 1.0 / eps : 0.0; }

}  // namespace

std::vector<std::vector<std::size_t>> column_nodes(const HalfBallGrid& g) {
  const std::size_t nz = g.node_extent(g.dim() - 1);
  std::vector<std::vector<std::size_t>> cols(g.node_count() / nz);
  for (std::size_t c = 0; c < cols.size(); ++c)
    for (std::size_t k = 0; k < nz; ++k) cols[c].push_back(c * nz + k);
  return cols;
}

double slab_height_oracle(double amplitude, int samples) {
  double best_f = 0.0, best_e = 1e300;
  for (int k = 0; k < samples; ++k) {
    const double f = static_cast<double>(k) / samples;
    const double e = amplitude * amplitude / (1.0 - f) + (1.0 - f);
    if (e < best_e) best_e = e, best_f = f;
  }
  return best_f;
}

void free_boundary_heights(BernoulliSolution& sol, const AnalyticObstacle& obstacle) {
  const HalfBallGrid& g = *sol.u.grid;
  const int d = g.dim();
  const double h = g.h();
  const auto cols = column_nodes(g);
  sol.f.assign(cols.size(), 0.0);
  sol.column_base.resize(cols.size());
  for (std::size_t c = 0; c < cols.size(); ++c) {
    const Point x0c = g.node_coord(cols[c][0]);
    sol.column_base[c] = {x0c[0], d == 3 ? x0c[1] : 0.0, 0.0};
    const double top = std::sqrt(std::max(0.0, 1.0 - (x0c[0] * x0c[0] + (d == 3 ? x0c[1] * x0c[1] : 0.0))));
    double f = top;
    for (std::size_t k = 1; k < cols[c].size(); ++k) {
      const std::size_t i = cols[c][k];
      if (sol.u[i] <= 0.0) continue;
      // Lowest positive node: extrapolate the secant through it and the next
      // node to zero, kept inside the cell below.
      const double zk = k * h, zprev = (k - 1) * h;
      double est = zprev;
      if (k + 1 < cols[c].size()) {
        const double slope = (sol.u[cols[c][k + 1]] - sol.u[i]) / h;
        if (slope > 0.0) est = std::clamp(zk - sol.u[i] / slope, zprev, zk);
      }
      f = std::max(est, obstacle.value(sol.column_base[c]));
      break;
    }
    sol.f[c] = f;
  }
}

BernoulliSolution minimize_J1(const BernoulliProblem& p, const BoxOptions& options) {
  const HalfBallGrid& g = *p.grid;
  const int d = g.dim();
  const double h = g.h();
  const double eps = p.eps > 0.0 ? p.eps : 2.0 * h;
  if (eps < 2.0 * h - 1e-15) throw ValidationError("smoothing width must be at least 2h");
  if (p.obstacle.d != d) throw ValidationError("obstacle and grid dimensions differ");

  const Layout L = make_layout(p);
  ScalarField base = ScalarField::zeros(p.grid);
  for (std::size_t i = 0; i < g.node_count(); ++i) {
    if (L.var[i] >= 0 || g.unknown(i)) continue;  // unknowns and obstacle-covered nodes stay 0
    base[i] = p.datum(g.node_coord(i));
  }
  const Q1Element el(d, h);
  const auto& vol = g.node_volume();

  // Element stiffness of int |grad u|^2 on a full cell.
  std::array<std::array<double, 8>, 8> Ke{};
  for (int q = 0; q < el.nq; ++q)
    for (int a = 0; a < el.nc; ++a)
      for (int b = 0; b < el.nc; ++b) {
        double s = 0.0;
        for (int k = 0; k < d; ++k) s += el.dN[q][a][k] * el.dN[q][b][k];
        Ke[a][b] += 2.0 * el.qweight * s;  // Hessian of the energy
      }

  std::vector<std::size_t> cells;
  for (std::size_t c = 0; c < g.cell_count(); ++c)
    if (g.cell_weight(c) > 0.0) cells.push_back(c);

  ScalarField work = base;
  auto scatter = [&](const std::vector<double>& x) {
    for (std::size_t k = 0; k < x.size(); ++k) work[L.node_of[k]] = x[k];
  };

  BoxProblem bp;
  bp.n = L.node_of.size();
  bp.lower.assign(bp.n, 0.0);
  bp.scale.resize(bp.n);
  for (std::size_t k = 0; k < bp.n; ++k) bp.scale[k] = vol[L.node_of[k]];
  bp.energy = [&](const std::vector<double>& x, std::vector<double>* grad) {
    scatter(x);
    if (grad) grad->assign(x.size(), 0.0);
    double E = 0.0;
    for (std::size_t c : cells) {
      const double w = g.cell_weight(c);
      const auto cn = g.cell_corners(c);
      std::array<double, 8> u{};
      for (int a = 0; a < el.nc; ++a) u[a] = work[cn[a]];
      std::array<double, 8> Ku{};
      double e = 0.0;
      for (int a = 0; a < el.nc; ++a) {
        for (int b = 0; b < el.nc; ++b) Ku[a] += Ke[a][b] * u[b];
        e += 0.5 * u[a] * Ku[a];
      }
      E += w * e;
      if (grad)
        for (int a = 0; a < el.nc; ++a) {
          const int v = L.var[cn[a]];
          if (v >= 0) (*grad)[v] += w * Ku[a];
        }
    }
    for (std::size_t k = 0; k < x.size(); ++k) {
      E += bp.scale[k] * beta(x[k], eps);
      if (grad) (*grad)[k] += bp.scale[k] * beta_prime(x[k], eps);
    }
    return E;
  };
  bp.hessian = [&](const std::vector<double>&, std::vector<HessianEntry>& H) {
    H.clear();
    for (std::size_t c : cells) {
      const double w = g.cell_weight(c);
      const auto cn = g.cell_corners(c);
      for (int a = 0; a < el.nc; ++a) {
        const int va = L.var[cn[a]];
        if (va < 0) continue;
        for (int b = 0; b < el.nc; ++b) {
          const int vb = L.var[cn[b]];
          if (vb >= 0) H.push_back({va, vb, w * Ke[a][b]});
        }
      }
    }
  };

  // Start from the harmonic-like guess: datum extended by its value at the node.
  std::vector<double> x0(bp.n);
  for (std::size_t k = 0; k < bp.n; ++k) x0[k] = std::max(0.0, p.datum(g.node_coord(L.node_of[k])));
  BoxResult r = minimize_box(bp, x0, options);
  if (!r.converged) throw NumericalError("Bernoulli descent did not converge", r.residual);

  BernoulliSolution sol;
  scatter(r.x);
  sol.u = work;
  sol.eps = eps;
  sol.smoothed_energy = r.energy;
  sol.residual = r.residual;
  sol.iterations = r.iterations;
  sol.history = r.history;
  double dirichlet = r.energy;
  for (std::size_t k = 0; k < bp.n; ++k) dirichlet -= bp.scale[k] * beta(r.x[k], eps);
  double positive = 0.0;
  for (std::size_t i = 0; i < g.node_count(); ++i)
    if (sol.u[i] > 0.0 && L.var[i] >= 0) positive += vol[i];
  sol.J1 = dirichlet + positive;

  free_boundary_heights(sol, p.obstacle);
  return sol;
}

ContactSets extract_sets(const BernoulliSolution& sol, const AnalyticObstacle& obstacle, double tau) {
  const HalfBallGrid& g = *sol.u.grid;
  const int d = g.dim();
  const double h = g.h();
  const auto cols = column_nodes(g);
  ContactSets out;
  for (std::size_t c = 0; c < cols.size(); ++c) {
    const Point& xp = sol.column_base[c];
    if (xp[0] * xp[0] + xp[1] * xp[1] >= 1.0) continue;
    const double phi = obstacle.value(xp);
    if (std::abs(sol.f[c] - phi) > 2.0 * h) continue;
    out.contact.push_back(c);
    // First two nodes at or above the smoothing layer.
    std::size_t k1 = 0;
    for (std::size_t k = 1; k + 1 < cols[c].size(); ++k)
      if (sol.u[cols[c][k]] >= sol.eps) {
        k1 = k;
        break;
      }
    double gn = 0.0;
    if (k1 > 0) {
      // u vanishes along the obstacle graph there, so grad u = d_d u (-grad phi, 1).
      const double da = column_slope(sol.u, cols[c], k1, h), db = column_slope(sol.u, cols[c], k1 + 1, h);
      const double za = k1 * h, zf = sol.f[c];
      const double dd = da + (da - db) * (za - zf) / h;
      const Point gphi = obstacle.grad(xp);
      gn = dd * std::sqrt(1.0 + gphi[0] * gphi[0] + (d == 3 ? gphi[1] * gphi[1] : 0.0));
    }
    out.boundary_gradient.push_back(gn);
    if (std::abs(gn - 1.0) <= tau) out.singular.push_back(c);
  }
  return out;
}

}  // namespace branchlab
