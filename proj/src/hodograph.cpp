#include "branchlab/hodograph.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "branchlab/bernoulli.hpp"
#include "branchlab/errors.hpp"

namespace branchlab {

namespace {

/// Phi along one flow column at scaled height s in [0, 1], cubic Hermite in t.
Point column_phi(const FlowMap& flow, std::size_t col, double s, double h) {
  const std::size_t nt = flow.times.size();
  const double u = std::clamp(s / h, 0.0, static_cast<double>(nt - 1));
  const std::size_t k = std::min(static_cast<std::size_t>(u), nt - 2);
  const double t = u - k;
  const double dt = flow.times[k + 1] - flow.times[k];
  const double h00 = (1 + 2 * t) * (1 - t) * (1 - t), h10 = t * (1 - t) * (1 - t);
  const double h01 = t * t * (3 - 2 * t), h11 = t * t * (t - 1);
  const FlowSample& a = flow.at(col, k);
  const FlowSample& b = flow.at(col, k + 1);
  const int td = flow.d - 1;
  Point x{0, 0, 0};
  for (int i = 0; i < flow.d; ++i)
    x[i] = h00 * a.phi[i] + h10 * dt * a.jac[td][i] + h01 * b.phi[i] + h11 * dt * b.jac[td][i];
  return x;
}

struct ColumnV {
  const FlowMap& flow;
  const CubicSampler& us;
  double delta, h;
  double operator()(std::size_t col, double s) const {
    return us.value(column_phi(flow, col, s, h)) / delta;
  }
};

bool in_disk(const HalfBallGrid& g, std::size_t node) { return g.unknown(node); }

}  // namespace

HodographResult m_hodograph(const ScalarField& u, const FlowMap& flow, const HarmonicExtension& m,
                            GridPtr grid, const HodographOptions& options) {
  const HalfBallGrid& g = *grid;
  const int d = g.dim();
  const double h = g.h();
  if (m.d != d || flow.d != d || u.grid->dim() != d) throw ValidationError("dimension mismatch");
  const auto cols = column_nodes(g);
  if (flow.columns.size() != cols.size() || flow.times.size() != cols[0].size())
    throw ValidationError("flow does not match the grid");

  HodographResult r;
  r.grid = grid;
  r.delta = flow.times.back();
  r.layer = options.layer / r.delta;
  r.exclusion = options.layer > 0.0 ? r.layer + u.grid->h() / r.delta : 0.0;
  r.v = ScalarField::zeros(grid);
  r.wtilde = ScalarField::zeros(grid);
  r.w = ScalarField::zeros(grid);
  r.footprint.assign(g.node_count(), 0);
  r.margin = 1e300;

  const CubicSampler us(u);
  const ColumnV v{flow, us, r.delta, h};
  std::vector<std::size_t> bad;
  for (std::size_t c = 0; c < cols.size(); ++c) {
    const auto& col = cols[c];
    if (!in_disk(g, col[0])) continue;
    const double v0 = v(c, 0.0), v1 = v(c, 1.0);
    for (std::size_t k = 0; k < col.size(); ++k) {
      const std::size_t i = col[k];
      Point grad;
      const Point x = column_phi(flow, c, k * h, h);
      r.v[i] = us.value_grad(x, grad) / r.delta;
      if (!in_disk(g, i)) continue;
      if (r.v[i] > r.layer) {
        const Point& T = flow.at(c, k).jac[d - 1];
        double dv = 0.0;
        for (int a = 0; a < d; ++a) dv += grad[a] * T[a];
        r.margin = std::min(r.margin, dv);
        if (dv <= 0.5) bad.push_back(i);
      }
      const double y = k * h;
      if (y < v0 || y > v1) continue;
      double lo = 0.0, hi = 1.0;
      if (v(c, hi) <= y) {
        lo = hi;
      } else {
        while (hi - lo > options.bisection_tol) {
          const double mid = 0.5 * (lo + hi);
          (v(c, mid) <= y ? lo : hi) = mid;
        }
      }
      r.footprint[i] = 1;
      r.wtilde[i] = lo;
      r.w[i] = lo - y;
    }
  }
  if (!bad.empty()) {
    std::ostringstream os;
    os << "hodograph not invertible here: nodes";
    for (std::size_t k = 0; k < std::min<std::size_t>(bad.size(), 20); ++k) os << ' ' << bad[k];
    if (bad.size() > 20) os << " ... (" << bad.size() << " total)";
    throw NumericalError(os.str(), r.margin);
  }

  std::vector<std::size_t> with_fp;
  for (std::size_t c = 0; c < cols.size(); ++c)
    if (std::any_of(cols[c].begin(), cols[c].end(), [&](std::size_t i) { return r.footprint[i] != 0; }))
      with_fp.push_back(c);
  for (const auto& col : cols) {
    std::vector<std::size_t> fp;
    for (std::size_t k = 0; k < col.size(); ++k)
      if (r.footprint[col[k]]) fp.push_back(k);
    for (std::size_t k = 0; k < col.size(); ++k) {
      const std::size_t i = col[k];
      if (r.footprint[i] || fp.empty()) continue;
      const std::size_t near = k < fp.front() ? fp.front() : fp.back();
      r.w[i] = r.w[col[near]];
    }
  }
  if (!with_fp.empty()) {
    for (std::size_t c = 0; c < cols.size(); ++c) {
      if (std::binary_search(with_fp.begin(), with_fp.end(), c)) continue;
      const Point x = g.node_coord(cols[c][0]);
      std::size_t best = with_fp.front();
      double bd = 1e300;
      for (std::size_t o : with_fp) {
        const Point y = g.node_coord(cols[o][0]);
        const double dist = (x[0] - y[0]) * (x[0] - y[0]) + (x[1] - y[1]) * (x[1] - y[1]);
        if (dist < bd) bd = dist, best = o;
      }
      for (std::size_t k = 0; k < cols[c].size(); ++k) r.w[cols[c][k]] = r.w[cols[best][k]];
    }
  }
  for (std::size_t i = 0; i < g.node_count(); ++i)
    if (!r.footprint[i]) r.wtilde[i] = g.node_coord(i)[d - 1] + r.w[i];
  r.grad_w = gradient(r.w);
  return r;
}

Point boundary_gradient_w(const HodographResult& r, std::size_t column) {
  const HalfBallGrid& g = *r.grid;
  const int d = g.dim();
  const double h = g.h();
  const std::size_t nz = g.node_extent(d - 1);
  const std::size_t base = column * nz;
  if (r.exclusion <= 0.0) return r.grad_w.at(base);
  std::size_t k1 = 1;
  while (k1 + 2 < nz && (k1 - 1) * h < r.exclusion) ++k1;
  const Point g1 = r.grad_w.at(base + k1), g2 = r.grad_w.at(base + k1 + 1);
  Point out{0, 0, 0};
  for (int a = 0; a < d; ++a) out[a] = g1[a] - static_cast<double>(k1) * (g2[a] - g1[a]);
  return out;
}

BranchLists branch_characterization(const HodographResult& r, double tau) {
  const HalfBallGrid& g = *r.grid;
  const std::size_t nz = g.node_extent(g.dim() - 1);
  BranchLists out;
  for (std::size_t c = 0; c * nz < g.node_count(); ++c) {
    const std::size_t i = c * nz;
    if (g.kind(i) != NodeKind::flat) continue;
    if (std::abs(r.w[i]) > tau) continue;
    out.zero.push_back(i);
    if (std::sqrt(norm2(boundary_gradient_w(r, c))) <= tau) out.singular.push_back(i);
  }
  return out;
}

RoundTrip check_round_trip(const HodographResult& r, const ScalarField& u, const FlowMap& flow) {
  const HalfBallGrid& g = *r.grid;
  const int d = g.dim();
  const double h = g.h();
  const CubicSampler us(u), ws(r.wtilde);
  const ColumnV v{flow, us, r.delta, h};
  const auto cols = column_nodes(g);
  RoundTrip rt;
  rt.monotonicity = 1e300;
  ScalarField vrec = r.v;
  std::vector<char> rec(g.node_count(), 0);
  auto column_point = [&](const std::vector<std::size_t>& col, double y) {
    Point p = g.node_coord(col[0]);
    p[d - 1] = y;
    return p;
  };
  // Largest y in [lo, hi] with f(y) <= target, for nondecreasing f.
  auto invert = [](const auto& f, double target, double lo, double hi) {
    while (hi - lo > 1e-12) {
      const double mid = 0.5 * (lo + hi);
      (f(mid) <= target ? lo : hi) = mid;
    }
    return lo;
  };
  std::vector<std::vector<std::size_t>> fps(cols.size());
  for (std::size_t c = 0; c < cols.size(); ++c) {
    const auto& col = cols[c];
    auto& fp = fps[c];
    for (std::size_t k = 0; k < col.size(); ++k)
      if (r.footprint[col[k]]) fp.push_back(k);
    if (fp.size() < 2) continue;
    for (std::size_t k : fp)
      rt.identity = std::max(rt.identity, std::abs(v(c, r.wtilde[col[k]]) - k * h));
    for (std::size_t a = 0; a + 1 < fp.size(); ++a)
      rt.monotonicity = std::min(rt.monotonicity, r.wtilde[col[fp[a + 1]]] - r.wtilde[col[fp[a]]]);
    const double ylo = fp.front() * h, yhi = fp.back() * h;
    auto wt = [&](double y) { return ws.value(column_point(col, y)); };
    const double slo = wt(ylo), shi = wt(yhi);
    for (std::size_t k = 0; k < col.size(); ++k) {
      const double s = k * h;
      if (s <= slo || s >= shi || !g.unknown(col[k])) continue;
      vrec[col[k]] = invert(wt, s, ylo, yhi);
      rec[col[k]] = 1;
      rt.interpolation = std::max(rt.interpolation, std::abs(vrec[col[k]] - r.v[col[k]]));
    }
  }
  const CubicSampler vs(vrec);
  for (std::size_t c = 0; c < cols.size(); ++c) {
    const auto& col = cols[c];
    std::vector<std::size_t> rk;
    for (std::size_t k = 0; k < col.size(); ++k)
      if (rec[col[k]]) rk.push_back(k);
    if (rk.size() < 2) continue;
    const double slo = rk.front() * h, shi = rk.back() * h;
    auto vr = [&](double s) { return vs.value(column_point(col, s)); };
    const double vlo = vr(slo), vhi = vr(shi);
    for (std::size_t k : fps[c]) {
      const double y = k * h;
      if (y <= vlo || y >= vhi) continue;
      rt.round_trip = std::max(rt.round_trip, std::abs(invert(vr, y, slo, shi) - r.wtilde[col[k]]));
    }
  }
  return rt;
}

EnergyCorrespondence energy_correspondence(const ScalarField& u, const HodographResult& r, double R,
                                           int sub) {
  const HalfBallGrid& g = *r.grid;
  const int d = g.dim();
  const double h = g.h();
  const CubicSampler us(u), ws(r.w);
  const double cell = std::pow(h / sub, d);
  EnergyCorrespondence e;
  const std::size_t nsub = static_cast<std::size_t>(std::pow(sub, d));
  for (std::size_t c = 0; c < g.cell_count(); ++c) {
    const Point lo = g.node_coord(g.cell_corners(c)[0]);
    for (std::size_t q = 0; q < nsub; ++q) {
      Point x = lo;
      std::size_t rem = q;
      for (int a = 0; a < d; ++a) {
        x[a] += (static_cast<double>(rem % sub) + 0.5) * h / sub;
        rem /= sub;
      }
      double rp2 = 0.0;
      for (int a = 0; a + 1 < d; ++a) rp2 += x[a] * x[a];
      if (rp2 >= R * R) continue;
      // One-phase side: x is in the preimage when (x', u(x)) lies in Omega.
      Point gu;
      const double ux = us.value_grad(x, gu);
      if (ux > 0.0 && rp2 + ux * ux < R * R) e.one_phase += (norm2(gu) + 1.0) * cell;
      // Hodograph side: y = x.
      if (rp2 + x[d - 1] * x[d - 1] < R * R) {
        Point gw;
        ws.value_grad(x, gw);
        double tang = 0.0;
        for (int a = 0; a + 1 < d; ++a) tang += gw[a] * gw[a];
        const double p = gw[d - 1];
        e.hodograph += ((tang + p * p) / (1.0 + p) + 2.0) * cell;
      }
    }
  }
  return e;
}

}  // namespace branchlab
