#include "branchlab/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "branchlab/errors.hpp"

namespace branchlab {

namespace {

constexpr double kMinGradient = 0.5;
constexpr double kPivotFloor = 1e-12;

using Series = std::vector<double>;

Series mul(const Series& a, const Series& b, int deg) {
  Series c(deg + 1, 0.0);
  for (int i = 0; i <= deg && i < static_cast<int>(a.size()); ++i)
    for (int j = 0; i + j <= deg && j < static_cast<int>(b.size()); ++j) c[i + j] += a[i] * b[j];
  return c;
}

// sqrt(1 + g) for a series g with g(0) = 0.
Series sqrt_one_plus(const Series& g, int deg) {
  Series s(deg + 1, 0.0);
  s[0] = 1.0;
  for (int n = 1; n <= deg; ++n) {
    double acc = n < static_cast<int>(g.size()) ? g[n] : 0.0;
    for (int k = 1; k < n; ++k) acc -= s[k] * s[n - k];
    s[n] = acc / 2.0;
  }
  return s;
}

struct Velocity {
  Point v{0, 0, 0};
  Mat3 dv{};
  double grad2 = 0.0;
};

// V = grad m / |grad m|^2 and its Jacobian.
Velocity velocity(const HarmonicExtension& m, const Point& x) {
  const int d = m.d;
  const Point g = m.grad(x);
  const Mat3 H = m.hess(x);
  Velocity out;
  double g2 = 0.0;
  for (int a = 0; a < d; ++a) g2 += g[a] * g[a];
  out.grad2 = g2;
  if (g2 < kMinGradient * kMinGradient) throw NumericalError("flow left validity region", std::sqrt(g2));
  Point Hg{0, 0, 0};
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < d; ++b) Hg[a] += H[a][b] * g[b];
  for (int a = 0; a < d; ++a) {
    out.v[a] = g[a] / g2;
    for (int b = 0; b < d; ++b) out.dv[a][b] = H[a][b] / g2 - 2.0 * g[a] * Hg[b] / (g2 * g2);
  }
  return out;
}

double det(const Mat3& A, int d) {
  if (d == 2) return A[0][0] * A[1][1] - A[0][1] * A[1][0];
  return A[0][0] * (A[1][1] * A[2][2] - A[1][2] * A[2][1]) -
         A[0][1] * (A[1][0] * A[2][2] - A[1][2] * A[2][0]) +
         A[0][2] * (A[1][0] * A[2][1] - A[1][1] * A[2][0]);
}

double dot(const Point& a, const Point& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

// Matrix with columns dPhi/dx_i and dPhi/dt.
Mat3 jacobian_matrix(const FlowSample& s, int d) {
  Mat3 J{};
  for (int col = 0; col < d; ++col)
    for (int row = 0; row < d; ++row) J[row][col] = s.jac[col][row];
  return J;
}

}  // namespace

AnalyticObstacle AnalyticObstacle::flat(int d) {
  AnalyticObstacle o;
  o.d = d;
  o.phi = Poly(d - 1);
  return o;
}

AnalyticObstacle AnalyticObstacle::univariate(const std::vector<double>& coeffs) {
  AnalyticObstacle o = flat(2);
  for (std::size_t k = 0; k < coeffs.size(); ++k)
    if (coeffs[k] != 0.0) o.phi.add({static_cast<int>(k), 0, 0}, coeffs[k]);
  o.validate();
  return o;
}

void AnalyticObstacle::validate() const {
  if (d != 2 && d != 3) throw ValidationError("obstacle dimension must be 2 or 3");
  if (phi.nvars() != d - 1) throw ValidationError("obstacle must depend on d-1 variables");
  const Point zero{0, 0, 0};
  if (std::abs(phi.value(zero)) > 1e-14) throw ValidationError("obstacle must vanish at the origin");
  const Point g = phi.grad(zero);
  if (std::abs(g[0]) > 1e-14 || std::abs(g[1]) > 1e-14)
    throw ValidationError("obstacle gradient must vanish at the origin");
}

HarmonicExtension HarmonicExtension::from_polynomial(int d, const Poly& m) {
  if (m.nvars() != d) throw ValidationError("extension must depend on d variables");
  // A polynomial is harmonic iff its Laplacian (a polynomial) vanishes; probe it
  // at scattered points well inside the unit box.
  for (int k = 0; k < 27; ++k) {
    const Point x{0.3 * ((k % 3) - 1) + 0.11, 0.3 * ((k / 3 % 3) - 1) + 0.07, 0.3 * (k / 9) + 0.05};
    if (std::abs(m.laplacian(x)) > 1e-9) throw ValidationError("extension is not harmonic");
  }
  HarmonicExtension h;
  h.d = d;
  h.order = m.degree();
  h.m = m;
  return h;
}

nlohmann::json HarmonicExtension::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& t : m.terms()) {
    if (t.c == 0.0) continue;
    std::string key = std::to_string(t.e[0]) + "," + std::to_string(t.e[1]);
    if (d == 3) key += "," + std::to_string(t.e[2]);
    j[key] = t.c;
  }
  return j;
}

HarmonicExtension ck_extend(const AnalyticObstacle& obstacle, int order) {
  if (obstacle.d != 2) throw ValidationError("power-series backend is 2-D only");
  obstacle.validate();
  const int p = order;
  if (p < 1) throw ValidationError("extension order must be positive");

  Series phi(p + 1, 0.0);
  for (const auto& t : obstacle.phi.terms())
    if (t.e[0] <= p) phi[t.e[0]] += t.c;
  Series dphi(p + 1, 0.0);
  for (int k = 1; k <= p; ++k) dphi[k - 1] = k * phi[k];
  const Series normal = sqrt_one_plus(mul(dphi, dphi, p), p);
  std::vector<Series> pw{Series(p + 1, 0.0)};
  pw[0][0] = 1.0;
  for (int k = 1; k <= p; ++k) pw.push_back(mul(pw.back(), phi, p));

  // Coefficients a[j][k] of x^j y^k, determined by the data a[j][0] and a[j][1].
  std::vector<double> alpha(p + 1, 0.0), beta(p + 1, 0.0);
  std::vector<std::vector<double>> a(p + 1, std::vector<double>(p + 1, 0.0));
  auto fill = [&]() {
    for (auto& row : a) std::fill(row.begin(), row.end(), 0.0);
    for (int j = 0; j <= p; ++j) a[j][0] = alpha[j];
    for (int j = 0; j + 1 <= p; ++j) a[j][1] = beta[j];
    for (int k = 0; k + 2 <= p; ++k)
      for (int j = 0; j + k + 2 <= p; ++j)
        a[j][k + 2] = -(j + 2.0) * (j + 1.0) * a[j + 2][k] / ((k + 2.0) * (k + 1.0));
  };
  // [x^n] m(x, phi(x)).
  auto trace_coeff = [&](int n) {
    double s = 0.0;
    for (int j = 0; j <= n; ++j)
      for (int k = 0; j + k <= p; ++k) s += a[j][k] * pw[k][n - j];
    return s;
  };
  // [x^n] (m_y - phi' m_x)(x, phi(x)) - sqrt(1 + phi'^2).
  auto normal_coeff = [&](int n) {
    Series my(p + 1, 0.0), mx(p + 1, 0.0);
    for (int j = 0; j <= p; ++j)
      for (int k = 0; j + k <= p; ++k) {
        if (a[j][k] == 0.0) continue;
        for (int q = 0; q + j <= p; ++q) {
          if (k >= 1) my[j + q] += a[j][k] * k * pw[k - 1][q];
          if (j >= 1) mx[j - 1 + q] += a[j][k] * j * pw[k][q];
        }
      }
    const Series tilt = mul(dphi, mx, p);
    return my[n] - tilt[n] - normal[n];
  };

  for (int n = 0; n <= p; ++n) {
    alpha[n] = 0.0;
    fill();
    const double r0 = trace_coeff(n);
    alpha[n] = 1.0;
    fill();
    const double piv0 = trace_coeff(n) - r0;
    if (std::abs(piv0) < kPivotFloor) throw NumericalError("recursion ill-conditioned", piv0);
    alpha[n] = -r0 / piv0;
    if (n == p) break;
    beta[n] = 0.0;
    fill();
    const double r1 = normal_coeff(n);
    beta[n] = 1.0;
    fill();
    const double piv1 = normal_coeff(n) - r1;
    if (std::abs(piv1) < kPivotFloor) throw NumericalError("recursion ill-conditioned", piv1);
    beta[n] = -r1 / piv1;
  }
  fill();

  HarmonicExtension h;
  h.d = 2;
  h.order = p;
  h.m = Poly(2);
  for (int j = 0; j <= p; ++j)
    for (int k = 0; j + k <= p; ++k)
      if (a[j][k] != 0.0) h.m.add({j, k, 0}, a[j][k]);
  return h;
}

double validity_radius(const HarmonicExtension& m, const AnalyticObstacle& obstacle, double r_max,
                       int samples) {
  const int d = m.d;
  auto ok = [&](double R) {
    const int s = samples;
    const int s2 = (d == 3) ? s : 1;
    for (int i = 0; i < s; ++i)
      for (int j = 0; j < s2; ++j)
        for (int k = 0; k < s; ++k) {
          Point x{0, 0, 0};
          x[0] = -R + 2.0 * R * i / (s - 1);
          if (d == 3) x[1] = -R + 2.0 * R * j / (s - 1);
          const Point xp{x[0], x[1], 0};
          x[d - 1] = R * k / (s - 1);
          if (x[d - 1] < obstacle.value(xp)) continue;
          const Point g = m.grad(x);
          if (std::sqrt(dot(g, g)) < kMinGradient) return false;
        }
    return true;
  };
  if (!ok(1e-6)) return 0.0;
  if (ok(r_max)) return r_max;
  double lo = 1e-6, hi = r_max;
  for (int it = 0; it < 50; ++it) {
    const double mid = 0.5 * (lo + hi);
    (ok(mid) ? lo : hi) = mid;
  }
  return lo;
}

FlowMap flow_map(const HarmonicExtension& m, const AnalyticObstacle& obstacle,
                 const std::vector<Point>& columns, const std::vector<double>& times, double dt) {
  if (m.d != obstacle.d) throw ValidationError("extension and obstacle dimensions differ");
  if (!(dt > 0.0)) throw ValidationError("flow step must be positive");
  if (times.empty() || times.front() != 0.0) throw ValidationError("flow sample times must start at 0");
  for (std::size_t k = 1; k < times.size(); ++k)
    if (!(times[k] > times[k - 1])) throw ValidationError("flow sample times must increase");
  const int d = m.d;
  const int nt = d - 1;  // tangential Jacobian columns

  FlowMap out;
  out.d = d;
  out.dt = dt;
  out.columns = columns;
  out.times = times;
  out.samples.resize(columns.size() * times.size());

  // State: Phi followed by the tangential columns of DPhi.
  using State = std::array<Point, 3>;
  auto rhs = [&](const State& s, State& ds) {
    const Velocity vel = velocity(m, s[0]);
    ds[0] = vel.v;
    for (int i = 0; i < nt; ++i) {
      Point r{0, 0, 0};
      for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b) r[a] += vel.dv[a][b] * s[1 + i][b];
      ds[1 + i] = r;
    }
  };
  auto axpy = [&](const State& s, double c, const State& k) {
    State r = s;
    for (int q = 0; q <= nt; ++q)
      for (int a = 0; a < d; ++a) r[q][a] += c * k[q][a];
    return r;
  };

  for (std::size_t col = 0; col < columns.size(); ++col) {
    const Point& xp = columns[col];
    State s{};
    s[0] = xp;
    s[0][d - 1] = obstacle.value(xp);
    const Point gphi = obstacle.grad(xp);
    for (int i = 0; i < nt; ++i) {
      s[1 + i] = {0, 0, 0};
      s[1 + i][i] = 1.0;
      s[1 + i][d - 1] = gphi[i];
    }
    auto record = [&](std::size_t k) {
      FlowSample& smp = out.samples[col * times.size() + k];
      smp.phi = s[0];
      for (int i = 0; i < nt; ++i) smp.jac[i] = s[1 + i];
      smp.jac[d - 1] = velocity(m, s[0]).v;
    };
    record(0);
    for (std::size_t k = 1; k < times.size(); ++k) {
      const double span = times[k] - times[k - 1];
      const int steps = std::max(1, static_cast<int>(std::ceil(span / dt - 1e-9)));
      const double step = span / steps;
      for (int q = 0; q < steps; ++q) {
        State k1, k2, k3, k4;
        rhs(s, k1);
        rhs(axpy(s, 0.5 * step, k1), k2);
        rhs(axpy(s, 0.5 * step, k2), k3);
        rhs(axpy(s, step, k3), k4);
        for (int p = 0; p <= nt; ++p)
          for (int a = 0; a < d; ++a)
            s[p][a] += step / 6.0 * (k1[p][a] + 2.0 * k2[p][a] + 2.0 * k3[p][a] + k4[p][a]);
      }
      record(k);
    }
  }
  return out;
}

FlowMap flow_for_grid(const HarmonicExtension& m, const AnalyticObstacle& obstacle,
                      const HalfBallGrid& grid, double delta, double dt) {
  const int d = grid.dim();
  std::vector<Point> cols;
  if (d == 2) {
    for (int i = 0; i < grid.node_extent(0); ++i) cols.push_back({delta * grid.coord({i, 0, 0})[0], 0, 0});
  } else {
    for (int i = 0; i < grid.node_extent(0); ++i)
      for (int j = 0; j < grid.node_extent(1); ++j) {
        const Point x = grid.coord({i, j, 0});
        cols.push_back({delta * x[0], delta * x[1], 0});
      }
  }
  std::vector<double> times;
  for (int k = 0; k < grid.node_extent(d - 1); ++k) times.push_back(delta * k * grid.h());
  return flow_map(m, obstacle, cols, times, dt);
}

FlowInvariants check_flow_invariants(const FlowMap& flow, const HarmonicExtension& m,
                                     const AnalyticObstacle& obstacle) {
  const int d = flow.d;
  const std::size_t nt = flow.times.size();
  FlowInvariants inv;
  std::vector<double> q(nt);
  for (std::size_t col = 0; col < flow.columns.size(); ++col) {
    const Point gphi = obstacle.grad(flow.columns[col]);
    for (std::size_t k = 0; k < nt; ++k) {
      const FlowSample& s = flow.at(col, k);
      inv.level = std::max(inv.level, std::abs(m.value(s.phi) - flow.times[k]));
      for (int i = 0; i < d - 1; ++i) inv.orthogonality = std::max(inv.orthogonality, std::abs(dot(s.jac[i], s.jac[d - 1])));
      if (k == 0)
        for (int i = 0; i < d - 1; ++i)
          for (int j = 0; j < d - 1; ++j) {
            const double target = (i == j ? 1.0 : 0.0) + gphi[i] * gphi[j];
            inv.metric = std::max(inv.metric, std::abs(dot(s.jac[i], s.jac[j]) - target));
          }
      const Point g = m.grad(s.phi);
      q[k] = dot(g, g) * det(jacobian_matrix(s, d), d);
    }
    for (std::size_t k = 1; k + 1 < nt; ++k)
      inv.conservation = std::max(inv.conservation, std::abs(q[k + 1] - q[k - 1]) / (flow.times[k + 1] - flow.times[k - 1]));
  }
  return inv;
}

CoefficientSet CoefficientSet::flat(GridPtr g) {
  CoefficientSet c;
  c.identity = true;
  const std::size_t n = g->node_count();
  const int d = g->dim();
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) c.M[a][b].assign(n, a == b && a < d ? 1.0 : 0.0);
  c.Q.assign(n, 0.0);
  c.mu.assign(n, 1.0);
  for (int a = 0; a < 3; ++a) c.F[a].assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const Point x = g->node_coord(i);
    for (int a = 0; a < d; ++a) c.F[a][i] = x[a];
  }
  c.grid = std::move(g);
  return c;
}

Mat3 CoefficientSet::M_at(std::size_t node) const {
  Mat3 A{};
  const int d = grid->dim();
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < d; ++b) A[a][b] = M[a][b][node];
  return A;
}

CoefficientSet assemble_coefficients(const FlowMap& flow, const HarmonicExtension& m, GridPtr grid,
                                     double delta) {
  const HalfBallGrid& g = *grid;
  const int d = g.dim();
  if (flow.d != d) throw ValidationError("flow and grid dimensions differ");
  const std::size_t ncols = (d == 2) ? g.node_extent(0) : std::size_t(g.node_extent(0)) * g.node_extent(1);
  if (flow.columns.size() != ncols || flow.times.size() != std::size_t(g.node_extent(d - 1)))
    throw ValidationError("flow was not sampled on this grid");
  for (std::size_t k = 0; k < flow.times.size(); ++k)
    if (std::abs(flow.times[k] - delta * k * g.h()) > 1e-12) throw ValidationError("flow was sampled with a different scale");

  CoefficientSet c = CoefficientSet::flat(grid);
  c.identity = false;
  const std::size_t nz = g.node_extent(d - 1);
  for (std::size_t i = 0; i < g.node_count(); ++i) {
    const std::size_t col = i / nz, k = i % nz;
    const FlowSample& s = flow.at(col, k);
    Eigen::Matrix2d A2;
    Eigen::Matrix3d J3 = Eigen::Matrix3d::Identity();
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) J3(a, b) = s.jac[b][a];
    const double detJ = J3.topLeftCorner(d, d).determinant();
    const Point gm = m.grad(s.phi);
    const double g2 = dot(gm, gm);
    Mat3 M{};
    if (d == 2) {
      const double A = dot(s.jac[0], s.jac[0]);
      if (A <= 1e-14) throw NumericalError("metric is singular", A);
      M[0][0] = detJ / A;
    } else {
      A2 << dot(s.jac[0], s.jac[0]), dot(s.jac[0], s.jac[1]), dot(s.jac[1], s.jac[0]), dot(s.jac[1], s.jac[1]);
      const double detA = A2.determinant();
      if (detA <= 1e-14) throw NumericalError("metric is singular", detA);
      const Eigen::Matrix2d S = A2.inverse();
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) M[a][b] = detJ * S(a, b);
    }
    M[d - 1][d - 1] = detJ * g2;
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) c.M[a][b][i] = M[a][b];
    c.Q[i] = (1.0 - g2) * detJ;
    const Point x = g.node_coord(i);
    const double r = std::sqrt(norm2(x));
    Point xh{0, 0, 0};
    if (r > 0.0) {
      for (int a = 0; a < d; ++a) xh[a] = x[a] / r;
    } else {
      xh[d - 1] = 1.0;
    }
    double mu = 0.0;
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) mu += xh[a] * M[a][b] * xh[b];
    c.mu[i] = mu;
    for (int a = 0; a < d; ++a) {
      double mx = 0.0;
      for (int b = 0; b < d; ++b) mx += M[a][b] * x[b];
      c.F[a][i] = mx / mu;
    }
  }
  return c;
}

std::array<double, 3> symmetric_eigenvalues(const Mat3& A, int d) {
  Eigen::Matrix3d E = Eigen::Matrix3d::Zero();
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < d; ++b) E(a, b) = A[a][b];
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(E.topLeftCorner(d, d));
  std::array<double, 3> ev{0, 0, 0};
  for (int a = 0; a < d; ++a) ev[a] = es.eigenvalues()(a);
  return ev;
}

CoefficientChecks check_coefficients(const CoefficientSet& c) {
  const HalfBallGrid& g = *c.grid;
  const int d = g.dim();
  CoefficientChecks out;
  out.min_eigenvalue = 1e300;
  out.max_eigenvalue = -1e300;
  for (std::size_t i = 0; i < g.node_count(); ++i) {
    if (!g.active(i)) continue;
    const Mat3 M = c.M_at(i);
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) out.asymmetry = std::max(out.asymmetry, std::abs(M[a][b] - M[b][a]));
    const auto ev = symmetric_eigenvalues(M, d);
    out.min_eigenvalue = std::min(out.min_eigenvalue, ev[0]);
    out.max_eigenvalue = std::max(out.max_eigenvalue, ev[d - 1]);
    const Point x = g.node_coord(i);
    const double r = std::sqrt(norm2(x));
    if (r > 0.0) {
      double fx = 0.0;
      for (int a = 0; a < d; ++a) fx += c.F[a][i] * x[a];
      out.radial_identity = std::max(out.radial_identity, std::abs(fx / r - r));
    }
    if (g.kind(i) == NodeKind::flat) {
      out.q_on_flat = std::max(out.q_on_flat, std::abs(c.Q[i]));
      out.normal_f_on_flat = std::max(out.normal_f_on_flat, std::abs(c.F[d - 1][i]));
    }
  }
  return out;
}

}  // namespace branchlab
