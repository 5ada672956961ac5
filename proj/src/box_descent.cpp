#include "branchlab/box_descent.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "branchlab/errors.hpp"

namespace branchlab {

namespace {

constexpr double kArmijo = 1e-4;
constexpr int kMaxHalvings = 60;
constexpr double kAlphaMin = 1e-12;
constexpr double kAlphaMax = 1e12;

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

bool at_bound(double x, double lower) { return std::isfinite(lower) && x <= lower; }

}  // namespace

double projected_residual(const std::vector<double>& x, const std::vector<double>& g,
                          const std::vector<double>& lower, const std::vector<double>& scale) {
  double r = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double gi = at_bound(x[i], lower[i]) ? std::max(0.0, -g[i]) : std::abs(g[i]);
    r = std::max(r, gi / scale[i]);
  }
  return r;
}

BoxResult minimize_box(const BoxProblem& P, std::vector<double> x, const BoxOptions& opt) {
  const std::size_t n = P.n;
  if (x.size() != n || P.lower.size() != n || P.scale.size() != n)
    throw ValidationError("box problem sizes disagree");
  for (std::size_t i = 0; i < n; ++i) x[i] = std::max(x[i], P.lower[i]);
  if (P.admissible && !P.admissible(x)) throw NumericalError("initial point is not admissible");

  BoxResult out;
  std::vector<double> g(n), gnew(n), xnew(n), dir(n);
  double E = P.energy(x, &g);
  out.history.push_back(E);
  double res = projected_residual(x, g, P.lower, P.scale);
  double alpha = 1.0;
  bool alpha_set = false;

  auto project_step = [&](double t, bool newton) {
    for (std::size_t i = 0; i < n; ++i) {
      const double step = newton ? t * dir[i] : -t * alpha * g[i];
      xnew[i] = std::max(x[i] + step, P.lower[i]);
    }
  };

  // Tries a projected line search along the current direction; returns success.
  auto line_search = [&](bool newton) {
    double t = 1.0;
    for (int k = 0; k < kMaxHalvings; ++k, t *= 0.5) {
      project_step(t, newton);
      if (P.admissible && !P.admissible(xnew)) {
        ++out.rejected_steps;
        continue;
      }
      const double Enew = P.energy(xnew, &gnew);
      double decrease = 0.0;
      for (std::size_t i = 0; i < n; ++i) decrease += g[i] * (xnew[i] - x[i]);
      const double slack = (newton && k == 0) ? 1e-14 * std::max(1.0, std::abs(E)) : 0.0;
      if (Enew <= E + kArmijo * decrease + slack && Enew <= E + slack) {
        std::vector<double> s(n), y(n);
        for (std::size_t i = 0; i < n; ++i) {
          s[i] = xnew[i] - x[i];
          y[i] = gnew[i] - g[i];
        }
        const double sy = dot(s, y), ss = dot(s, s);
        if (sy > 0.0) alpha = std::clamp(ss / sy, kAlphaMin, kAlphaMax);
        alpha_set = true;
        x.swap(xnew);
        g.swap(gnew);
        E = Enew;
        return true;
      }
    }
    return false;
  };

  auto newton_direction = [&]() {
    std::vector<int> map(n, -1);
    int nf = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (!(at_bound(x[i], P.lower[i]) && g[i] > 0.0)) map[i] = nf++;
    if (nf == 0) return false;
    std::vector<HessianEntry> entries;
    P.hessian(x, entries);
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(entries.size());
    for (const auto& e : entries) {
      const int r = map[e.row], c = map[e.col];
      if (r >= 0 && c >= 0) trip.emplace_back(r, c, e.value);
    }
    Eigen::SparseMatrix<double> H(nf, nf);
    H.setFromTriplets(trip.begin(), trip.end());
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(H);
    if (ldlt.info() != Eigen::Success) return false;
    if ((ldlt.vectorD().array() <= 0.0).any()) return false;
    Eigen::VectorXd rhs(nf);
    for (std::size_t i = 0; i < n; ++i)
      if (map[i] >= 0) rhs(map[i]) = -g[i];
    const Eigen::VectorXd sol = ldlt.solve(rhs);
    if (ldlt.info() != Eigen::Success) return false;
    for (std::size_t i = 0; i < n; ++i) dir[i] = map[i] >= 0 ? sol(map[i]) : 0.0;
    return dot(g, dir) < 0.0;
  };

  if (!alpha_set) {
    const double gmax = std::abs(*std::max_element(g.begin(), g.end(), [](double a, double b) { return std::abs(a) < std::abs(b); }));
    double xmax = 0.0;
    for (double v : x) xmax = std::max(xmax, std::abs(v));
    alpha = gmax > 0.0 ? std::clamp(1e-2 * std::max(xmax, 1e-3) / gmax, kAlphaMin, kAlphaMax) : 1.0;
  }

  int it = 0;
  for (; it < opt.max_iter; ++it) {
    if (res <= opt.tol) {
      out.converged = true;
      break;
    }
    bool moved = false;
    if (opt.newton && P.hessian && it >= opt.bb_iter && newton_direction()) moved = line_search(true);
    if (!moved) moved = line_search(false);
    if (!moved) break;
    out.history.push_back(E);
    res = projected_residual(x, g, P.lower, P.scale);
  }
  if (!out.converged && res <= opt.tol) out.converged = true;
  out.x = std::move(x);
  out.energy = E;
  out.residual = res;
  out.iterations = it;
  return out;
}

}  // namespace branchlab
