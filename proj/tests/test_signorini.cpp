#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cmath>

#include "branchlab/errors.hpp"
#include "branchlab/signorini.hpp"

using namespace branchlab;

namespace {

// -r^{3/2} sin(3 theta / 2), theta measured from the positive x1 axis.
double oracle32(const Point& x) {
  const double r = std::hypot(x[0], x[1]);
  const double th = std::atan2(x[1], x[0]);
  return -std::pow(r, 1.5) * std::sin(1.5 * th);
}

ThinObstacleProblem linear_problem(int n, std::function<double(const Point&)> datum) {
  ThinObstacleProblem p;
  p.coefficients = CoefficientSet::flat(make_grid(2, n));
  p.datum = std::move(datum);
  return p;
}

double linf_error(const ThinObstacleSolution& s, const std::function<double(const Point&)>& f) {
  const HalfBallGrid& g = *s.w.grid;
  double e = 0.0;
  for (std::size_t i = 0; i < g.node_count(); ++i)
    if (g.unknown(i)) e = std::max(e, std::abs(s.w[i] - f(g.node_coord(i))));
  return e;
}

}  // namespace

TEST_CASE("nonlinearity terms are homogeneous of their degree") {
  CHECK(NonlinearityModel::cubic_default().homogeneity_defect(2) <= 1e-12);
  CHECK(NonlinearityModel::cubic_default().homogeneity_defect(3) <= 1e-12);
  NonlinearityModel m;
  m.enabled = true;
  NonlinearTerm t;
  t.k = 2;
  t.P = Poly(2);
  t.P.add({2, 0, 0}, 1.0);
  t.P.add({1, 1, 0}, -0.5);
  m.terms.push_back(t);
  CHECK(m.homogeneity_defect(2) <= 1e-12);
  m.terms[0].P.add({1, 0, 0}, 1.0);  // breaks 2-homogeneity
  CHECK(m.homogeneity_defect(2) > 1e-3);
}

TEST_CASE("energy gradient and Hessian match finite differences") {
  const GridPtr g = make_grid(2, 8);
  CoefficientSet c = CoefficientSet::flat(g);
  c.identity = false;
  for (std::size_t i = 0; i < g->node_count(); ++i) {
    const Point x = g->node_coord(i);
    c.M[0][0][i] = 1.0 + 0.2 * x[0];
    c.M[0][1][i] = c.M[1][0][i] = 0.1 * x[1];
    c.M[1][1][i] = 1.1;
    c.Q[i] = 0.3 * x[1] * x[1];
  }
  const ThinObstacleEnergy E(c, NonlinearityModel::cubic_default());
  std::vector<double> w(g->node_count());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const Point x = g->node_coord(i);
    w[i] = 0.1 * std::sin(3 * x[0] + x[1]) + 0.05 * x[1];
  }
  std::vector<double> grad;
  E.value(w, &grad);
  std::vector<int> var(w.size(), -1);
  std::vector<std::size_t> probes;
  for (std::size_t i = 0; i < w.size(); ++i)
    if (g->unknown(i) && probes.size() < 12) {
      var[i] = static_cast<int>(probes.size());
      probes.push_back(i);
    }
  std::vector<HessianEntry> H;
  E.hessian(w, var, H);
  const double s = 1e-5;
  for (std::size_t k = 0; k < probes.size(); ++k) {
    const std::size_t i = probes[k];
    auto wp = w, wm = w;
    wp[i] += s;
    wm[i] -= s;
    CHECK(grad[i] == doctest::Approx((E.value(wp, nullptr) - E.value(wm, nullptr)) / (2 * s)).epsilon(1e-6));
    std::vector<double> gp, gm;
    E.value(wp, &gp);
    E.value(wm, &gm);
    for (std::size_t l = 0; l < probes.size(); ++l) {
      double hkl = 0.0;
      for (const HessianEntry& e : H)
        if (e.row == static_cast<int>(k) && e.col == static_cast<int>(l)) hkl += e.value;
      CHECK(hkl == doctest::Approx((gp[probes[l]] - gm[probes[l]]) / (2 * s)).epsilon(1e-5).scale(1e-3));
    }
  }
}

TEST_CASE("linear baseline recovers the 3/2 oracle with the expected active set") {
  const int n = 64;
  auto t0 = std::chrono::steady_clock::now();
  const ThinObstacleSolution s = minimize_thin_obstacle(linear_problem(n, oracle32));
  const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double err = linf_error(s, oracle32);
  MESSAGE("n=64 Linf=" << err << " (" << err * n << " h) iters=" << s.iterations << " t=" << sec);
  // Refinement study below: err = 1.0e-4, 3.6e-5, 1.3e-5 at n = 32, 64, 128, i.e.
  // 0.0033 h, 0.0023 h, 0.0016 h; the rate is h^{3/2} from the origin.
  CHECK(err <= 0.01 / n);
  CHECK(s.residual <= 1e-8);
  const HalfBallGrid& g = *s.w.grid;
  for (std::size_t i = 0; i < g.node_count(); ++i) {
    if (g.kind(i) != NodeKind::flat) continue;
    const double x1 = g.node_coord(i)[0];
    const bool active = std::find(s.active.begin(), s.active.end(), i) != s.active.end();
    if (x1 >= 0.0) CHECK(active);
    // w = |x1|^{3/2} on the negative axis exceeds tau beyond 10^{2/3} h
    if (x1 < -5.0 / n) CHECK(!active);
  }
  CHECK(vi_residual(s.w, CoefficientSet::flat(s.w.grid), NonlinearityModel::off()) >= -1e-8);
}

TEST_CASE("3/2 oracle error decreases under refinement") {
  std::vector<double> errs;
  for (int n : {32, 64, 128}) errs.push_back(linf_error(minimize_thin_obstacle(linear_problem(n, oracle32)), oracle32));
  MESSAGE("errors " << errs[0] << " " << errs[1] << " " << errs[2] << " ratios " << errs[0] / errs[1] << " "
                    << errs[1] / errs[2]);
  CHECK(errs[0] / errs[1] >= 1.3);
  CHECK(errs[1] / errs[2] >= 1.3);
  CHECK(errs[2] <= 0.01 / 128);
}

TEST_CASE("zero datum gives zero solution and zero VI residual") {
  const ThinObstacleSolution s = minimize_thin_obstacle(linear_problem(32, [](const Point&) { return 0.0; }));
  for (double v : s.w.values) CHECK(v == 0.0);
  CHECK(vi_residual(s.w, CoefficientSet::flat(s.w.grid), NonlinearityModel::off()) == 0.0);
}

// Even reflection across the flat part turns the x_d datum into |sin theta| on
// the circle; its Poisson extension is 2/pi - (4/pi) sum r^{2k} cos(2k theta) / (4k^2 - 1),
// positive on the flat part, with half-disk Dirichlet energy
// (pi/2) sum 2k (4/pi)^2 / (4k^2 - 1)^2 = 2/pi (the sum telescopes to 1/8).
double reflected_xd(const Point& x) {
  const double r = std::min(1.0, std::hypot(x[0], x[1]));
  const double th = std::atan2(x[1], x[0]);
  double s = 2.0 / M_PI;
  double rk = 1.0;
  for (int k = 1; k <= 4000; ++k) {
    rk *= r * r;
    if (rk < 1e-17) break;
    s -= 4.0 / M_PI * rk * std::cos(2 * k * th) / (4.0 * k * k - 1.0);
  }
  return s;
}

TEST_CASE("x_d datum: x_d itself violates the inequality, the minimizer is the reflected extension") {
  const int n = 64;
  const GridPtr g = make_grid(2, n);
  const ScalarField xd = ScalarField::from_function(g, [](const Point& x) { return x[1]; });
  const ThinObstacleEnergy E(CoefficientSet::flat(g), NonlinearityModel::off());
  CHECK(std::abs(E.value(xd.values, nullptr) - M_PI / 2) <= 4.0 / n);
  // d_d x_d = 1 > 0 where x_d = 0 on the flat part: raising w there lowers the energy.
  CHECK(vi_residual(xd, CoefficientSet::flat(g), NonlinearityModel::off()) < -1e-4);

  const ThinObstacleSolution s = minimize_thin_obstacle(linear_problem(n, [](const Point& x) { return x[1]; }));
  const double err = std::max(0.0, [&] {
    double e = 0.0;
    for (std::size_t i = 0; i < g->node_count(); ++i)
      if (g->unknown(i) && std::hypot(g->node_coord(i)[0], g->node_coord(i)[1]) < 0.999)
        e = std::max(e, std::abs(s.w[i] - reflected_xd(g->node_coord(i))));
    return e;
  }());
  MESSAGE("reflected x_d: Linf=" << err << " F=" << s.energy.F << " vs " << 2.0 / M_PI);
  // Rim nodes hold x_d itself, which differs from the minimizer by O(h) there.
  CHECK(err <= 4.0 / n);
  CHECK(std::abs(s.energy.F - 2.0 / M_PI) <= 4.0 / n);
  CHECK(s.w[g->node_index(g->nearest({0, 0, 0}))] == doctest::Approx(2.0 / M_PI).epsilon(3.0 / n));
  // constraint inactive away from the rim where the datum vanishes
  for (std::size_t i : s.active) CHECK(std::abs(g->node_coord(i)[0]) > 0.9);
}

TEST_CASE("linear baseline is positively homogeneous in the datum") {
  const int n = 32;
  const ThinObstacleSolution a = minimize_thin_obstacle(linear_problem(n, oracle32));
  const ThinObstacleSolution b =
      minimize_thin_obstacle(linear_problem(n, [](const Point& x) { return 2.0 * oracle32(x); }));
  double worst = 0.0;
  for (std::size_t i = 0; i < a.w.values.size(); ++i) worst = std::max(worst, std::abs(b.w[i] - 2.0 * a.w[i]));
  CHECK(worst <= 1e-9);
  for (std::size_t i = 0; i < a.w.values.size(); ++i) CHECK((a.w[i] == 0.0) == (b.w[i] == 0.0));
}

TEST_CASE("perturbing a minimizer at an interior node is detected") {
  ThinObstacleSolution s = minimize_thin_obstacle(linear_problem(32, oracle32));
  const HalfBallGrid& g = *s.w.grid;
  const std::size_t i = g.node_index(g.nearest({0.1, 0.4, 0}));
  s.w[i] += 0.01;
  CHECK(vi_residual(s.w, CoefficientSet::flat(s.w.grid), NonlinearityModel::off()) < -1e-4);
}

TEST_CASE("cubic nonlinearity: converged, within the cap, energy nonincreasing") {
  ThinObstacleProblem p = linear_problem(32, [](const Point& x) { return 0.1 * oracle32(x); });
  p.nonlinearity = NonlinearityModel::cubic_default();
  const ThinObstacleSolution s = minimize_thin_obstacle(p);
  CHECK(s.residual <= 1e-8);
  CHECK(s.energy.E != 0.0);
  for (std::size_t k = 1; k < s.history.size(); ++k) CHECK(s.history[k] <= s.history[k - 1] + 1e-14);
  const ThinObstacleEnergy E(p.coefficients, p.nonlinearity);
  CHECK(E.max_gradient(s.w.values) <= 0.5);
  CHECK(vi_residual(s.w, p.coefficients, p.nonlinearity) >= -1e-8);
  const HalfBallGrid& g = *s.w.grid;
  for (std::size_t i = 0; i < g.node_count(); ++i)
    if (g.kind(i) == NodeKind::flat) CHECK(s.w[i] >= 0.0);
}

TEST_CASE("Lipschitz cap: steep start rejected, unbounded pull reported") {
  ThinObstacleProblem p = linear_problem(16, [](const Point& x) { return oracle32(x); });
  p.nonlinearity = NonlinearityModel::cubic_default();
  CHECK_THROWS_AS(minimize_thin_obstacle(p), ValidationError);

  // d_d Q = 40 rewards w^2 on the flat part without bound; only the cap stops it.
  ThinObstacleProblem q = linear_problem(16, [](const Point& x) { return 0.2 * x[1]; });
  q.nonlinearity = NonlinearityModel::cubic_default();
  q.coefficients.identity = false;
  for (std::size_t i = 0; i < q.coefficients.Q.size(); ++i) q.coefficients.Q[i] = 40.0 * q.coefficients.grid->node_coord(i)[1];
  BoxOptions o;
  o.max_iter = 60;
  try {
    minimize_thin_obstacle(q, o);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("Lipschitz cap") != std::string::npos);
  }
}

TEST_CASE("assumption report on closed-form fields") {
  const GridPtr g = make_grid(2, 64);
  const AssumptionReport a = validate_assumptions(ScalarField::from_function(g, oracle32), 10.0);
  CHECK(a.w0 == 0.0);
  CHECK(a.branching);
  CHECK(a.nondegenerate);
  const AssumptionReport b = validate_assumptions(ScalarField::from_function(g, [](const Point& x) { return x[1]; }), 10.0);
  CHECK(b.grad0[1] == doctest::Approx(1.0));
  CHECK(!b.branching);
  const AssumptionReport c = validate_assumptions(ScalarField::zeros(g), 10.0);
  CHECK(!c.nondegenerate);
  CHECK(c.within_delta);
}
