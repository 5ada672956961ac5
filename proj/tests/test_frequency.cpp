#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "branchlab/errors.hpp"
#include "branchlab/frequency.hpp"
#include "branchlab/whitney.hpp"
#include "test_support.hpp"

using namespace branchlab;
using testsupport::homogeneous;
using testsupport::homogeneous_field;

namespace {

constexpr double kPi = std::numbers::pi;

ScalarField xd_field(GridPtr g) {
  const int d = g->dim();
  return ScalarField::from_function(g, [d](const Point& x) { return x[d - 1]; });
}

// Closed forms for phi-weighted integrals on the half disk of radius r.
double phi_area(double r, double u) {
  return kPi * r * r * (u * u / 2 + (1.0 / 6 - u * u / 2 + u * u * u / 3) / (1 - u));
}
double phi_xd(double r, double u) {
  return 2 * r * r * r * (u * u * u / 3 + (1.0 / 12 - u * u * u / 3 + u * u * u * u / 4) / (1 - u));
}

double energy_of(const ScalarField& w, const CoefficientSet& c) {
  return ThinObstacleEnergy(c, NonlinearityModel::off()).value(w.values, nullptr);
}

}  // namespace

TEST_CASE("sharp-limit report of x_d on the unit half disk") {
  auto g = make_grid(2, 128);
  const auto rep = frequency_report(xd_field(g), CoefficientSet::flat(g), 1.0, CutoffProfile::sharp_limit());
  CHECK(rep.H == doctest::Approx(kPi / 2).epsilon(1e-6));
  CHECK(rep.D == doctest::Approx(kPi / 2).epsilon(1e-6));
  CHECK(rep.N == doctest::Approx(1.0).epsilon(1e-6));
  CHECK_FALSE(rep.degenerate);
}

TEST_CASE("B equals H for x_d at quadrature level") {
  auto g = make_grid(2, 64);
  const ScalarField w = xd_field(g);
  const CoefficientSet c = CoefficientSet::flat(g);
  for (const auto& cut : {CutoffProfile::smooth(0.6), CutoffProfile::smooth(0.9), CutoffProfile::sharp_limit()})
    for (double r : {0.3, 0.7}) {
      const auto rep = frequency_report(w, c, r, cut);
      CHECK(std::abs(rep.B - rep.H) <= 1e-12 * rep.H);
    }
}

TEST_CASE("phi-weighted integrals of x_d match closed forms") {
  auto g = make_grid(2, 64);
  const double u = 0.8, r = 0.6;
  const auto rep = frequency_report(xd_field(g), CoefficientSet::flat(g), r, CutoffProfile::smooth(u));
  CHECK(rep.D == doctest::Approx(phi_area(r, u)).epsilon(1e-9));
  // H = (1/(1-u)) int_{u r}^{r} int_0^pi rho^2 sin^2 dtheta drho
  CHECK(rep.H == doctest::Approx(kPi / 2 * (r * r * r - std::pow(u * r, 3)) / (3 * (1 - u))).epsilon(1e-9));
}

TEST_CASE("homogeneous oracles have constant frequency equal to their degree") {
  auto g = make_grid(2, 128);
  const CoefficientSet c = CoefficientSet::flat(g);
  for (double k : {1.5, 2.0, 3.0, 3.5}) {
    const ScalarField w = homogeneous_field(g, k);
    const FrequencyEvaluator ev(w, c);
    for (double r : {0.25, 0.5, 0.75}) {
      const auto rep = ev.report(r, CutoffProfile::smooth(0.9));
      CHECK(rep.N == doctest::Approx(k).epsilon(0.02));
    }
  }
}

TEST_CASE("identity coefficients make every correction integral vanish") {
  auto g = make_grid(2, 64);
  const auto rep = frequency_report(testsupport::random_poly_field(g, 3), CoefficientSet::flat(g), 0.5,
                                    CutoffProfile::smooth(0.9));
  CHECK(rep.e_H == 0.0);
  CHECK(rep.E_M == 0.0);
  CHECK(rep.E_F == 0.0);
  CHECK(rep.E_Q == 0.0);
  CHECK(rep.D_b == 0.0);
  CHECK(rep.flat_inner == 0.0);
}

TEST_CASE("height derivative identity on homogeneous fields") {
  auto g = make_grid(2, 256);
  const CoefficientSet c = CoefficientSet::flat(g);
  for (double k : {1.0, 2.0}) {
    const ScalarField w = k == 1.0 ? xd_field(g) : homogeneous_field(g, 2.0);
    const FrequencyEvaluator ev(w, c);
    for (double r : {0.3, 0.5, 0.7}) CHECK(ev.height_identity(r, CutoffProfile::smooth(0.9)) <= 1e-3);
  }
}

TEST_CASE("assembled identities for x_d with identity coefficients") {
  auto g = make_grid(2, 128);
  const FrequencyEvaluator ev(xd_field(g), CoefficientSet::flat(g));
  const auto cut = CutoffProfile::smooth(0.9);
  for (double r : {0.3, 0.6}) {
    CHECK(ev.height_identity(r, cut) <= 5e-2);
    CHECK(ev.outer_assembled(r, cut) <= 5e-2);
    CHECK(ev.inner_assembled(r, cut) <= 5e-2);
  }
}

TEST_CASE("first variations agree with the assembled identities for curved coefficients") {
  // Two routes: the exact derivative of the discrete energy along the outer and
  // inner directions, against the quadrature formulas with all correction terms.
  auto g = make_grid(2, 128);
  const CoefficientSet c = testsupport::synthetic_coefficients(g);
  const ScalarField w = ScalarField::from_function(
      g, [](const Point& x) { return x[1] + 0.3 * x[0] * x[1] + 0.2 * x[0] * x[0] + 0.1 * x[0]; });
  const FrequencyEvaluator ev(w, c);
  const auto cut = CutoffProfile::smooth(0.8);
  for (double r : {0.3, 0.6}) {
    const auto rep = ev.report(r, cut);
    CHECK(std::abs(rep.E_F) > 1e-3);  // the corrections are not negligible here
    CHECK(std::abs(rep.E_Q) > 1e-3);
    const double dr = ev.radial_step(r);
    auto D = [&](double s) { return ev.report(s, cut).D; };
    const double Dp = (D(r - 2 * dr) - 8 * D(r - dr) + 8 * D(r + dr) - D(r + 2 * dr)) / (12 * dr);
    const double outer = 2.0 * (rep.D - rep.B / r - rep.outer_bulk);
    const double inner = (2 - 2) * rep.D - r * Dp + 2 * rep.A / r + rep.e_I();
    const double og = outer_gateaux(w, c, NonlinearityModel::off(), r, cut);
    const double ig = inner_gateaux(w, c, NonlinearityModel::off(), r, cut);
    CHECK(std::abs(og - outer) <= 2e-3 * std::abs(outer));
    CHECK(std::abs(ig - inner) <= 2e-3 * std::abs(inner));
    CHECK(ev.height_identity(r, cut) <= 1e-5);
  }
}

TEST_CASE("closed-form inner variation matches a symmetric quotient of the pushforward") {
  auto g = make_grid(2, 64);
  const CoefficientSet c = testsupport::synthetic_coefficients(g);
  const ScalarField w = testsupport::random_poly_field(g, 11);
  const auto cut = CutoffProfile::smooth(0.8);
  const double r = 0.6, eps = 1e-6;
  const double plus = energy_of(inner_pushforward(w, c, r, cut, eps), c);
  const double minus = energy_of(inner_pushforward(w, c, r, cut, -eps), c);
  const double quotient = (plus - minus) / (2 * eps);
  const double exact = inner_gateaux(w, c, NonlinearityModel::off(), r, cut);
  CHECK(std::abs(quotient - exact) <= 1e-4 * std::abs(exact) + 1e-8);
  CHECK(inner_pushforward(w, c, r, cut, 0.0).values == w.values);
}

TEST_CASE("first variations vanish at a discrete Signorini minimizer") {
  ThinObstacleProblem p;
  p.coefficients = CoefficientSet::flat(make_grid(2, 64));
  p.datum = [](const Point& x) { return homogeneous(1.5, x); };
  const auto sol = minimize_thin_obstacle(p);
  const auto cut = CutoffProfile::smooth(0.9);
  for (double r : {0.3, 0.6}) {
    const auto o = outer_variation_identity(sol, p.coefficients, r, cut);
    const auto i = inner_variation_identity(sol, p.coefficients, r, cut);
    CHECK(o.gateaux <= 1e-7);
    CHECK(i.gateaux <= 1e-7);
    CHECK(o.assembled <= 5e-2);
    CHECK(i.assembled <= 5e-2);
    CHECK(o.warning.empty());
  }
}

TEST_CASE("outer variation vanishes with the cubic nonlinearity on") {
  ThinObstacleProblem p;
  p.coefficients = CoefficientSet::flat(make_grid(2, 64));
  p.nonlinearity = NonlinearityModel::cubic_default();
  p.datum = [](const Point& x) { return 0.1 * homogeneous(1.5, x); };
  const auto sol = minimize_thin_obstacle(p);
  const auto o = outer_variation_identity(sol, p.coefficients, 0.5, CutoffProfile::smooth(0.9), p.nonlinearity);
  CHECK(o.gateaux <= 1e-7);
  CHECK(std::isnan(o.assembled));
}

TEST_CASE("zero field is degenerate with vanishing residuals") {
  auto g = make_grid(2, 32);
  const ScalarField w = ScalarField::zeros(g);
  const CoefficientSet c = CoefficientSet::flat(g);
  const auto rep = frequency_report(w, c, 0.5, CutoffProfile::smooth(0.9));
  CHECK(rep.degenerate);
  CHECK(std::isnan(rep.N));
  CHECK(rep.H == 0.0);
  CHECK(rep.D == 0.0);
  CHECK(height_derivative_identity(w, c, 0.5, CutoffProfile::smooth(0.9)) == 0.0);
  CHECK(outer_gateaux(w, c, NonlinearityModel::off(), 0.5, CutoffProfile::smooth(0.9)) == 0.0);
  CHECK(inner_gateaux(w, c, NonlinearityModel::off(), 0.5, CutoffProfile::smooth(0.9)) == 0.0);
  const auto scan = monotonicity_scan(w, c, {0.3, 0.5}, CutoffProfile::smooth(0.9), {});
  CHECK(scan.truncated);
  CHECK(scan.radii.empty());
}

TEST_CASE("Cauchy-Schwarz between A, H and B") {
  auto g = make_grid(2, 64);
  const CoefficientSet flat = CoefficientSet::flat(g);
  const CoefficientSet curved = testsupport::synthetic_coefficients(g);
  for (unsigned seed = 1; seed <= 5; ++seed) {
    const ScalarField w = testsupport::random_poly_field(g, seed);
    for (const CoefficientSet* c : {&flat, &curved})
      for (const auto& cut : {CutoffProfile::smooth(0.7), CutoffProfile::sharp_limit()}) {
        const auto rep = frequency_report(w, *c, 0.5, cut);
        CHECK(rep.A * rep.H - rep.B * rep.B >= -1e-10 * rep.A * rep.H);
      }
  }
}

TEST_CASE("scaling law for homogeneous fields") {
  auto g = make_grid(2, 128);
  const CoefficientSet c = CoefficientSet::flat(g);
  const auto cut = CutoffProfile::smooth(0.9);
  for (double k : {1.5, 3.0}) {
    const FrequencyEvaluator ev(homogeneous_field(g, k), c);
    const auto base = ev.report(0.6, cut);
    for (double lam : {0.5, 2.0 / 3.0}) {
      const auto rep = ev.report(0.6 * lam, cut);
      CHECK(rep.H == doctest::Approx(std::pow(lam, 2 + 2 * k - 1) * base.H).epsilon(0.01));
      CHECK(rep.D == doctest::Approx(std::pow(lam, 2 + 2 * k - 2) * base.D).epsilon(0.01));
      CHECK(rep.N == doctest::Approx(base.N).epsilon(0.01));
    }
  }
}

TEST_CASE("frequency does not depend on the cutoff plateau for homogeneous fields") {
  auto g = make_grid(2, 128);
  const CoefficientSet c = CoefficientSet::flat(g);
  for (double k : {1.5, 2.0, 3.5}) {
    const FrequencyEvaluator ev(homogeneous_field(g, k), c);
    for (double r : {0.3, 0.6})
      CHECK(ev.report(r, CutoffProfile::smooth(0.8)).N ==
            doctest::Approx(ev.report(r, CutoffProfile::smooth(0.95)).N).epsilon(0.02));
  }
}

TEST_CASE("frequency inputs are validated") {
  auto g = make_grid(2, 32);
  const ScalarField w = xd_field(g);
  const CoefficientSet c = CoefficientSet::flat(g);
  CHECK_THROWS_AS(frequency_report(w, c, 0.0, CutoffProfile::smooth(0.9)), ValidationError);
  CHECK_THROWS_AS(frequency_report(w, c, 1.5, CutoffProfile::smooth(0.9)), ValidationError);
  CHECK_THROWS_AS(frequency_report(w, c, 0.5, CutoffProfile{0.3, false}), ValidationError);
  CHECK_THROWS_AS(frequency_report(w, CoefficientSet::flat(make_grid(2, 16)), 0.5, CutoffProfile::smooth(0.9)),
                  ValidationError);
  CHECK_THROWS_AS(monotonicity_scan(w, c, {0.5, 0.4}, CutoffProfile::smooth(0.9), {}), ValidationError);
  CHECK_THROWS_AS(monotonicity_scan(w, c, {0.5}, CutoffProfile::smooth(0.9), {1.0, 1.5}), ValidationError);
}

TEST_CASE("trace and height inequalities for the constant field") {
  auto g = make_grid(2, 64);
  const double u = 0.9;
  const auto rep = inequality_diagnostics(ScalarField::from_function(g, [](const Point&) { return 1.0; }),
                                        CoefficientSet::flat(g), {0.3, 0.5, 0.7}, CutoffProfile::smooth(u));
  CHECK(rep.all_trace);
  for (const auto& row : rep.rows) {
    CHECK(row.trace_lhs == doctest::Approx(row.r * (1 + u)).epsilon(1e-9));
    CHECK(row.trace_rhs == doctest::Approx(2 * 8 / row.r * phi_area(row.r, u)).epsilon(1e-9));
  }
}

TEST_CASE("height inequality and frequency lower bound for oracles") {
  auto g = make_grid(2, 64);
  const CoefficientSet c = CoefficientSet::flat(g);
  const auto xd = inequality_diagnostics(xd_field(g), c, {0.3, 0.5, 0.7}, CutoffProfile::smooth(0.9));
  CHECK(xd.min_mu == 1.0);
  CHECK(xd.all_height);
  for (const auto& row : xd.rows) {
    CHECK(std::isfinite(row.height_constant));
    CHECK(row.height_constant <= 1.0);
    CHECK(row.boundary_control == 0.0);
  }
  const auto o = inequality_diagnostics(homogeneous_field(g, 1.5), c, {0.3, 0.5, 0.7}, CutoffProfile::smooth(0.9));
  for (const auto& row : o.rows) CHECK(row.lower_bound == doctest::Approx(o.rows[0].lower_bound).epsilon(0.01));
  CHECK(o.rows[0].lower_bound == doctest::Approx(1.5).epsilon(0.02));
}

TEST_CASE("monotonicity scan on homogeneous fields") {
  auto g = make_grid(2, 128);
  const CoefficientSet c = CoefficientSet::flat(g);
  std::vector<double> radii;
  for (int k = 0; k < 12; ++k) radii.push_back(0.2 + 0.05 * k);
  for (double k : {1.0, 1.5}) {
    const ScalarField w = k == 1.0 ? xd_field(g) : homogeneous_field(g, 1.5);
    const auto scan = monotonicity_scan(w, c, radii, CutoffProfile::smooth(0.9), {1.0, 0.5});
    CHECK(scan.min_C == 0.0);
    CHECK(scan.feasible);
    CHECK(scan.monotone_uncorrected);
    CHECK(scan.N0 == doctest::Approx(k).epsilon(0.02));
    CHECK(scan.radii.size() == radii.size());
  }
}

TEST_CASE("minimal monotonicity constant makes exp(g) N nondecreasing") {
  auto g = make_grid(2, 64);
  const CoefficientSet c = CoefficientSet::flat(g);
  // Not harmonic: an oscillating degree-one term with large Dirichlet quotient
  // dominates near the origin, so N decreases with r.
  const ScalarField w = ScalarField::from_function(g, [](const Point& x) {
    const double r = std::hypot(x[0], x[1]), t = std::atan2(x[1], x[0]);
    return 0.1 * r * std::sin(5 * t) + homogeneous(1.5, x);
  });
  std::vector<double> radii;
  for (int k = 0; k < 10; ++k) radii.push_back(0.3 + 0.05 * k);
  const FrequencyConstants k{1.0, 0.5};
  const auto scan = monotonicity_scan(w, c, radii, CutoffProfile::smooth(0.9), k, 1e-3);
  CHECK_FALSE(scan.monotone_uncorrected);
  CHECK(scan.max_drop > 1e-3);
  REQUIRE(scan.feasible);
  CHECK(scan.min_C > 0.0);
  double tightest = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < scan.N.size(); ++i) {
    const double a = scan.min_C * scan.gamma[i] + std::log(scan.N[i]);
    const double b = scan.min_C * scan.gamma[i + 1] + std::log(scan.N[i + 1]);
    CHECK(b >= a - 1e-3 - 1e-12);
    tightest = std::min(tightest, b - a + 1e-3);
  }
  // Minimality: some constraint is active.
  CHECK(tightest <= 1e-9);
  CHECK(scan.g[0] == doctest::Approx(scan.gamma[0]));
}

TEST_CASE("extrapolation of N to the origin") {
  CHECK(extrapolate_to_zero({0.1, 0.2, 0.3, 0.4}, {1.1, 1.2, 1.3, 1.4}) == doctest::Approx(1.0));
  CHECK(extrapolate_to_zero({0.5}, {2.0}) == 2.0);
}

TEST_CASE("error-term integrals") {
  auto g = make_grid(2, 64);
  const CoefficientSet c = CoefficientSet::flat(g);
  const std::vector<double> radii{0.3, 0.4, 0.5, 0.6, 0.7};
  const auto cut = CutoffProfile::smooth(0.9);

  const auto zero = error_term_report(ScalarField::zeros(g), c, radii, cut);
  REQUIRE(zero.bounds.size() == 5);
  for (const auto& b : zero.bounds)
    for (double v : b.integral) CHECK(v == 0.0);

  const auto xd = error_term_report(xd_field(g), c, radii, cut);
  for (std::size_t k = 0; k < radii.size(); ++k)
    CHECK(xd.bounds[0].integral[k] == doctest::Approx(phi_area(radii[k], 0.9) + phi_xd(radii[k], 0.9)).epsilon(1e-9));

  const auto o = error_term_report(homogeneous_field(g, 1.5), c, radii, cut);
  for (int t : {0, 3}) {
    CHECK(o.bounds[t].kappa > 0.0);
    CHECK(o.bounds[t].kappa < 1.0);
    for (double lk : o.bounds[t].local_kappa) {
      CHECK(lk > 0.0);
      CHECK(std::abs(lk - o.bounds[t].kappa) <= 0.1);
    }
  }
  CHECK(std::isnan(o.bounds[2].kappa));
  CHECK(o.cube_factor.empty());
}

TEST_CASE("error-term report with a decomposition fills the cube factor") {
  auto g = make_grid(2, 64);
  const ScalarField w = homogeneous_field(g, 1.5, 0.1);
  WhitneyParams p;
  p.C0 = 0.2;
  p.alpha = 0.45;
  p.j_max = 3;
  const auto dec = whitney_decompose(w, p);
  const auto rep = error_term_report(w, CoefficientSet::flat(g), {0.3, 0.6}, CutoffProfile::smooth(0.9), &dec);
  REQUIRE(rep.cube_factor.size() == 2);
  CHECK(rep.cube_factor[0] > 0.0);
  CHECK(rep.cube_factor[1] > rep.cube_factor[0]);
}
