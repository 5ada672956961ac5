/// Field core: cut-cell mask, quadrature, differencing, sampling, CSV I/O.

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "branchlab/errors.hpp"
#include "branchlab/grid.hpp"
#include "branchlab/quadrature.hpp"

using namespace branchlab;

namespace {

constexpr double kPi = std::numbers::pi;

double oracle_three_halves(const Point& x) {
  const double r = std::hypot(x[0], x[1]);
  return -std::pow(r, 1.5) * std::sin(1.5 * std::atan2(x[1], x[0]));
}

// Brute-force area of rectangle-disk intersection by fine midpoint sampling.
double sampled_rect_disk_area(double x0, double x1, double y0, double y1, double R, int m) {
  double hits = 0;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      const double x = x0 + (i + 0.5) * (x1 - x0) / m, y = y0 + (j + 0.5) * (y1 - y0) / m;
      if (x * x + y * y < R * R) hits += 1;
    }
  return hits * (x1 - x0) * (y1 - y0) / (double(m) * m);
}

}  // namespace

TEST_CASE("rectangle-disk area matches brute-force sampling") {
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> u(-1.3, 1.3);
  for (int k = 0; k < 40; ++k) {
    double x0 = u(rng), x1 = u(rng), y0 = u(rng), y1 = u(rng);
    if (x0 > x1) std::swap(x0, x1);
    if (y0 > y1) std::swap(y0, y1);
    const double exact = rect_disk_area(x0, x1, y0, y1, 1.0);
    const double sampled = sampled_rect_disk_area(x0, x1, y0, y1, 1.0, 1500);
    CHECK(exact == doctest::Approx(sampled).epsilon(0).scale(1.0).epsilon(2e-3));
  }
  CHECK(rect_disk_area(-2, 2, -2, 2, 1.0) == doctest::Approx(kPi).epsilon(1e-14));
}

TEST_CASE("cut-cell weights sum to the half-ball volume") {
  auto g2 = make_grid(2, 256);
  CHECK(std::abs(g2->stats().volume - kPi / 2) <= 4 * g2->h());
  CHECK(std::abs(g2->stats().volume - kPi / 2) <= 1e-12);
  auto g3 = make_grid(3, 48);
  CHECK(std::abs(g3->stats().volume - 2 * kPi / 3) <= 4 * g3->h());
}

TEST_CASE("mask is symmetric under tangential reflection") {
  for (int d : {2, 3}) {
    auto g = make_grid(d, d == 2 ? 64 : 16);
    for (std::size_t i = 0; i < g->node_count(); ++i) {
      Index idx = g->node_multi(i);
      for (int a = 0; a < d - 1; ++a) {
        Index m = idx;
        m[a] = g->node_extent(a) - 1 - idx[a];
        const std::size_t j = g->node_index(m);
        REQUIRE(g->kind(i) == g->kind(j));
        REQUIRE(g->active(i) == g->active(j));
      }
    }
    for (std::size_t c = 0; c < g->cell_count(); ++c) {
      Index idx = g->cell_multi(c);
      idx[0] = g->cell_extent(0) - 1 - idx[0];
      REQUIRE(g->cell_weight(c) == g->cell_weight(g->cell_index(idx)));
    }
  }
}

TEST_CASE("integrate reproduces volume and first moment") {
  auto g = make_grid(2, 256);
  const double h = g->h();
  CHECK(std::abs(integrate(ScalarField::from_function(g, [](const Point&) { return 1.0; })) - kPi / 2) <= 4 * h);
  CHECK(std::abs(integrate(ScalarField::from_function(g, [](const Point& x) { return x[1]; })) - 2.0 / 3.0) <= 4 * h);
  CHECK(integrate(ScalarField::zeros(g)) == 0.0);
  auto g3 = make_grid(3, 32);
  CHECK(std::abs(integrate(ScalarField::from_function(g3, [](const Point& x) { return x[2]; })) - kPi / 4) <= 4 * g3->h());
}

TEST_CASE("incompatible grids are rejected") {
  auto a = ScalarField::zeros(make_grid(2, 16));
  auto b = ScalarField::zeros(make_grid(2, 32));
  CHECK_THROWS_WITH_AS(integrate(a, &b), "incompatible grids", ValidationError);
}

TEST_CASE("gradient is exact on affine and quadratic samples") {
  auto g = make_grid(2, 256);
  auto sq = ScalarField::from_function(g, [](const Point& x) { return x[0] * x[0]; });
  const auto grad = gradient(sq);
  const std::size_t node = g->node_index(g->nearest({0.5, 0.25, 0}));
  CHECK(grad.comp[0][node] == 1.0);
  auto aff = ScalarField::from_function(g, [](const Point& x) { return 2.0 * x[0] - 3.0 * x[1] + 0.5; });
  const auto ga = gradient(aff);
  for (std::size_t i = 0; i < g->node_count(); ++i) {
    REQUIRE(ga.comp[0][i] == doctest::Approx(2.0).epsilon(1e-10));
    REQUIRE(ga.comp[1][i] == doctest::Approx(-3.0).epsilon(1e-10));
  }
}

TEST_CASE("gradient error on the three-halves profile is first order away from the origin") {
  double prev = 0.0;
  for (int n : {32, 64, 128}) {
    auto g = make_grid(2, n);
    auto w = ScalarField::from_function(g, oracle_three_halves);
    const auto gw = gradient(w);
    double err = 0.0;
    for (std::size_t i = 0; i < g->node_count(); ++i) {
      const Point x = g->node_coord(i);
      const double r = std::hypot(x[0], x[1]);
      if (r < 0.25 || !g->unknown(i)) continue;
      const double th = std::atan2(x[1], x[0]);
      // grad of -r^{3/2} sin(3 th / 2) in Cartesian components.
      const double gx = -1.5 * std::sqrt(r) * std::sin(0.5 * th);
      const double gy = -1.5 * std::sqrt(r) * std::cos(0.5 * th);
      err = std::max(err, std::hypot(gw.comp[0][i] - gx, gw.comp[1][i] - gy));
    }
    const double C = err / g->h();
    MESSAGE("n=" << n << " gradient error constant C=" << C);
    CHECK(C <= 1.0);
    if (prev > 0.0) CHECK(err <= 0.6 * prev);
    prev = err;
  }
}

TEST_CASE("flat-boundary integration with the sharp cutoff") {
  auto g = make_grid(2, 128);
  const double h = g->h();
  const auto sharp = CutoffProfile::sharp_limit();
  CHECK(std::abs(boundary_integrate_flat(ScalarField::from_function(g, [](const Point&) { return 1.0; }), 1.0, sharp) - 2.0) <= 4 * h);
  CHECK(std::abs(boundary_integrate_flat(ScalarField::from_function(g, [](const Point& x) { return x[0]; }), 1.0, sharp)) <= 1e-12);
  CHECK(std::abs(boundary_integrate_flat(ScalarField::from_function(g, [](const Point& x) { return x[0] * x[0]; }), 1.0, sharp) - 2.0 / 3.0) <= 4 * h);
  CHECK_THROWS_AS(boundary_integrate_flat(ScalarField::zeros(g), 0.0, sharp), ValidationError);
  // Smooth cutoff: integral of phi(|x1|/r) over (-r, r) is r (1 + upsilon).
  const auto smooth = CutoffProfile::smooth(0.8);
  CHECK(boundary_integrate_flat(ScalarField::from_function(g, [](const Point&) { return 1.0; }), 0.5, smooth) ==
        doctest::Approx(0.5 * 1.8).epsilon(1e-12));
}

TEST_CASE("cutoff profile") {
  const auto c = CutoffProfile::smooth(0.9);
  CHECK(c.phi(0.5) == 1.0);
  CHECK(c.phi(0.95) == doctest::Approx(0.5));
  CHECK(c.phi(1.2) == 0.0);
  CHECK(c.dphi(0.95) == doctest::Approx(-10.0));
  CHECK_THROWS_AS(CutoffProfile::smooth(0.3), ValidationError);
  CHECK_THROWS_AS(CutoffProfile::smooth(1.0), ValidationError);
}

TEST_CASE("polar quadrature measures half balls, flat disks and half spheres") {
  for (int d : {2, 3}) {
    const double r = 0.7, h = 1.0 / 64;
    double vol = 0, flat = 0, sph = 0;
    visit_half_ball(d, r, {0.5}, h, [&](const Point&, double, double w) { vol += w; });
    visit_flat_disk(d, r, {0.5}, h, [&](const Point&, double, double w) { flat += w; });
    visit_half_sphere(d, r, h, [&](const Point&, double, double w) { sph += w; });
    if (d == 2) {
      CHECK(vol == doctest::Approx(kPi * r * r / 2).epsilon(1e-12));
      CHECK(flat == doctest::Approx(2 * r).epsilon(1e-12));
      CHECK(sph == doctest::Approx(kPi * r).epsilon(1e-12));
    } else {
      CHECK(vol == doctest::Approx(2 * kPi * r * r * r / 3).epsilon(1e-6));
      CHECK(flat == doctest::Approx(kPi * r * r).epsilon(1e-12));
      CHECK(sph == doctest::Approx(2 * kPi * r * r).epsilon(1e-6));
    }
  }
}

TEST_CASE("cubic sampler reproduces quadratics and is C1 across cell faces") {
  auto g = make_grid(2, 32);
  auto q = ScalarField::from_function(g, [](const Point& x) { return 1 + x[0] - 2 * x[1] + x[0] * x[1] + 3 * x[1] * x[1]; });
  CubicSampler s(q);
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> ux(-1, 1), uy(0, 1);
  for (int k = 0; k < 200; ++k) {
    const Point x{ux(rng), uy(rng), 0};
    Point gr;
    const double v = s.value_grad(x, gr);
    REQUIRE(v == doctest::Approx(1 + x[0] - 2 * x[1] + x[0] * x[1] + 3 * x[1] * x[1]).epsilon(1e-12));
    REQUIRE(gr[0] == doctest::Approx(1 + x[1]).epsilon(1e-10));
    REQUIRE(gr[1] == doctest::Approx(-2 + x[0] + 6 * x[1]).epsilon(1e-10));
  }
  auto w = ScalarField::from_function(g, [](const Point& x) { return std::sin(3 * x[0]) * std::exp(x[1]); });
  CubicSampler sw(w);
  const double face = -1.0 + 10 * g->h();
  Point gl, gr;
  sw.value_grad({face - 1e-12, 0.3, 0}, gl);
  sw.value_grad({face + 1e-12, 0.3, 0}, gr);
  CHECK(gl[0] == doctest::Approx(gr[0]).epsilon(1e-8));
}

TEST_CASE("ball integral of a constant measures the clipped ball") {
  auto g = make_grid(2, 256);
  auto one = ScalarField::from_function(g, [](const Point&) { return 1.0; });
  CHECK(ball_integral(one, {0, 0, 0}, 0.2) == doctest::Approx(kPi * 0.04 / 2).epsilon(1e-3));
  CHECK(ball_integral(one, {0, 0, 0}, 3.0) == doctest::Approx(kPi / 2).epsilon(1e-3));
}

TEST_CASE("CSV round trip preserves every lattice value") {
  auto g = make_grid(2, 16);
  auto w = ScalarField::from_function(g, oracle_three_halves);
  const std::string path = "test_grid_roundtrip.csv";
  write_field_csv(path, w);
  auto back = read_field_csv(path, g);
  for (std::size_t i = 0; i < w.values.size(); ++i) REQUIRE(back[i] == w[i]);
  std::remove(path.c_str());
}
