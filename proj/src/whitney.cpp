#include "branchlab/whitney.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "branchlab/errors.hpp"

namespace branchlab {

namespace {

std::int64_t pow3(int e) {
  std::int64_t p = 1;
  for (int k = 0; k < e; ++k) p *= 3;
  return p;
}

constexpr int kBallSub = 4;

}  // namespace

const char* to_string(CubeClass c) {
  switch (c) {
    case CubeClass::excess: return "excess";
    case CubeClass::height: return "height";
    case CubeClass::subdivided: return "subdivided";
    case CubeClass::residual: return "residual";
  }
  return "?";
}

void WhitneyParams::validate(const HalfBallGrid& g) const {
  if (!(C0 > 0.0) || !std::isfinite(C0)) throw ValidationError("Whitney constant C0 must be positive");
  if (!(alpha > 0.0 && alpha < 0.5)) throw ValidationError("Whitney exponent alpha must lie in (0, 1/2)");
  if (j_max < 1) throw ValidationError("Whitney generation cap must be at least 1");
  if (N0 < 0 || c0 < 0.0) throw ValidationError("Whitney checks N0, c0 must be nonnegative");
  if (std::pow(3.0, 1 - j_max) < 4.0 * g.h() - 1e-12)
    throw ValidationError("finest Whitney cubes must span at least 4 grid cells");
}

double WhitneyCube::side() const { return std::pow(3.0, 1 - j); }

Point WhitneyCube::center(int d) const {
  const double s = side();
  Point c{0, 0, 0};
  for (int a = 0; a < d; ++a) c[a] = s * (static_cast<double>(k[a]) + 0.5);
  return c;
}

bool WhitneyCube::contains(const Point& x, int d) const {
  const double s = side();
  for (int a = 0; a < d; ++a) {
    const double lo = s * static_cast<double>(k[a]);
    if (x[a] < lo - 1e-12 || x[a] > lo + s + 1e-12) return false;
  }
  return true;
}

namespace {

// Lattice index range [lo, hi] of nodes inside the closed cube along each axis.
void node_range(const HalfBallGrid& g, const WhitneyCube& L, Index& lo, Index& hi) {
  const int d = g.dim();
  const double s = L.side(), h = g.h();
  lo = {0, 0, 0};
  hi = {0, 0, 0};
  for (int a = 0; a < d; ++a) {
    const double origin = (a < d - 1) ? -1.0 : 0.0;
    const double x0 = s * static_cast<double>(L.k[a]) - origin;
    lo[a] = std::clamp(static_cast<int>(std::ceil(x0 / h - 1e-9)), 0, g.node_extent(a) - 1);
    hi[a] = std::clamp(static_cast<int>(std::floor((x0 + s) / h + 1e-9)), 0, g.node_extent(a) - 1);
  }
}

template <class Fn>
void for_nodes(const HalfBallGrid& g, const WhitneyCube& L, Fn&& fn) {
  Index lo, hi;
  node_range(g, L, lo, hi);
  const int d = g.dim();
  Index idx{lo[0], lo[1], lo[2]};
  for (idx[0] = lo[0]; idx[0] <= hi[0]; ++idx[0])
    for (idx[1] = lo[1]; idx[1] <= hi[1]; ++idx[1])
      for (idx[2] = lo[2]; idx[2] <= (d == 3 ? hi[2] : lo[2]); ++idx[2]) fn(g.node_index(idx));
}

ScalarField grad_sq(const ScalarField& w) {
  const VectorField gw = gradient(w);
  ScalarField out = ScalarField::zeros(w.grid);
  const int d = w.grid->dim();
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    double s = 0.0;
    for (int a = 0; a < d; ++a) s += gw.comp[a][i] * gw.comp[a][i];
    out[i] = s;
  }
  return out;
}

ScalarField squared(const ScalarField& w) {
  ScalarField out = w;
  for (double& v : out.values) v *= v;
  return out;
}

}  // namespace

WhitneyDecomposition whitney_decompose(const ScalarField& w, const WhitneyParams& params) {
  const HalfBallGrid& g = *w.grid;
  params.validate(g);
  const int d = g.dim();
  WhitneyDecomposition dec;
  dec.d = d;
  dec.params = params;
  const ScalarField e = grad_sq(w);
  const ScalarField w2 = squared(w);

  std::vector<std::size_t> current;
  {
    WhitneyCube L;
    L.j = 1;
    const int kd = d - 1;
    std::array<std::int64_t, 3> lo{-1, -1, 0}, hi{0, 0, 0};
    lo[kd] = 0;
    for (L.k[0] = lo[0]; L.k[0] <= hi[0]; ++L.k[0])
      for (L.k[1] = (d == 3 ? lo[1] : 0); L.k[1] <= (d == 3 ? hi[1] : 0); ++L.k[1]) {
        dec.cubes.push_back(L);
        current.push_back(dec.cubes.size() - 1);
      }
  }
  for (int j = 1; j <= params.j_max; ++j) {
    std::vector<std::size_t> next;
    for (std::size_t id : current) {
      WhitneyCube& L = dec.cubes[id];
      const Point a = L.center(d);
      const double l = L.half_side();
      L.grad_integral = ball_integral(e, a, 3.0 * l, kBallSub);
      L.l2_integral = ball_integral(w2, a, 3.0 * l, kBallSub);
      if (L.grad_integral >= params.C0 * std::pow(l, d + 2.0 * params.alpha)) {
        L.cls = CubeClass::excess;
      } else if (L.l2_integral >= params.C0 * std::pow(l, d + 2.0 + 2.0 * params.alpha)) {
        L.cls = CubeClass::height;
      } else if (j == params.j_max) {
        L.cls = CubeClass::residual;
      } else {
        L.cls = CubeClass::subdivided;
        const std::array<std::int64_t, 3> base = L.k;
        const int mz = (d == 3) ? 3 : 1;
        for (int m0 = 0; m0 < 3; ++m0)
          for (int m1 = 0; m1 < 3; ++m1)
            for (int m2 = 0; m2 < mz; ++m2) {
              WhitneyCube S;
              S.j = j + 1;
              S.k = {3 * base[0] + m0, 3 * base[1] + m1, d == 3 ? 3 * base[2] + m2 : 0};
              S.parent = static_cast<std::int64_t>(id);
              next.push_back(dec.cubes.size());
              dec.cubes.push_back(S);  // invalidates L; not used below
            }
      }
    }
    current = std::move(next);
  }

  std::vector<char> mark(g.node_count(), 0);
  for (const WhitneyCube& L : dec.cubes) {
    if (L.cls != CubeClass::residual) continue;
    for_nodes(g, L, [&](std::size_t i) {
      if (g.kind(i) != NodeKind::outside) mark[i] = 1;
    });
  }
  for (std::size_t i = 0; i < mark.size(); ++i)
    if (mark[i]) dec.gamma_nodes.push_back(i);
  return dec;
}

WhitneyProperties check_whitney_properties(const WhitneyDecomposition& dec, const ScalarField& w,
                                           double tau_w, double tau_grad) {
  const int d = dec.d;
  const int jm = dec.params.j_max;
  WhitneyProperties out;

  // (a): every finest-generation cell of the slab lies in exactly one leaf.
  const std::int64_t n1 = pow3(jm - 1);
  const std::int64_t nx = 2 * n1, nz = n1;
  const std::int64_t ny = (d == 3) ? 2 * n1 : 1;
  std::vector<std::uint16_t> hits(static_cast<std::size_t>(nx * ny * nz), 0);
  std::size_t outside = 0;
  for (const WhitneyCube& L : dec.cubes) {
    if (!L.leaf()) continue;
    const std::int64_t f = pow3(jm - L.j);
    const std::int64_t y0 = (d == 3) ? L.k[1] * f + n1 : 0, y1 = (d == 3) ? y0 + f : 1;
    for (std::int64_t x = L.k[0] * f + n1; x < (L.k[0] + 1) * f + n1; ++x)
      for (std::int64_t y = y0; y < y1; ++y)
        for (std::int64_t z = L.k[d - 1] * f; z < (L.k[d - 1] + 1) * f; ++z) {
          if (x < 0 || x >= nx || y < 0 || y >= ny || z < 0 || z >= nz) {
            ++outside;
            continue;
          }
          ++hits[static_cast<std::size_t>((x * ny + y) * nz + z)];
        }
  }
  out.cover_defects = outside;
  for (std::uint16_t h : hits)
    if (h != 1) ++out.cover_defects;
  out.cover = out.cover_defects == 0;

  // (b)
  const VectorField gw = gradient(w);
  for (std::size_t i : dec.gamma_nodes) {
    double g2 = 0.0;
    for (int a = 0; a < d; ++a) g2 += gw.comp[a][i] * gw.comp[a][i];
    out.gamma_sup_w = std::max(out.gamma_sup_w, std::abs(w[i]));
    out.gamma_sup_grad = std::max(out.gamma_sup_grad, std::sqrt(g2));
  }
  out.gamma_zero = out.gamma_sup_w <= tau_w && out.gamma_sup_grad <= tau_grad;

  for (const WhitneyCube& L : dec.cubes) {
    if (L.cls == CubeClass::residual) ++out.residual_count;
    if (!L.classified()) continue;
    if (dec.params.N0 > 0 && L.j <= dec.params.N0) out.early_generations_empty = false;
    if (dec.params.c0 > 0.0) {
      const Point a = L.center(d);
      if (L.half_side() > dec.params.c0 * std::sqrt(norm2(a))) ++out.center_violations;
    }
    const double l = L.half_side();
    const WhitneyCube* H = L.parent >= 0 ? &dec.cubes[static_cast<std::size_t>(L.parent)] : nullptr;
    if (L.cls == CubeClass::excess) {
      ++out.excess_count;
      if (H && L.grad_integral > 0.0) {
        out.excess_l2_constant = std::max(out.excess_l2_constant, H->l2_integral / (l * l * L.grad_integral));
        out.excess_energy_constant = std::max(out.excess_energy_constant, H->grad_integral / L.grad_integral);
      }
    } else {
      ++out.height_count;
      if (H && L.l2_integral > 0.0) {
        out.height_l2_constant = std::max(out.height_l2_constant, H->l2_integral / L.l2_integral);
        out.height_energy_constant =
            std::max(out.height_energy_constant, l * l * H->grad_integral / L.l2_integral);
      }
    }
  }
  return out;
}

DoublingFlags doubling_predicates(const ScalarField& w, const Point& x, double r, double C) {
  if (!(r > 0.0)) throw ValidationError("doubling radius must be positive");
  const int d = w.grid->dim();
  // Distance from x to the closed half ball.
  Point p = x;
  p[d - 1] = std::max(p[d - 1], 0.0);
  const double np = std::sqrt(norm2(p));
  if (np > 1.0)
    for (int a = 0; a < d; ++a) p[a] /= np;
  double dist2 = 0.0;
  for (int a = 0; a < d; ++a) dist2 += (p[a] - x[a]) * (p[a] - x[a]);
  if (std::sqrt(dist2) >= 3.0 * r) throw ValidationError("doubling ball misses the half ball");

  const ScalarField e = grad_sq(w);
  const ScalarField w2 = squared(w);
  const double e1 = ball_integral(e, x, r, kBallSub), e3 = ball_integral(e, x, 3.0 * r, kBallSub);
  const double h1 = ball_integral(w2, x, r, kBallSub), h3 = ball_integral(w2, x, 3.0 * r, kBallSub);
  DoublingFlags out;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  out.degenerate = !(e1 > 0.0) || !(h1 > 0.0);
  out.energy_ratio = e1 > 0.0 ? e3 / e1 : nan;
  out.height_by_energy = e1 > 0.0 ? h3 / (r * r * e1) : nan;
  out.energy_by_height = h1 > 0.0 ? r * r * e3 / h1 : nan;
  out.height_ratio = h1 > 0.0 ? h3 / h1 : nan;
  out.excess_hypotheses = e1 > 0.0 && out.energy_ratio <= C && out.height_by_energy <= C;
  out.height_hypotheses = h1 > 0.0 && out.energy_by_height <= C && out.height_ratio <= C;
  return out;
}

CubeStats cube_stats(const ScalarField& w, const WhitneyCube& cube) {
  const HalfBallGrid& g = *w.grid;
  const int d = g.dim();
  const VectorField gw = gradient(w);
  CubeStats out;
  for_nodes(g, cube, [&](std::size_t i) {
    if (g.kind(i) == NodeKind::outside) return;
    double g2 = 0.0;
    for (int a = 0; a < d; ++a) g2 += gw.comp[a][i] * gw.comp[a][i];
    out.sup_w = std::max(out.sup_w, std::abs(w[i]));
    out.sup_grad = std::max(out.sup_grad, std::sqrt(g2));
  });
  const double s = cube.side();
  double dist2 = 0.0;
  for (int a = 0; a < d; ++a) {
    const double lo = s * static_cast<double>(cube.k[a]), hi = lo + s;
    const double c = std::clamp(0.0, lo, hi);
    dist2 += c * c;
  }
  out.distance_to_origin = std::sqrt(dist2);
  return out;
}

void write_whitney_json(const std::string& path, const WhitneyDecomposition& dec) {
  nlohmann::json j;
  j["d"] = dec.d;
  j["params"] = {{"C0", dec.params.C0}, {"alpha", dec.params.alpha}, {"j_max", dec.params.j_max},
                 {"N0", dec.params.N0}, {"c0", dec.params.c0}};
  nlohmann::json cubes = nlohmann::json::array();
  for (const WhitneyCube& L : dec.cubes) {
    std::vector<std::int64_t> k(L.k.begin(), L.k.begin() + dec.d);
    cubes.push_back({{"generation", L.j},
                     {"index", k},
                     {"class", to_string(L.cls)},
                     {"parent", L.parent},
                     {"grad_integral", L.grad_integral},
                     {"l2_integral", L.l2_integral}});
  }
  j["cubes"] = std::move(cubes);
  j["gamma_node_count"] = dec.gamma_nodes.size();
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  out << j.dump(1) << '\n';
}

void write_gamma_csv(const std::string& path, const WhitneyDecomposition& dec, const ScalarField& w) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  const int d = dec.d;
  for (int a = 0; a < d; ++a) out << 'x' << a + 1 << ',';
  out << "w\n";
  out.precision(17);
  for (std::size_t i : dec.gamma_nodes) {
    const Point x = w.grid->node_coord(i);
    for (int a = 0; a < d; ++a) out << x[a] << ',';
    out << w[i] << '\n';
  }
}

}  // namespace branchlab
