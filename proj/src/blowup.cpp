#include "branchlab/blowup.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include "branchlab/errors.hpp"
#include "branchlab/frequency.hpp"

namespace branchlab {

namespace {

bool near_integer(double x) { return std::abs(x - std::round(x)) < 1e-12; }

double l2_dot(const ScalarField& a, const ScalarField& b) { return integrate(a, &b); }

// Tensor-product 4-point Lagrange interpolation: exact for cubics, so smooth
// homogeneous fields survive deep rescaling. Windows shift inward at the box edges.
double bicubic(const ScalarField& f, const Point& x) {
  const HalfBallGrid& g = *f.grid;
  const int d = g.dim();
  const double h = g.h();
  std::array<int, 3> start{0, 0, 0};
  std::array<std::array<double, 4>, 3> wts{};
  for (int a = 0; a < d; ++a) {
    const double origin = a < d - 1 ? -1.0 : 0.0;
    const double u = (x[a] - origin) / h;
    const int s = std::clamp(static_cast<int>(std::floor(u)) - 1, 0, g.node_extent(a) - 4);
    start[a] = s;
    for (int i = 0; i < 4; ++i) {
      double l = 1.0;
      for (int j = 0; j < 4; ++j)
        if (j != i) l *= (u - (s + j)) / static_cast<double>(i - j);
      wts[a][i] = l;
    }
  }
  double out = 0.0;
  const int n2 = d == 3 ? 4 : 1;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      for (int k = 0; k < n2; ++k) {
        const Index idx{start[0] + i, start[1] + j, d == 3 ? start[2] + k : 0};
        out += wts[0][i] * wts[1][j] * (d == 3 ? wts[2][k] : 1.0) * f[g.node_index(idx)];
      }
  return out;
}

}  // namespace

const char* to_string(OracleKind k) {
  switch (k) {
    case OracleKind::cos_even: return "cos-even";
    case OracleKind::sin_odd: return "sin-odd";
    case OracleKind::sin_half: return "sin-half";
  }
  return "?";
}

OracleKind parse_oracle_kind(const std::string& s) {
  if (s == "cos-even") return OracleKind::cos_even;
  if (s == "sin-odd") return OracleKind::sin_odd;
  if (s == "sin-half") return OracleKind::sin_half;
  throw ValidationError("unknown oracle kind '" + s + "'");
}

HomogeneousOracle::HomogeneousOracle(OracleKind kind, double k) : kind_(kind), k_(k) {
  bool ok = false;
  switch (kind) {
    case OracleKind::cos_even: ok = k >= 2.0 && near_integer(k / 2.0); break;
    case OracleKind::sin_odd: ok = k >= 1.0 && near_integer((k + 1.0) / 2.0); break;
    case OracleKind::sin_half: ok = k >= 1.5 && near_integer((k + 0.5) / 2.0); break;
  }
  if (!ok) throw ValidationError("degree " + std::to_string(k) + " is not admissible for " + to_string(kind));
}

std::string HomogeneousOracle::name() const {
  std::ostringstream s;
  s << to_string(kind_) << '(' << k_ << ')';
  return s.str();
}

double HomogeneousOracle::value(const Point& x) const {
  const double r = std::hypot(x[0], x[1]);
  if (r == 0.0) return 0.0;
  const double th = std::atan2(x[1], x[0]);
  const double rk = std::pow(r, k_);
  return kind_ == OracleKind::cos_even ? rk * std::cos(k_ * th) : -rk * std::sin(k_ * th);
}

Point HomogeneousOracle::gradient(const Point& x) const {
  const double r = std::hypot(x[0], x[1]);
  if (r == 0.0) return {0, 0, 0};
  const double th = std::atan2(x[1], x[0]);
  double f, fp;  // angular profile and its derivative
  if (kind_ == OracleKind::cos_even) {
    f = std::cos(k_ * th);
    fp = -k_ * std::sin(k_ * th);
  } else {
    f = -std::sin(k_ * th);
    fp = -k_ * std::cos(k_ * th);
  }
  const double rk1 = std::pow(r, k_ - 1.0);
  const double dr = k_ * rk1 * f, dt = rk1 * fp;
  const double c = std::cos(th), s = std::sin(th);
  return {dr * c - dt * s, dr * s + dt * c, 0.0};
}

ScalarField HomogeneousOracle::sample(GridPtr g) const {
  return ScalarField::from_function(g, [this](const Point& x) { return value(x); });
}

OracleStatus HomogeneousOracle::check(int samples, unsigned seed) const {
  OracleStatus out;
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  constexpr double kPi = std::numbers::pi;
  const double step = 1e-3;

  double wmax = 0.0, lap = 0.0, hom = 0.0;
  bool interior = true;
  for (int s = 0; s < samples; ++s) {
    const double r = 0.2 + 0.8 * U(rng);
    const double th = 0.05 + (kPi - 0.1) * U(rng);
    const Point x{r * std::cos(th), r * std::sin(th), 0.0};
    const double w = value(x);
    wmax = std::max(wmax, std::abs(w));
    const double l = (value({x[0] + step, x[1], 0}) + value({x[0] - step, x[1], 0}) +
                      value({x[0], x[1] + step, 0}) + value({x[0], x[1] - step, 0}) - 4.0 * w) /
                     (step * step);
    lap = std::max(lap, std::abs(l));
    const double t = 0.1 + 0.9 * U(rng);
    hom = std::max(hom, std::abs(value({t * x[0], t * x[1], 0}) - std::pow(t, k_) * w));
    if (w < -1e-12) interior = false;
  }
  out.harmonic_residual = wmax > 0.0 ? lap / wmax : lap;
  out.homogeneity_defect = wmax > 0.0 ? hom / wmax : hom;
  out.interior_nonnegative = interior;

  out.flat_nonnegative = true;
  out.complementarity = true;
  for (int s = 0; s <= samples; ++s) {
    const double x1 = -1.0 + 2.0 * s / samples;
    if (x1 == 0.0) continue;
    const double w = value({x1, 0, 0});
    const double dn = gradient({x1, 0, 0})[1];
    const double scale = std::pow(std::abs(x1), k_);
    if (w < -1e-12 * scale) out.flat_nonnegative = false;
    if (dn > 1e-12 * scale) out.complementarity = false;
    if (w > 1e-12 * scale && std::abs(dn) > 1e-10 * scale) out.complementarity = false;
  }
  out.symmetry_convention = kind_ == OracleKind::sin_odd;
  out.admissible = out.harmonic_residual <= 1e-4 && out.homogeneity_defect <= 1e-10 && out.flat_nonnegative &&
                   out.complementarity;
  return out;
}

std::vector<HomogeneousOracle> oracle_catalog(double max_degree) {
  std::vector<HomogeneousOracle> out;
  for (int n = 1; 2.0 * n - 1.0 <= max_degree; ++n) {
    out.emplace_back(OracleKind::sin_odd, 2.0 * n - 1.0);
    if (2.0 * n - 0.5 <= max_degree) out.emplace_back(OracleKind::sin_half, 2.0 * n - 0.5);
    if (2.0 * n <= max_degree) out.emplace_back(OracleKind::cos_even, 2.0 * n);
  }
  return out;
}

RescaleSequence rescale(const ScalarField& w, const std::vector<double>& radii) {
  if (radii.empty()) throw ValidationError("rescale needs at least one radius");
  for (std::size_t k = 0; k < radii.size(); ++k) {
    if (!(radii[k] > 0.0 && radii[k] <= 1.0)) throw ValidationError("rescale radii must lie in (0, 1]");
    if (k > 0 && !(radii[k] < radii[k - 1])) throw ValidationError("rescale radii must decrease");
  }
  const GridPtr g = w.grid;
  const int d = g->dim();
  const CoefficientSet flat = CoefficientSet::flat(g);
  const CutoffProfile sharp = CutoffProfile::sharp_limit();
  const FrequencyEvaluator ev(w, flat);

  RescaleSequence seq;
  seq.source = w;
  for (double r : radii) {
    const double H = ev.report(r, sharp).H * std::pow(r, 1 - d);
    if (!(H > 1e-300)) {
      seq.truncated = true;
      break;
    }
    const double inv = 1.0 / std::sqrt(H);
    ScalarField wn = ScalarField::zeros(g);
    for (std::size_t i = 0; i < wn.values.size(); ++i) {
      Point x = g->node_coord(i);
      for (int a = 0; a < d; ++a) x[a] *= r;
      wn[i] = inv * bicubic(w, x);
    }
    seq.radii.push_back(r);
    seq.height.push_back(H);
    seq.unit_height.push_back(frequency_report(wn, flat, 1.0, sharp).H);
    seq.l2_norm.push_back(std::sqrt(l2_dot(wn, wn)));
    seq.fields.push_back(std::move(wn));
  }
  return seq;
}

BlowupMatch classify_blowup(const RescaleSequence& seq, const std::vector<HomogeneousOracle>& oracles,
                            double degree_tol) {
  if (seq.fields.empty()) throw ValidationError("blow-up classification needs a nonempty sequence");
  if (oracles.empty()) throw ValidationError("blow-up classification needs at least one oracle");
  const ScalarField& w = seq.fields.back();
  const GridPtr g = w.grid;
  const double ww = l2_dot(w, w);

  BlowupMatch out;
  out.best.misfit = std::numeric_limits<double>::infinity();
  for (const HomogeneousOracle& o : oracles) {
    const ScalarField f = o.sample(g);
    const double ff = l2_dot(f, f);
    OracleFit fit;
    fit.name = o.name();
    fit.degree = o.degree();
    fit.amplitude = ff > 0.0 ? l2_dot(w, f) / ff : 0.0;
    ScalarField res = w;
    for (std::size_t i = 0; i < res.values.size(); ++i) res[i] -= fit.amplitude * f[i];
    fit.misfit = ww > 0.0 ? std::sqrt(l2_dot(res, res) / ww) : std::numeric_limits<double>::quiet_NaN();
    if (fit.misfit < out.best.misfit) out.best = fit;
    out.fits.push_back(std::move(fit));
  }

  const FrequencyEvaluator ev(seq.source, CoefficientSet::flat(g));
  const CutoffProfile cut = CutoffProfile::smooth(0.9);
  std::vector<double> rs, Ns;
  for (int k = 0; k <= 11; ++k) {
    const double r = 0.2 + 0.05 * k;
    const auto rep = ev.report(r, cut);
    if (rep.degenerate) continue;
    rs.push_back(r);
    Ns.push_back(rep.N);
  }
  out.N0 = extrapolate_to_zero(rs, Ns);
  out.degree_consistent = std::abs(out.best.degree - out.N0) <= degree_tol * out.best.degree;
  return out;
}

double translation_defect(const ScalarField& w, int axis) {
  const HalfBallGrid& g = *w.grid;
  if (axis < 0 || axis >= g.dim()) throw ValidationError("axis out of range");
  const VectorField gw = gradient(w);
  double along = 0.0, total = 0.0;
  for (std::size_t i = 0; i < g.node_count(); ++i) {
    if (g.kind(i) == NodeKind::outside) continue;
    along = std::max(along, std::abs(gw.comp[axis][i]));
    total = std::max(total, std::sqrt(norm2(gw.at(i))));
  }
  return total > 0.0 ? along / total : 0.0;
}

}  // namespace branchlab
