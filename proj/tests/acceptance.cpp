// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Every check is computed here from library output against independent
// closed forms or oracles from test_support.hpp.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "branchlab/blowup.hpp"
#include "branchlab/frequency.hpp"
#include "branchlab/geometry.hpp"
#include "branchlab/lab.hpp"
#include "branchlab/signorini.hpp"
#include "branchlab/whitney.hpp"
#include "test_support.hpp"

using namespace branchlab;
using testsupport::homogeneous;
using testsupport::homogeneous_field;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

const std::vector<double> kSuiteDegrees{1.5, 2.0, 3.0, 3.5};

ScalarField xd_field(GridPtr g) {
  const int d = g->dim();
  return ScalarField::from_function(g, [d](const Point& x) { return x[d - 1]; });
}

// Minimizers shared by criteria 2 and 9, computed once.
struct SignoriniRun {
  std::string label;
  double degree = std::numeric_limits<double>::quiet_NaN();  // NaN for perturbed data
  ThinObstacleSolution sol;
};

std::vector<SignoriniRun>& signorini_suite() {
  static std::vector<SignoriniRun> runs;
  if (!runs.empty()) return runs;
  const GridPtr g = make_grid(2, 128);
  const CoefficientSet flat = CoefficientSet::flat(g);
  auto solve = [&](const std::string& label, double degree, std::function<double(const Point&)> datum) {
    ThinObstacleProblem p;
    p.coefficients = flat;
    p.datum = std::move(datum);
    runs.push_back({label, degree, minimize_thin_obstacle(p)});
  };
  for (double k : kSuiteDegrees) solve("oracle " + std::to_string(k).substr(0, 3), k, [k](const Point& x) { return homogeneous(k, x); });
  // Odd-in-x1 perturbations of the 3/2 datum vanish at the origin.
  const std::vector<std::function<double(const Point&)>> odd{
      [](const Point& x) { return x[0]; },
      [](const Point& x) { return x[0] * x[1]; },
      [](const Point& x) { return x[0] * x[0] * x[0]; },
      [](const Point& x) { return std::sin(3.0 * x[0]) * (1.0 + x[1]); },
      [](const Point& x) { return x[0] * (x[0] * x[0] - 3.0 * x[1] * x[1]); },
  };
  for (std::size_t j = 0; j < odd.size(); ++j) {
    auto f = odd[j];
    solve("perturbed " + std::to_string(j + 1), std::numeric_limits<double>::quiet_NaN(),
          [f](const Point& x) { return homogeneous(1.5, x) + 0.05 * f(x); });
  }
  return runs;
}

// 1. Frequency of homogeneous oracles.
Outcome homogeneous_frequency() {
  Outcome out;
  const GridPtr g = make_grid(2, 256);
  const CoefficientSet c = CoefficientSet::flat(g);
  const auto cut = CutoffProfile::smooth(0.9);
  for (double k : kSuiteDegrees) {
    const auto t0 = std::chrono::steady_clock::now();
    const FrequencyEvaluator ev(homogeneous_field(g, k), c);
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (int j = 0; j <= 5; ++j) {
      const double N = ev.report(0.25 + 0.1 * j, cut).N;
      lo = std::min(lo, N);
      hi = std::max(hi, N);
    }
    const double t = seconds_since(t0);
    out.detail << " k=" << k << ":N in [" << lo << "," << hi << "] " << t << "s";
    out.require(lo >= 0.98 * k && hi <= 1.02 * k, "N outside 2% band for k=" + std::to_string(k));
    out.require((hi - lo) / lo <= 0.01, "N varies more than 1% for k=" + std::to_string(k));
    out.require(t <= 10.0, "runtime for k=" + std::to_string(k));
  }
  return out;
}

// 2. Monotonicity on discrete minimizers.
Outcome monotonicity() {
  Outcome out;
  std::vector<double> radii;
  for (int j = 0; j < 30; ++j) radii.push_back(0.2 + 0.55 * j / 29.0);
  const auto cut = CutoffProfile::smooth(0.9);
  double worst_C = 0.0, worst_drop = 0.0;
  for (const auto& run : signorini_suite()) {
    const auto scan = monotonicity_scan(run.sol.w, CoefficientSet::flat(run.sol.w.grid), radii, cut, {1.0, 0.5}, 1e-2);
    out.detail << " " << run.label << ":C=" << scan.min_C;
    worst_C = std::max(worst_C, scan.min_C);
    worst_drop = std::max(worst_drop, scan.max_drop);
    out.require(scan.radii.size() == radii.size(), run.label + " hit a degenerate radius");
    out.require(scan.monotone_uncorrected, run.label + " N drops by more than 1e-2");
    out.require(scan.feasible && scan.min_C <= 1.0, run.label + " needs C > 1");
  }
  out.detail << " | max C " << worst_C << ", max relative drop " << worst_drop;
  return out;
}

// 3. Frequency identities at h = 1/128.
Outcome identities() {
  Outcome out;
  const GridPtr g = make_grid(2, 128);
  const CoefficientSet flat = CoefficientSet::flat(g);
  const auto cut = CutoffProfile::smooth(0.9);
  const std::vector<double> radii{0.3, 0.5, 0.7};
  double lin_assembled = 0.0;
  {
    const FrequencyEvaluator ev(xd_field(g), flat);
    for (double r : radii)
      lin_assembled = std::max({lin_assembled, ev.height_identity(r, cut), ev.outer_assembled(r, cut),
                                ev.inner_assembled(r, cut)});
  }
  out.detail << " x_d assembled " << lin_assembled;
  out.require(lin_assembled <= 5e-2, "x_d assembled residual");

  const BoxOptions opts;
  const double gateaux_bound = 10.0 * opts.tol;
  ThinObstacleProblem p;
  p.coefficients = flat;
  p.datum = [](const Point& x) { return homogeneous(1.5, x); };
  const auto sol = minimize_thin_obstacle(p, opts);
  double assembled = 0.0, gateaux = 0.0;
  for (double r : radii) {
    const auto o = outer_variation_identity(sol, flat, r, cut);
    const auto i = inner_variation_identity(sol, flat, r, cut);
    assembled = std::max({assembled, height_derivative_identity(sol.w, flat, r, cut), o.assembled, i.assembled});
    gateaux = std::max({gateaux, o.gateaux, i.gateaux});
  }
  out.detail << "; 3/2 minimizer assembled " << assembled << ", Gateaux " << gateaux;
  out.require(assembled <= 5e-2, "minimizer assembled residual");
  out.require(gateaux <= gateaux_bound, "linear Gateaux residual");

  ThinObstacleProblem q = p;
  q.nonlinearity = NonlinearityModel::cubic_default();
  q.datum = [](const Point& x) { return 0.1 * homogeneous(1.5, x); };
  const auto nsol = minimize_thin_obstacle(q, opts);
  double og = 0.0, ig = 0.0;
  for (double r : radii) {
    og = std::max(og, outer_variation_identity(nsol, flat, r, cut, q.nonlinearity).gateaux);
    ig = std::max(ig, inner_variation_identity(nsol, flat, r, cut, q.nonlinearity).gateaux);
  }
  out.detail << "; cubic outer " << og << ", inner " << ig << " (bound " << gateaux_bound << ")";
  out.require(og <= gateaux_bound, "cubic outer Gateaux residual");
  out.require(ig <= gateaux_bound, "cubic inner Gateaux residual");
  return out;
}

// 4. Flow invariants for phi = 0.1 x1^2.
Outcome flow_invariants() {
  Outcome out;
  const auto obs = AnalyticObstacle::univariate({0, 0, 0.1});
  const auto m = ck_extend(obs, 8);
  std::vector<Point> columns;
  for (int j = -4; j <= 4; ++j) columns.push_back({0.1 * j, 0, 0});
  const std::vector<double> times{0.0, 0.025, 0.05, 0.1, 0.15, 0.2};
  const auto inv = check_flow_invariants(flow_map(m, obs, columns, times, 1e-3), m, obs);
  out.detail << " level " << inv.level << ", orthogonality " << inv.orthogonality << ", conservation "
             << inv.conservation << ", metric " << inv.metric;
  out.require(inv.level <= 1e-8, "level");
  out.require(inv.orthogonality <= 1e-6, "orthogonality");
  out.require(inv.conservation <= 1e-6, "conservation");
  out.require(inv.metric <= 1e-8, "metric");
  return out;
}

// 5. Power-series extension.
Outcome extension() {
  Outcome out;
  const auto flat = ck_extend(AnalyticObstacle::flat(2), 8);
  bool exact = true;
  for (const auto& t : flat.m.terms()) exact = exact && t.c == ((t.e[0] == 0 && t.e[1] == 1) ? 1.0 : 0.0);
  out.require(exact, "flat obstacle does not give m = x_d");
  const auto m = ck_extend(AnalyticObstacle::univariate({0, 0, 0.1}), 4);
  const auto fit = testsupport::least_squares_extension(0.1, 14, 0.15, 400);
  double worst = 0.0;
  for (int j = 0; j <= 4; ++j)
    for (int k = 0; j + k <= 4; ++k) {
      const double mine = m.m.coeff({j, k, 0}), ref = fit[j][k];
      const double err = std::abs(ref) > 1e-9 ? std::abs(mine - ref) / std::abs(ref) : std::abs(mine);
      worst = std::max(worst, err);
    }
  out.detail << " flat exact " << (exact ? "yes" : "no") << ", order-4 relative error " << worst;
  out.require(worst <= 1e-6, "order-4 coefficients");
  return out;
}

// 6. Whitney decomposition.
Outcome whitney() {
  Outcome out;
  {
    const GridPtr g = make_grid(2, 64);
    int defects = 0;
    for (unsigned seed = 1; seed <= 20; ++seed) {
      const ScalarField w = testsupport::random_poly_field(g, 1000 + seed);
      WhitneyParams p;
      p.C0 = 0.5;
      p.j_max = 3;
      const auto pr = check_whitney_properties(whitney_decompose(w, p), w, 1.0, 1.0);
      defects += pr.cover ? static_cast<int>(pr.cover_defects) : 1;
    }
    out.detail << " cover defects " << defects;
    out.require(defects == 0, "cover");
  }
  const GridPtr g = make_grid(2, 256);
  const double h = g->h(), amp = 0.1;
  WhitneyParams p;
  p.C0 = 2.0;
  p.alpha = 0.45;
  p.j_max = 4;
  const ScalarField w = homogeneous_field(g, 1.5, amp);
  const auto dec = whitney_decompose(w, p);
  const auto pr = check_whitney_properties(dec, w, 5 * h, 5 * std::sqrt(h));
  out.detail << "; residual cubes " << pr.residual_count << ", sup|w| " << pr.gamma_sup_w << ", sup|grad w| "
             << pr.gamma_sup_grad;
  out.require(pr.cover && pr.cover_defects == 0, "3/2 cover");
  out.require(pr.residual_count > 0 && pr.gamma_zero, "residual set bounds");

  std::map<std::pair<std::int64_t, std::int64_t>, int> oracle;
  for (std::int64_t kx : {-1, 0}) testsupport::oracle_decompose(amp, p, 1, kx, 0, oracle);
  const auto got = testsupport::leaf_generations(dec);
  int off = 0, exact = 0;
  for (const auto& [cell, j] : oracle) {
    const auto it = got.find(cell);
    if (it == got.end() || std::abs(it->second - j) > 1) ++off;
    else exact += it->second == j;
  }
  out.detail << "; generations " << exact << "/" << oracle.size() << " exact, " << off << " beyond +-1";
  out.require(got.size() == oracle.size() && off == 0, "stopping generations");

  const auto dbl = doubling_predicates(xd_field(g), Point{0, 0, 0}, 0.2, 100.0);
  out.detail << "; x_d doubling " << dbl.energy_ratio;
  out.require(std::abs(dbl.energy_ratio / 9.0 - 1.0) <= 0.01, "doubling ratio");
  return out;
}

// 7. Trace and height inequalities.
Outcome inequalities() {
  Outcome out;
  const GridPtr g = make_grid(2, 64);
  const CoefficientSet c = CoefficientSet::flat(g);
  int trace_fail = 0, height_fail = 0;
  double worst_trace = 0.0, worst_height = 0.0;
  for (unsigned seed = 1; seed <= 50; ++seed) {
    const auto rep = inequality_diagnostics(testsupport::random_poly_field(g, 2000 + seed), c, {0.3, 0.5, 0.7},
                                          CutoffProfile::smooth(0.9));
    trace_fail += !rep.all_trace;
    height_fail += !rep.all_height;
    for (const auto& row : rep.rows) {
      worst_trace = std::max(worst_trace, row.trace_lhs / row.trace_rhs);
      worst_height = std::max(worst_height, row.height_constant);
    }
  }
  out.detail << " trace failures " << trace_fail << " (max lhs/rhs " << worst_trace << "), height failures "
             << height_fail << " (max constant " << worst_height << ")";
  out.require(trace_fail == 0, "trace inequality");
  out.require(height_fail == 0, "height inequality");
  return out;
}

// 8. End-to-end pipeline.
Outcome pipeline() {
  Outcome out;
  ExperimentConfig cfg;
  cfg.set("grid.n", "128");
  cfg.set("output", (std::filesystem::temp_directory_path() / "branchlab_acceptance_pipeline").string());
  std::filesystem::remove_all(cfg.get("output"));
  const auto t0 = std::chrono::steady_clock::now();
  const PipelineReport rep = run_pipeline(cfg);
  const double t = seconds_since(t0);
  const double h = 1.0 / 128;
  const double ue = rep.headline.at("u_linf_error"), we = rep.headline.at("hodograph_w_linf");
  const double marked = rep.headline.at("branch_zero_nodes"), flat = rep.headline.at("flat_nodes");
  out.detail << " u error " << ue << " (2h " << 2 * h << "), ||w|| " << we << " (4h " << 4 * h << "), branch "
             << marked << "/" << flat << ", " << t << "s";
  out.require(rep.success(), "a stage failed");
  out.require(ue <= 2 * h, "u error");
  out.require(we <= 4 * h, "hodograph w");
  out.require(flat > 0 && marked == flat, "branch set");
  out.require(t <= 60.0, "runtime");
  return out;
}

// 9. Blow-up classification.
Outcome blowup() {
  Outcome out;
  const GridPtr g = make_grid(2, 256);
  const auto catalog = oracle_catalog(4.0);
  double worst_misfit = 0.0;
  for (const auto& o : catalog) {
    const auto m = classify_blowup(rescale(o.sample(g), {1.0, 0.5}), catalog);
    worst_misfit = std::max(worst_misfit, m.best.misfit);
    out.require(m.best.name == o.name(), o.name() + " matched " + m.best.name);
    out.require(m.best.misfit <= 1e-6, o.name() + " misfit");
    out.require(m.degree_consistent, o.name() + " degree vs N0");
  }
  out.detail << " catalog self-match worst misfit " << worst_misfit << ";";
  for (const auto& run : signorini_suite()) {
    if (std::isnan(run.degree)) continue;
    const auto m = classify_blowup(rescale(run.sol.w, {1.0, 0.5}), catalog);
    out.detail << " " << run.label << "->" << m.best.name << " N0=" << m.N0;
    out.require(m.best.degree == run.degree, run.label + " matched degree");
    out.require(m.degree_consistent, run.label + " degree vs N0");
  }
  return out;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"homogeneous frequency", homogeneous_frequency},
      {"monotonicity", monotonicity},
      {"frequency identities", identities},
      {"flow invariants", flow_invariants},
      {"power-series extension", extension},
      {"whitney decomposition", whitney},
      {"trace and height inequalities", inequalities},
      {"end-to-end pipeline", pipeline},
      {"blow-up classification", blowup},
  };
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " [exception: " << e.what() << "]";
    }
    std::printf("criterion %zu %s: %s (%.1fs)%s\n", k + 1, criteria[k].first.c_str(), o.pass ? "PASS" : "FAIL",
                seconds_since(t0), o.detail.str().c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
