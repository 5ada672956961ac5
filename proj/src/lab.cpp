#include "branchlab/lab.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>

#include "branchlab/bernoulli.hpp"
#include "branchlab/blowup.hpp"
#include "branchlab/errors.hpp"
#include "branchlab/geometry.hpp"
#include "branchlab/hodograph.hpp"
#include "branchlab/signorini.hpp"
#include "branchlab/whitney.hpp"

namespace branchlab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

double parse_number(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw ValidationError("config key '" + key + "': '" + v + "' is not a number");
  }
  if (pos != v.size() || !std::isfinite(x))
    throw ValidationError("config key '" + key + "': '" + v + "' is not a number");
  return x;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> keys{
      {"grid.d", "2", "dimension, 2 or 3"},
      {"grid.n", "64", "cells per unit length"},
      {"obstacle", "flat", "flat, or comma-separated coefficients c0,c1,c2,... of phi(x1)"},
      {"obstacle.order", "8", "order of the power-series extension"},
      {"flow.delta", "0.5", "scale of the straightened coordinates"},
      {"flow.dt", "1e-3", "flow time step"},
      {"datum", "half-plane", "half-plane, oracle, random, zero or file"},
      {"datum.kind", "sin-half", "oracle family: cos-even, sin-odd, sin-half"},
      {"datum.degree", "1.5", "oracle degree"},
      {"datum.amplitude", "1", "multiplies the datum"},
      {"datum.file", "", "field CSV for datum = file"},
      {"input", "", "field CSV analysed by frequency, whitney and blowup instead of the datum"},
      {"solver.tol", "1e-8", "descent tolerance"},
      {"solver.max_iter", "400", "descent iteration cap"},
      {"bernoulli.eps", "0", "volume smoothing width; 0 selects 2h"},
      {"signorini.nonlinearity", "off", "off or cubic"},
      {"signorini.lipschitz_cap", "0.5", "gradient cap enforced with the nonlinearity"},
      {"signorini.coefficients", "flat", "flat or obstacle"},
      {"tau", "0.05", "tolerance of the singular and branch sets"},
      {"frequency.upsilon", "0.9", "cutoff plateau, in (1/2, 1)"},
      {"frequency.C", "1", "monotonicity constant"},
      {"frequency.kappa", "0.5", "monotonicity exponent, in (0, 1)"},
      {"frequency.r_min", "0.2", "smallest radius"},
      {"frequency.r_max", "0.75", "largest radius"},
      {"frequency.count", "12", "number of radii"},
      {"frequency.slack", "1e-3", "allowed relative drop of N between neighbours"},
      {"whitney.C0", "1", "stopping constant"},
      {"whitney.alpha", "0.25", "stopping exponent, in (0, 1/2)"},
      {"whitney.j_max", "3", "finest generation"},
      {"whitney.N0", "0", "check that generations up to N0 hold no stopped cube; 0 disables"},
      {"whitney.c0", "0", "check l <= c0 |center| for stopped cubes; 0 disables"},
      {"whitney.tau_w", "0", "sup |w| allowed on the residual set; 0 selects 5h"},
      {"whitney.tau_grad", "0", "sup |grad w| allowed on the residual set; 0 selects 5 sqrt(h)"},
      {"blowup.radii", "1,0.5", "decreasing rescaling radii"},
      {"blowup.max_degree", "4", "largest catalog degree"},
      {"output", "branchlab_out", "output directory"},
      {"seed", "1", "seed of random fields"},
  };
  return keys;
}

ExperimentConfig::ExperimentConfig() {
  for (const auto& k : config_schema()) values_[k.name] = k.default_value;
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  ExperimentConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError("config line " + std::to_string(lineno) + ": expected key = value");
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  if (!values_.count(key)) throw ValidationError("unknown config key '" + key + "'");
  values_[key] = value;
}

const std::string& ExperimentConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ValidationError("unknown config key '" + key + "'");
  return it->second;
}

double ExperimentConfig::number(const std::string& key) const { return parse_number(key, get(key)); }

int ExperimentConfig::integer(const std::string& key) const {
  const double x = number(key);
  if (x != std::floor(x) || std::abs(x) > 1e9)
    throw ValidationError("config key '" + key + "': '" + get(key) + "' is not an integer");
  return static_cast<int>(x);
}

bool ExperimentConfig::flag(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  throw ValidationError("config key '" + key + "': '" + v + "' is not a boolean");
}

std::vector<double> ExperimentConfig::numbers(const std::string& key) const {
  std::vector<double> out;
  std::stringstream ss(get(key));
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number(key, trim(item)));
  return out;
}

void ExperimentConfig::validate() const {
  auto range = [&](const std::string& key, double lo, double hi, bool open_lo, bool open_hi) {
    const double x = number(key);
    const bool ok = (open_lo ? x > lo : x >= lo) && (open_hi ? x < hi : x <= hi);
    if (!ok) throw ValidationError("config key '" + key + "' = " + get(key) + " out of range");
  };
  auto choice = [&](const std::string& key, std::initializer_list<const char*> allowed) {
    for (const char* a : allowed)
      if (get(key) == a) return;
    throw ValidationError("config key '" + key + "': unsupported value '" + get(key) + "'");
  };
  const int d = integer("grid.d");
  if (d != 2 && d != 3) throw ValidationError("config key 'grid.d' must be 2 or 3");
  if (integer("grid.n") < 8 || integer("grid.n") > 2048) throw ValidationError("config key 'grid.n' out of range");
  if (get("obstacle") != "flat") {
    const auto c = numbers("obstacle");
    if (d != 2) throw ValidationError("config key 'obstacle': curved obstacles are 2-D only");
    AnalyticObstacle::univariate(c).validate();
  }
  if (integer("obstacle.order") < 1 || integer("obstacle.order") > 30)
    throw ValidationError("config key 'obstacle.order' out of range");
  range("flow.delta", 0.0, 1.0, true, false);
  range("flow.dt", 0.0, 0.1, true, false);
  choice("datum", {"half-plane", "oracle", "random", "zero", "file"});
  parse_oracle_kind(get("datum.kind"));
  range("datum.degree", 0.0, 50.0, true, false);
  (void)number("datum.amplitude");
  if (get("datum") == "oracle") HomogeneousOracle(parse_oracle_kind(get("datum.kind")), number("datum.degree"));
  if (get("datum") == "file" && get("datum.file").empty())
    throw ValidationError("config key 'datum.file' is required for datum = file");
  range("solver.tol", 0.0, 1.0, true, false);
  if (integer("solver.max_iter") < 1) throw ValidationError("config key 'solver.max_iter' out of range");
  range("bernoulli.eps", 0.0, 1.0, false, false);
  choice("signorini.nonlinearity", {"off", "cubic"});
  range("signorini.lipschitz_cap", 0.0, 1.0, true, true);
  choice("signorini.coefficients", {"flat", "obstacle"});
  range("tau", 0.0, 1.0, true, false);
  {
    const double u = number("frequency.upsilon");
    if (!(u > 0.5 && u < 1.0))
      throw ValidationError("config key 'frequency.upsilon' = " + get("frequency.upsilon") +
                            " out of range: the cutoff plateau must lie in (1/2, 1)");
  }
  range("frequency.C", 0.0, 1e6, false, false);
  range("frequency.kappa", 0.0, 1.0, true, true);
  range("frequency.r_min", 0.0, 1.0, true, false);
  range("frequency.r_max", 0.0, 1.0, true, false);
  if (!(number("frequency.r_min") < number("frequency.r_max")))
    throw ValidationError("config key 'frequency.r_min' must be below 'frequency.r_max'");
  if (integer("frequency.count") < 2) throw ValidationError("config key 'frequency.count' out of range");
  range("frequency.slack", 0.0, 1.0, false, false);
  range("whitney.C0", 0.0, 1e12, true, false);
  range("whitney.alpha", 0.0, 0.5, true, true);
  if (integer("whitney.j_max") < 1 || integer("whitney.j_max") > 8)
    throw ValidationError("config key 'whitney.j_max' out of range");
  if (integer("whitney.N0") < 0) throw ValidationError("config key 'whitney.N0' out of range");
  range("whitney.c0", 0.0, 1e6, false, false);
  range("whitney.tau_w", 0.0, 1e6, false, false);
  range("whitney.tau_grad", 0.0, 1e6, false, false);
  {
    const auto r = numbers("blowup.radii");
    if (r.empty()) throw ValidationError("config key 'blowup.radii' is empty");
    for (std::size_t k = 0; k < r.size(); ++k)
      if (!(r[k] > 0.0 && r[k] <= 1.0) || (k > 0 && !(r[k] < r[k - 1])))
        throw ValidationError("config key 'blowup.radii' must decrease within (0, 1]");
  }
  range("blowup.max_degree", 1.0, 20.0, false, false);
  if (get("output").empty()) throw ValidationError("config key 'output' is empty");
  if (integer("seed") < 0) throw ValidationError("config key 'seed' out of range");
}

std::string ExperimentConfig::to_text() const {
  std::ostringstream out;
  for (const auto& k : config_schema()) out << k.name << " = " << values_.at(k.name) << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------
// Hashing and reports

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return fnv1a64(ss.str());
}

bool PipelineReport::success() const {
  for (const auto& s : stages)
    if (s.status == "failed") return false;
  return true;
}

std::uint64_t PipelineReport::manifest_hash() const {
  std::string acc;
  for (const auto& m : manifest) acc += m.path + '\n' + std::to_string(m.hash) + '\n';
  return fnv1a64(acc);
}

namespace {

std::string hex(std::uint64_t h) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << h;
  return s.str();
}

// Headline keys in emission order; missing ones are written as null.
const std::vector<std::string>& headline_keys() {
  static const std::vector<std::string> k{"u_linf_error",     "hodograph_w_linf", "branch_zero_nodes",
                                          "flat_nodes",       "signorini_residual", "N0",
                                          "min_C",            "identity_max",     "degenerate_radii",
                                          "gamma_size",       "blowup_degree",    "blowup_misfit"};
  return k;
}

json number_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

}  // namespace

json report_to_json(const PipelineReport& report) {
  json j = json::object();
  j["output_dir"] = report.output_dir;
  json stages = json::array();
  for (const auto& s : report.stages)
    stages.push_back({{"name", s.name}, {"status", s.status}, {"message", s.message}, {"seconds", s.seconds}});
  j["stages"] = stages;
  json manifest = json::array();
  for (const auto& m : report.manifest)
    manifest.push_back({{"path", m.path},
                        {"stage", m.stage},
                        {"bytes", m.bytes},
                        {"fnv1a64", hex(m.hash)},
                        {"inputs", m.inputs}});
  j["manifest"] = manifest;
  j["manifest_hash"] = hex(report.manifest_hash());
  json head = json::object();
  for (const auto& k : headline_keys()) {
    const auto it = report.headline.find(k);
    head[k] = it == report.headline.end() ? json(nullptr) : number_or_null(it->second);
  }
  j["headline"] = head;
  j["success"] = report.success();
  return j;
}

std::vector<std::string> emit_report(const PipelineReport& report, const std::string& format) {
  fs::create_directories(report.output_dir.empty() ? "." : report.output_dir);
  const fs::path dir = report.output_dir.empty() ? fs::path(".") : fs::path(report.output_dir);
  std::vector<std::string> out;
  if (format == "json") {
    const std::string p = (dir / "report.json").string();
    std::ofstream f(p);
    if (!f) throw ValidationError("cannot write " + p);
    f << report_to_json(report).dump(2) << '\n';
    out.push_back(p);
  } else if (format == "csv") {
    const std::string ps = (dir / "stages.csv").string();
    std::ofstream s(ps);
    if (!s) throw ValidationError("cannot write " + ps);
    s << "stage,status,seconds,message\n";
    for (const auto& st : report.stages) {
      std::string msg = st.message;
      for (char& c : msg)
        if (c == ',' || c == '\n') c = ';';
      s << st.name << ',' << st.status << ',' << st.seconds << ',' << msg << '\n';
    }
    out.push_back(ps);
    const std::string ph = (dir / "headline.csv").string();
    std::ofstream h(ph);
    if (!h) throw ValidationError("cannot write " + ph);
    h << "key,value\n";
    h.precision(17);
    for (const auto& k : headline_keys()) {
      const auto it = report.headline.find(k);
      h << k << ',';
      if (it != report.headline.end() && std::isfinite(it->second)) h << it->second;
      h << '\n';
    }
    out.push_back(ph);
  } else {
    throw ValidationError("unknown report format '" + format + "'");
  }
  return out;
}

namespace {

const std::vector<std::string>& frequency_columns() {
  static const std::vector<std::string> c{"r",   "degenerate", "H",   "D_i", "D_b", "D",          "N",
                                          "G",   "A",          "B",   "e_H", "E_M", "E_F",        "E_Q",
                                          "flat_inner", "outer_bulk"};
  return c;
}

}  // namespace

void write_frequency_csv(const std::string& path, const std::vector<FrequencyReport>& rows) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  const auto& cols = frequency_columns();
  for (std::size_t k = 0; k < cols.size(); ++k) out << (k ? "," : "") << cols[k];
  out << '\n';
  out.precision(17);
  for (const auto& r : rows) {
    out << r.r << ',' << (r.degenerate ? 1 : 0) << ',' << r.H << ',' << r.D_i << ',' << r.D_b << ',' << r.D << ','
        << r.N << ',' << r.G << ',' << r.A << ',' << r.B << ',' << r.e_H << ',' << r.E_M << ',' << r.E_F << ','
        << r.E_Q << ',' << r.flat_inner << ',' << r.outer_bulk << '\n';
  }
}

std::vector<FrequencyReport> read_frequency_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read " + path);
  std::string line;
  std::getline(in, line);
  {
    std::string expect;
    const auto& cols = frequency_columns();
    for (std::size_t k = 0; k < cols.size(); ++k) expect += (k ? "," : "") + cols[k];
    if (trim(line) != expect) throw ValidationError("unexpected frequency CSV header in " + path);
  }
  std::vector<FrequencyReport> out;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::vector<double> v;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      cell = trim(cell);
      v.push_back(cell == "nan" || cell == "-nan" ? kNaN : parse_number("frequency csv", cell));
    }
    if (v.size() != frequency_columns().size()) throw ValidationError("malformed frequency CSV row in " + path);
    FrequencyReport r;
    r.r = v[0];
    r.degenerate = v[1] != 0.0;
    r.H = v[2];
    r.D_i = v[3];
    r.D_b = v[4];
    r.D = v[5];
    r.N = v[6];
    r.G = v[7];
    r.A = v[8];
    r.B = v[9];
    r.e_H = v[10];
    r.E_M = v[11];
    r.E_F = v[12];
    r.E_Q = v[13];
    r.flat_inner = v[14];
    r.outer_bulk = v[15];
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stages

namespace {

struct Context {
  const ExperimentConfig& cfg;
  fs::path dir;
  GridPtr grid;
  PipelineReport* report = nullptr;  // manifest sink, when running the pipeline
};

std::string write_json(const Context& ctx, const std::string& name, const json& j) {
  const std::string p = (ctx.dir / name).string();
  std::ofstream out(p);
  if (!out) throw ValidationError("cannot write " + p);
  out << j.dump(2) << '\n';
  return p;
}

void record(const Context& ctx, const std::string& name, const std::string& stage,
            std::vector<std::string> inputs = {}) {
  if (!ctx.report) return;
  const std::string p = (ctx.dir / name).string();
  ManifestEntry e;
  e.path = name;
  e.stage = stage;
  e.bytes = fs::file_size(p);
  e.hash = file_hash(p);
  e.inputs = std::move(inputs);
  ctx.report->manifest.push_back(std::move(e));
}

AnalyticObstacle make_obstacle(const ExperimentConfig& cfg) {
  const int d = cfg.integer("grid.d");
  if (cfg.get("obstacle") == "flat") return AnalyticObstacle::flat(d);
  return AnalyticObstacle::univariate(cfg.numbers("obstacle"));
}

HarmonicExtension make_extension(const ExperimentConfig& cfg, const AnalyticObstacle& obstacle) {
  if (cfg.integer("grid.d") == 2) return ck_extend(obstacle, cfg.integer("obstacle.order"));
  // Flat 3-D obstacle: m = x_d.
  Poly m(3);
  m.add({0, 0, 1}, 1.0);
  return HarmonicExtension::from_polynomial(3, m);
}

HarmonicExtension extension_from_json(int d, const json& j) {
  Poly m(d);
  for (const auto& [key, val] : j.items()) {
    std::array<int, 3> e{0, 0, 0};
    std::stringstream ss(key);
    std::string part;
    int a = 0;
    while (std::getline(ss, part, ',') && a < 3) e[a++] = std::stoi(part);
    m.add(e, val.get<double>());
  }
  return HarmonicExtension::from_polynomial(d, m);
}

// Closed-form datum as a point function, or the Q1 interpolant of a file.
std::function<double(const Point&)> datum_function(const ExperimentConfig& cfg, GridPtr g) {
  const std::string kind = cfg.get("datum");
  const double amp = cfg.number("datum.amplitude");
  const int d = g->dim();
  if (kind == "zero") return [](const Point&) { return 0.0; };
  if (kind == "half-plane") return [amp, d](const Point& x) { return amp * x[d - 1]; };
  if (kind == "oracle") {
    const HomogeneousOracle o(parse_oracle_kind(cfg.get("datum.kind")), cfg.number("datum.degree"));
    return [o, amp, d](const Point& x) { return amp * o.value({x[0], x[d - 1], 0.0}); };
  }
  if (kind == "random") {
    std::mt19937 rng(static_cast<unsigned>(cfg.integer("seed")));
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    std::vector<std::pair<std::array<int, 3>, double>> terms;
    for (int a = 0; a <= 3; ++a)
      for (int b = 0; a + b <= 3; ++b)
        for (int c = 0; a + b + c <= 3; ++c)
          if (d == 3 || c == 0) terms.push_back({{a, b, c}, U(rng)});
    return [terms, amp](const Point& x) {
      double s = 0.0;
      for (const auto& [e, c] : terms) s += c * std::pow(x[0], e[0]) * std::pow(x[1], e[1]) * std::pow(x[2], e[2]);
      return amp * s;
    };
  }
  auto f = std::make_shared<ScalarField>(read_field_csv(cfg.get("datum.file"), g));
  return [f, amp](const Point& x) { return amp * linear_sample(*f, x); };
}

ScalarField analysed_field(const Context& ctx) {
  if (!ctx.cfg.get("input").empty()) return read_field_csv(ctx.cfg.get("input"), ctx.grid);
  return ScalarField::from_function(ctx.grid, datum_function(ctx.cfg, ctx.grid));
}

BoxOptions box_options(const ExperimentConfig& cfg) {
  BoxOptions o;
  o.tol = cfg.number("solver.tol");
  o.max_iter = cfg.integer("solver.max_iter");
  return o;
}

CutoffProfile cutoff_of(const ExperimentConfig& cfg) { return CutoffProfile::smooth(cfg.number("frequency.upsilon")); }

std::vector<double> radii_of(const ExperimentConfig& cfg) {
  const double a = cfg.number("frequency.r_min"), b = cfg.number("frequency.r_max");
  const int n = cfg.integer("frequency.count");
  std::vector<double> r;
  for (int k = 0; k < n; ++k) r.push_back(a + (b - a) * k / (n - 1));
  return r;
}

NonlinearityModel nonlinearity_of(const ExperimentConfig& cfg) {
  return cfg.get("signorini.nonlinearity") == "cubic" ? NonlinearityModel::cubic_default() : NonlinearityModel::off();
}

struct Geometry {
  AnalyticObstacle obstacle;
  HarmonicExtension m;
  FlowMap flow;
};

Geometry geometry_stage(const Context& ctx, const std::string& stage) {
  Geometry geo;
  geo.obstacle = make_obstacle(ctx.cfg);
  geo.m = make_extension(ctx.cfg, geo.obstacle);
  write_json(ctx, "extension.json", {{"d", geo.m.d}, {"order", geo.m.order}, {"coefficients", geo.m.to_json()}});
  record(ctx, "extension.json", stage);
  // Everything downstream uses the extension as read back from disk.
  std::ifstream in(ctx.dir / "extension.json");
  const json j = json::parse(in);
  geo.m = extension_from_json(j["d"].get<int>(), j["coefficients"]);
  geo.flow = flow_for_grid(geo.m, geo.obstacle, *ctx.grid, ctx.cfg.number("flow.delta"), ctx.cfg.number("flow.dt"));
  const FlowInvariants inv = check_flow_invariants(geo.flow, geo.m, geo.obstacle);
  const CoefficientSet c = assemble_coefficients(geo.flow, geo.m, ctx.grid, ctx.cfg.number("flow.delta"));
  const CoefficientChecks cc = check_coefficients(c);
  write_json(ctx, "flow.json",
             {{"level", inv.level},
              {"metric", inv.metric},
              {"orthogonality", inv.orthogonality},
              {"conservation", inv.conservation},
              {"validity_radius", ctx.grid->dim() == 2 ? validity_radius(geo.m, geo.obstacle) : kNaN},
              {"coefficients",
               {{"asymmetry", cc.asymmetry},
                {"min_eigenvalue", cc.min_eigenvalue},
                {"max_eigenvalue", cc.max_eigenvalue},
                {"q_on_flat", cc.q_on_flat},
                {"radial_identity", cc.radial_identity},
                {"normal_f_on_flat", cc.normal_f_on_flat}}}});
  record(ctx, "flow.json", stage, {"extension.json"});
  return geo;
}

CoefficientSet coefficients_for(const Context& ctx, const Geometry* geo) {
  if (ctx.cfg.get("signorini.coefficients") == "flat" && !geo) return CoefficientSet::flat(ctx.grid);
  if (geo) return assemble_coefficients(geo->flow, geo->m, ctx.grid, ctx.cfg.number("flow.delta"));
  const Context quiet{ctx.cfg, ctx.dir, ctx.grid, nullptr};
  const Geometry g = geometry_stage(quiet, "coefficients");
  return assemble_coefficients(g.flow, g.m, ctx.grid, ctx.cfg.number("flow.delta"));
}

struct SolveOut {
  BernoulliSolution sol;
  double linf_vs_halfplane = kNaN;
};

SolveOut solve_stage(const Context& ctx, const std::string& stage) {
  BernoulliProblem p;
  p.grid = ctx.grid;
  p.obstacle = make_obstacle(ctx.cfg);
  const auto datum = datum_function(ctx.cfg, ctx.grid);
  p.datum = [datum](const Point& x) { return std::max(0.0, datum(x)); };
  p.eps = ctx.cfg.number("bernoulli.eps");
  SolveOut out;
  out.sol = minimize_J1(p, box_options(ctx.cfg));
  const ContactSets sets = extract_sets(out.sol, p.obstacle, ctx.cfg.number("tau"));
  write_field_csv((ctx.dir / "u.csv").string(), out.sol.u);
  record(ctx, "u.csv", stage);
  if (ctx.cfg.get("datum") == "half-plane" && ctx.cfg.get("obstacle") == "flat") {
    const int d = ctx.grid->dim();
    double e = 0.0;
    for (std::size_t i = 0; i < ctx.grid->node_count(); ++i)
      if (ctx.grid->kind(i) != NodeKind::outside)
        e = std::max(e, std::abs(out.sol.u[i] - p.datum(ctx.grid->node_coord(i))));
    out.linf_vs_halfplane = e;
    (void)d;
  }
  write_json(ctx, "solve.json",
             {{"iterations", out.sol.iterations},
              {"residual", out.sol.residual},
              {"J1", out.sol.J1},
              {"eps", out.sol.eps},
              {"contact_columns", sets.contact},
              {"singular_columns", sets.singular},
              {"linf_vs_halfplane", number_or_null(out.linf_vs_halfplane)}});
  record(ctx, "solve.json", stage, {"u.csv"});
  return out;
}

struct HodographOut {
  HodographResult res;
  double w_linf = 0.0;
  std::size_t flat_nodes = 0;
  BranchLists branch;
};

HodographOut hodograph_stage(const Context& ctx, const Geometry& geo, double eps, const std::string& stage) {
  const ScalarField u = read_field_csv((ctx.dir / "u.csv").string(), ctx.grid);
  HodographOptions o;
  o.layer = eps;
  HodographOut out;
  out.res = m_hodograph(u, geo.flow, geo.m, ctx.grid, o);
  for (std::size_t i = 0; i < out.res.w.values.size(); ++i)
    if (out.res.footprint[i]) out.w_linf = std::max(out.w_linf, std::abs(out.res.w[i]));
  out.branch = branch_characterization(out.res, ctx.cfg.number("tau"));
  for (std::size_t i = 0; i < ctx.grid->node_count(); ++i) {
    if (ctx.grid->kind(i) != NodeKind::flat) continue;
    const Point x = ctx.grid->node_coord(i);
    if (norm2(x) < 1.0) ++out.flat_nodes;  // strictly inside the unit disk
  }
  write_field_csv((ctx.dir / "w_hodograph.csv").string(), out.res.w);
  record(ctx, "w_hodograph.csv", stage, {"u.csv", "extension.json"});
  write_json(ctx, "branch.json",
             {{"tau", ctx.cfg.number("tau")},
              {"w_linf", out.w_linf},
              {"margin", out.res.margin},
              {"flat_nodes", out.flat_nodes},
              {"zero_nodes", out.branch.zero},
              {"singular_nodes", out.branch.singular}});
  record(ctx, "branch.json", stage, {"w_hodograph.csv"});
  return out;
}

ThinObstacleSolution signorini_stage(const Context& ctx, const CoefficientSet& coeffs,
                                     const std::function<double(const Point&)>& datum,
                                     const std::vector<std::string>& inputs, const std::string& stage) {
  ThinObstacleProblem p;
  p.coefficients = coeffs;
  p.nonlinearity = nonlinearity_of(ctx.cfg);
  p.datum = datum;
  p.lipschitz_cap = ctx.cfg.number("signorini.lipschitz_cap");
  const ThinObstacleSolution sol = minimize_thin_obstacle(p, box_options(ctx.cfg));
  const double vi = vi_residual(sol.w, coeffs, p.nonlinearity, p.rim_dirichlet);
  write_field_csv((ctx.dir / "w.csv").string(), sol.w);
  record(ctx, "w.csv", stage, inputs);
  write_json(ctx, "signorini.json",
             {{"energy_F", sol.energy.F},
              {"energy_E", sol.energy.E},
              {"residual", sol.residual},
              {"vi_residual", vi},
              {"iterations", sol.iterations},
              {"active_nodes", sol.active.size()},
              {"tau", sol.tau},
              {"nonlinearity", ctx.cfg.get("signorini.nonlinearity")}});
  record(ctx, "signorini.json", stage, {"w.csv"});
  return sol;
}

struct FrequencyOut {
  double N0 = kNaN;
  double min_C = kNaN;
  double identity_max = kNaN;
  std::size_t degenerate = 0;
  bool any = false;
};

// Radii where the sphere average of w^2 is below (4h)^2 count as degenerate:
// there w vanishes at the resolution of the lattice.
FrequencyOut frequency_stage(const Context& ctx, const ScalarField& w, const CoefficientSet& coeffs,
                             double solver_residual, const std::vector<std::string>& inputs,
                             const std::string& stage) {
  const auto radii = radii_of(ctx.cfg);
  const CutoffProfile cut = cutoff_of(ctx.cfg);
  const FrequencyEvaluator ev(w, coeffs);
  const int d = ctx.grid->dim();
  const double floor_h = 16.0 * ctx.grid->h() * ctx.grid->h();
  const NonlinearityModel nonlin = nonlinearity_of(ctx.cfg);
  ThinObstacleSolution sol;
  sol.w = w;
  sol.residual = solver_residual;

  std::vector<FrequencyReport> rows;
  std::vector<double> live;
  json per_radius = json::array();
  FrequencyOut out;
  out.identity_max = 0.0;
  for (double r : radii) {
    FrequencyReport rep = ev.report(r, cut);
    const double avg = ev.report(r, CutoffProfile::sharp_limit()).H * std::pow(r, 1 - d);
    json row = {{"r", r}, {"sphere_average", avg}};
    if (avg <= floor_h) {
      rep.degenerate = true;
      rep.N = kNaN;
      ++out.degenerate;
      row["degenerate"] = true;
    } else {
      live.push_back(r);
      const double hid = ev.height_identity(r, cut);
      const auto o = outer_variation_identity(sol, coeffs, r, cut, nonlin);
      const auto i = inner_variation_identity(sol, coeffs, r, cut, nonlin);
      out.identity_max = std::max({out.identity_max, hid, o.gateaux, i.gateaux});
      row["degenerate"] = false;
      row["height_identity"] = hid;
      row["outer_gateaux"] = o.gateaux;
      row["inner_gateaux"] = i.gateaux;
      row["outer_assembled"] = number_or_null(o.assembled);
      row["inner_assembled"] = number_or_null(i.assembled);
      if (!o.warning.empty()) row["warning"] = o.warning;
    }
    rows.push_back(rep);
    per_radius.push_back(row);
  }
  json summary = {{"upsilon", cut.upsilon}, {"degenerate_radii", out.degenerate}, {"radii", per_radius}};
  if (live.size() >= 2) {
    const ScanReport scan = monotonicity_scan(w, coeffs, live, cut,
                                              {ctx.cfg.number("frequency.C"), ctx.cfg.number("frequency.kappa")},
                                              ctx.cfg.number("frequency.slack"));
    out.N0 = scan.N0;
    out.min_C = scan.min_C;
    out.any = true;
    summary["min_C"] = number_or_null(scan.min_C);
    summary["feasible"] = scan.feasible;
    summary["N0"] = number_or_null(scan.N0);
    summary["max_drop"] = scan.max_drop;
    summary["monotone_uncorrected"] = scan.monotone_uncorrected;
    summary["identity_max"] = out.identity_max;
  } else {
    out.identity_max = kNaN;
    summary["min_C"] = nullptr;
    summary["N0"] = nullptr;
    summary["identity_max"] = nullptr;
  }
  write_frequency_csv((ctx.dir / "frequency.csv").string(), rows);
  record(ctx, "frequency.csv", stage, inputs);
  write_json(ctx, "frequency.json", summary);
  record(ctx, "frequency.json", stage, inputs);
  return out;
}

std::size_t whitney_stage(const Context& ctx, const ScalarField& w, const std::vector<std::string>& inputs,
                          const std::string& stage) {
  WhitneyParams p;
  p.C0 = ctx.cfg.number("whitney.C0");
  p.alpha = ctx.cfg.number("whitney.alpha");
  p.j_max = ctx.cfg.integer("whitney.j_max");
  p.N0 = ctx.cfg.integer("whitney.N0");
  p.c0 = ctx.cfg.number("whitney.c0");
  const WhitneyDecomposition dec = whitney_decompose(w, p);
  const double h = ctx.grid->h();
  const double tw = ctx.cfg.number("whitney.tau_w") > 0 ? ctx.cfg.number("whitney.tau_w") : 5 * h;
  const double tg = ctx.cfg.number("whitney.tau_grad") > 0 ? ctx.cfg.number("whitney.tau_grad") : 5 * std::sqrt(h);
  const WhitneyProperties pr = check_whitney_properties(dec, w, tw, tg);
  write_whitney_json((ctx.dir / "whitney.json").string(), dec);
  record(ctx, "whitney.json", stage, inputs);
  write_gamma_csv((ctx.dir / "gamma.csv").string(), dec, w);
  record(ctx, "gamma.csv", stage, inputs);
  write_json(ctx, "whitney_properties.json",
             {{"cover", pr.cover},
              {"cover_defects", pr.cover_defects},
              {"gamma_sup_w", pr.gamma_sup_w},
              {"gamma_sup_grad", pr.gamma_sup_grad},
              {"gamma_zero", pr.gamma_zero},
              {"tau_w", tw},
              {"tau_grad", tg},
              {"early_generations_empty", pr.early_generations_empty},
              {"center_violations", pr.center_violations},
              {"excess_l2_constant", pr.excess_l2_constant},
              {"excess_energy_constant", pr.excess_energy_constant},
              {"height_l2_constant", pr.height_l2_constant},
              {"height_energy_constant", pr.height_energy_constant},
              {"excess", pr.excess_count},
              {"height", pr.height_count},
              {"residual", pr.residual_count},
              {"gamma_size", dec.gamma_nodes.size()}});
  record(ctx, "whitney_properties.json", stage, {"whitney.json"});
  return dec.gamma_nodes.size();
}

BlowupMatch blowup_stage(const Context& ctx, const ScalarField& w, const std::vector<std::string>& inputs,
                         const std::string& stage) {
  const RescaleSequence seq = rescale(w, ctx.cfg.numbers("blowup.radii"));
  if (seq.fields.empty()) throw NumericalError("blow-up: height vanishes at the first radius");
  const BlowupMatch m = classify_blowup(seq, oracle_catalog(ctx.cfg.number("blowup.max_degree")));
  json fits = json::array();
  for (const auto& f : m.fits)
    fits.push_back({{"oracle", f.name}, {"degree", f.degree}, {"amplitude", f.amplitude}, {"misfit", f.misfit}});
  write_json(ctx, "blowup.json",
             {{"radii", seq.radii},
              {"height", seq.height},
              {"unit_height", seq.unit_height},
              {"truncated", seq.truncated},
              {"best", m.best.name},
              {"matched_degree", m.best.degree},
              {"misfit", m.best.misfit},
              {"amplitude", m.best.amplitude},
              {"N0", number_or_null(m.N0)},
              {"degree_consistent", m.degree_consistent},
              {"fits", fits}});
  record(ctx, "blowup.json", stage, inputs);
  return m;
}

template <class Fn>
bool run_stage(PipelineReport& rep, const std::string& name, Fn&& fn) {
  StageStatus st;
  st.name = name;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    st.message = fn();
    st.status = "ok";
  } catch (const ValidationError& e) {
    st.status = "failed";
    st.message = name + ": invalid input: " + e.what();
  } catch (const std::exception& e) {
    st.status = "failed";
    st.message = name + ": " + e.what();
  }
  st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  rep.stages.push_back(st);
  return st.status == "ok";
}

}  // namespace

PipelineReport run_pipeline(const ExperimentConfig& config) {
  config.validate();
  PipelineReport rep;
  rep.output_dir = config.get("output");
  fs::create_directories(rep.output_dir);
  Context ctx{config, fs::path(rep.output_dir), make_grid(config.integer("grid.d"), config.integer("grid.n")), &rep};
  {
    // The output directory is left out so that identical runs hash identically.
    ExperimentConfig stored = config;
    stored.set("output", ".");
    std::ofstream cf(ctx.dir / "config.txt");
    cf << stored.to_text();
  }
  record(ctx, "config.txt", "config");

  const std::vector<std::string> names{"solve", "geometry", "hodograph", "signorini", "frequency", "whitney", "blowup"};
  double eps = 0.0;
  Geometry geo;
  ThinObstacleSolution tsol;
  FrequencyOut fr;
  bool ok = true;
  auto stage = [&](const std::string& name, auto&& fn) {
    if (!ok) {
      rep.stages.push_back({name, "skipped", "an earlier stage failed", 0.0});
      return;
    }
    ok = run_stage(rep, name, fn);
  };

  stage("solve", [&] {
    const SolveOut s = solve_stage(ctx, "solve");
    eps = s.sol.eps;
    rep.headline["u_linf_error"] = s.linf_vs_halfplane;
    return std::string("J1 = ") + std::to_string(s.sol.J1);
  });
  stage("geometry", [&] {
    geo = geometry_stage(ctx, "geometry");
    return std::string("extension order ") + std::to_string(geo.m.order);
  });
  stage("hodograph", [&] {
    const HodographOut h = hodograph_stage(ctx, geo, eps, "hodograph");
    rep.headline["hodograph_w_linf"] = h.w_linf;
    rep.headline["branch_zero_nodes"] = static_cast<double>(h.branch.zero.size());
    rep.headline["flat_nodes"] = static_cast<double>(h.flat_nodes);
    return std::string("||w|| = ") + std::to_string(h.w_linf);
  });
  stage("signorini", [&] {
    const ScalarField wh = read_field_csv((ctx.dir / "w_hodograph.csv").string(), ctx.grid);
    const CoefficientSet c = assemble_coefficients(geo.flow, geo.m, ctx.grid, config.number("flow.delta"));
    tsol = signorini_stage(ctx, c, [wh](const Point& x) { return linear_sample(wh, x); },
                           {"w_hodograph.csv", "extension.json"}, "signorini");
    rep.headline["signorini_residual"] = tsol.residual;
    return std::string("residual ") + std::to_string(tsol.residual);
  });
  stage("frequency", [&] {
    const ScalarField w = read_field_csv((ctx.dir / "w.csv").string(), ctx.grid);
    const CoefficientSet c = assemble_coefficients(geo.flow, geo.m, ctx.grid, config.number("flow.delta"));
    fr = frequency_stage(ctx, w, c, tsol.residual, {"w.csv", "extension.json"}, "frequency");
    rep.headline["N0"] = fr.N0;
    rep.headline["min_C"] = fr.min_C;
    rep.headline["identity_max"] = fr.identity_max;
    rep.headline["degenerate_radii"] = static_cast<double>(fr.degenerate);
    return std::to_string(fr.degenerate) + " degenerate radii";
  });
  stage("whitney", [&] {
    const ScalarField w = read_field_csv((ctx.dir / "w.csv").string(), ctx.grid);
    const std::size_t n = whitney_stage(ctx, w, {"w.csv"}, "whitney");
    rep.headline["gamma_size"] = static_cast<double>(n);
    return std::to_string(n) + " residual-set nodes";
  });
  if (ok && !fr.any) {
    rep.stages.push_back({"blowup", "skipped", "w vanishes at lattice resolution on every radius", 0.0});
  } else {
    stage("blowup", [&] {
      const ScalarField w = read_field_csv((ctx.dir / "w.csv").string(), ctx.grid);
      const BlowupMatch m = blowup_stage(ctx, w, {"w.csv"}, "blowup");
      rep.headline["blowup_degree"] = m.best.degree;
      rep.headline["blowup_misfit"] = m.best.misfit;
      return "matched " + m.best.name;
    });
  }
  (void)names;
  return rep;
}

// ---------------------------------------------------------------------------
// Subcommands

const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> s{"solve",     "flow",    "hodograph", "signorini", "frequency",
                                          "whitney",   "blowup",  "pipeline",  "report"};
  return s;
}

namespace {

int report_subcommand(const Context& ctx, std::ostream& log) {
  const fs::path p = ctx.dir / "report.json";
  std::ifstream in(p);
  if (!in) throw ValidationError("no report.json in " + ctx.dir.string());
  const json j = json::parse(in);
  std::size_t bad = 0;
  PipelineReport rep;
  rep.output_dir = ctx.dir.string();
  for (const auto& m : j.at("manifest")) {
    ManifestEntry e;
    e.path = m.at("path").get<std::string>();
    e.stage = m.at("stage").get<std::string>();
    const fs::path f = ctx.dir / e.path;
    if (!fs::exists(f)) {
      log << "missing " << e.path << '\n';
      ++bad;
      continue;
    }
    e.hash = file_hash(f.string());
    e.bytes = fs::file_size(f);
    if (hex(e.hash) != m.at("fnv1a64").get<std::string>()) {
      log << "hash mismatch " << e.path << '\n';
      ++bad;
    }
    rep.manifest.push_back(e);
  }
  for (const auto& s : j.at("stages"))
    rep.stages.push_back({s.at("name").get<std::string>(), s.at("status").get<std::string>(),
                          s.at("message").get<std::string>(), s.at("seconds").get<double>()});
  for (const auto& [k, v] : j.at("headline").items()) rep.headline[k] = v.is_null() ? kNaN : v.get<double>();
  emit_report(rep, "csv");
  log << "manifest " << (bad ? "FAILED" : "verified") << " (" << rep.manifest.size() << " files)\n";
  if (bad) throw NumericalError("manifest verification failed", static_cast<double>(bad));
  return 0;
}

}  // namespace

int run_subcommand(const std::string& name, const ExperimentConfig& config, std::ostream& log) {
  try {
    config.validate();
    const fs::path dir(config.get("output"));
    fs::create_directories(dir);
    const GridPtr g = make_grid(config.integer("grid.d"), config.integer("grid.n"));
    const Context ctx{config, dir, g, nullptr};
    if (name == "solve") {
      const SolveOut s = solve_stage(ctx, name);
      log << "solve: J1 = " << s.sol.J1 << ", residual " << s.sol.residual << '\n';
    } else if (name == "flow") {
      geometry_stage(ctx, name);
      log << "flow: wrote extension.json, flow.json\n";
    } else if (name == "hodograph") {
      const SolveOut s = solve_stage(ctx, name);
      const Geometry geo = geometry_stage(ctx, name);
      const HodographOut h = hodograph_stage(ctx, geo, s.sol.eps, name);
      log << "hodograph: ||w|| = " << h.w_linf << ", " << h.branch.zero.size() << " of " << h.flat_nodes
          << " flat nodes in the branch list\n";
    } else if (name == "signorini") {
      const CoefficientSet c = coefficients_for(ctx, nullptr);
      const ThinObstacleSolution s = signorini_stage(ctx, c, datum_function(config, g), {}, name);
      log << "signorini: residual " << s.residual << ", " << s.active.size() << " active nodes\n";
    } else if (name == "frequency") {
      const ScalarField w = analysed_field(ctx);
      const CoefficientSet c = coefficients_for(ctx, nullptr);
      const FrequencyOut f = frequency_stage(ctx, w, c, 0.0, {}, name);
      log << "frequency: N0 = " << f.N0 << ", min C = " << f.min_C << ", " << f.degenerate << " degenerate radii\n";
    } else if (name == "whitney") {
      const std::size_t n = whitney_stage(ctx, analysed_field(ctx), {}, name);
      log << "whitney: " << n << " residual-set nodes\n";
    } else if (name == "blowup") {
      const BlowupMatch m = blowup_stage(ctx, analysed_field(ctx), {}, name);
      log << "blowup: " << m.best.name << ", misfit " << m.best.misfit << ", N0 " << m.N0 << '\n';
    } else if (name == "pipeline") {
      const PipelineReport rep = run_pipeline(config);
      emit_report(rep, "json");
      emit_report(rep, "csv");
      for (const auto& s : rep.stages) log << s.name << ": " << s.status << (s.message.empty() ? "" : " (" + s.message + ")") << '\n';
      if (!rep.success()) {
        for (const auto& s : rep.stages)
          if (s.status == "failed") {
            if (s.message.find(": invalid input: ") != std::string::npos) return 2;
          }
        return 3;
      }
    } else if (name == "report") {
      return report_subcommand(ctx, log);
    } else {
      throw ValidationError("unknown subcommand '" + name + "'");
    }
    return 0;
  } catch (const ValidationError& e) {
    log << "validation error: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    log << "numerical error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    return 3;
  }
}

}  // namespace branchlab
