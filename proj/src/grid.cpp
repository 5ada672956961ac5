#include "branchlab/grid.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "branchlab/errors.hpp"

namespace branchlab {

namespace {

constexpr double kOnSphere = 1e-12;

// Integral of sqrt(R^2 - t^2) from 0 to u, u clamped to [-R, R].
double chord_primitive(double u, double R) {
  u = std::clamp(u, -R, R);
  return 0.5 * (u * std::sqrt(std::max(0.0, R * R - u * u)) + R * R * std::asin(u / R));
}

// Area of the disk intersected with {x <= X, y <= Y}.
double quadrant_area(double X, double Y, double R) {
  if (X <= -R || Y <= -R) return 0.0;
  X = std::min(X, R);
  auto P = [R](double u) { return chord_primitive(u, R); };
  if (Y >= R) return 2.0 * (P(X) - P(-R));
  const double c = std::sqrt(R * R - Y * Y);
  double total = 0.0;
  // |x| > c: the chord lies wholly below Y when Y >= 0, wholly above when Y < 0.
  if (Y >= 0.0) total += 2.0 * (P(std::min(X, -c)) - P(-R));
  if (X > -c) {
    const double b = std::min(X, c);
    total += Y * (b + c) + P(b) - P(-c);
  }
  if (Y >= 0.0 && X > c) total += 2.0 * (P(X) - P(c));
  return total;
}

}  // namespace

double rect_disk_area(double x0, double x1, double y0, double y1, double R) {
  const double a = quadrant_area(x1, y1, R) - quadrant_area(x0, y1, R) -
                   quadrant_area(x1, y0, R) + quadrant_area(x0, y0, R);
  return std::clamp(a, 0.0, (x1 - x0) * (y1 - y0));
}

double norm2(const Point& x) { return x[0] * x[0] + x[1] * x[1] + x[2] * x[2]; }

HalfBallGrid::HalfBallGrid(int d, int n) : d_(d), n_(n), h_(1.0 / n) {
  if (d != 2 && d != 3) throw ValidationError("grid dimension must be 2 or 3");
  if (n < 4) throw ValidationError("grid needs n >= 4");
  for (int a = 0; a < d - 1; ++a) node_ext_[a] = 2 * n + 1;
  node_ext_[d - 1] = n + 1;
  stride_[d - 1] = 1;
  cell_stride_[d - 1] = 1;
  for (int a = d - 2; a >= 0; --a) {
    stride_[a] = stride_[a + 1] * node_ext_[a + 1];
    cell_stride_[a] = cell_stride_[a + 1] * (node_ext_[a + 1] - 1);
  }
  std::size_t nodes = 1, cells = 1;
  for (int a = 0; a < d; ++a) {
    nodes *= node_ext_[a];
    cells *= node_ext_[a] - 1;
  }

  kind_.resize(nodes);
  for (std::size_t i = 0; i < nodes; ++i) {
    const Index idx = node_multi(i);
    const Point x = coord(idx);
    const double r = std::sqrt(norm2(x));
    if (std::abs(r - 1.0) <= kOnSphere) {
      kind_[i] = NodeKind::sphere;
    } else if (r > 1.0) {
      kind_[i] = NodeKind::outside;
    } else if (idx[d - 1] == 0) {
      kind_[i] = NodeKind::flat;
    } else {
      kind_[i] = NodeKind::inside;
    }
  }

  weight_.assign(cells, 0.0);
  constexpr int kSub = 4;
  for (std::size_t c = 0; c < cells; ++c) {
    // Weights are computed on the mirror image with x' >= 0 so the mask is
    // exactly symmetric under tangential reflections.
    Index ci = cell_multi(c);
    for (int a = 0; a < d - 1; ++a) ci[a] = std::max(ci[a], node_ext_[a] - 2 - ci[a]);
    const Point lo = coord(ci);
    // Nearest and farthest squared distances of the cell from the origin.
    double near2 = 0.0, far2 = 0.0;
    for (int a = 0; a < d; ++a) {
      const double l = lo[a], u = lo[a] + h_;
      const double nearest = (l <= 0.0 && u >= 0.0) ? 0.0 : std::min(std::abs(l), std::abs(u));
      near2 += nearest * nearest;
      far2 += std::max(l * l, u * u);
    }
    if (far2 <= 1.0) {
      weight_[c] = 1.0;
    } else if (near2 >= 1.0) {
      weight_[c] = 0.0;
    } else if (d == 2) {
      weight_[c] = rect_disk_area(lo[0], lo[0] + h_, lo[1], lo[1] + h_, 1.0) / (h_ * h_);
    } else {
      int hits = 0;
      for (int i = 0; i < kSub; ++i)
        for (int j = 0; j < kSub; ++j)
          for (int k = 0; k < kSub; ++k) {
            const Point p{lo[0] + (i + 0.5) * h_ / kSub, lo[1] + (j + 0.5) * h_ / kSub,
                          lo[2] + (k + 0.5) * h_ / kSub};
            if (norm2(p) < 1.0) ++hits;
          }
      weight_[c] = static_cast<double>(hits) / (kSub * kSub * kSub);
    }
  }

  active_.assign(nodes, 0);
  node_volume_.assign(nodes, 0.0);
  const double cell_vol = std::pow(h_, d);
  const int nc = corners_per_cell();
  for (std::size_t c = 0; c < cells; ++c) {
    if (weight_[c] <= 0.0) continue;
    const auto corners = cell_corners(c);
    for (int k = 0; k < nc; ++k) {
      active_[corners[k]] = 1;
      node_volume_[corners[k]] += weight_[c] * cell_vol / nc;
    }
  }
}

std::size_t HalfBallGrid::node_index(const Index& idx) const {
  std::size_t s = 0;
  for (int a = 0; a < d_; ++a) s += static_cast<std::size_t>(idx[a]) * stride_[a];
  return s;
}

Index HalfBallGrid::node_multi(std::size_t node) const {
  Index idx{0, 0, 0};
  for (int a = 0; a < d_; ++a) {
    idx[a] = static_cast<int>(node / stride_[a]);
    node %= stride_[a];
  }
  return idx;
}

Point HalfBallGrid::coord(const Index& idx) const {
  Point x{0.0, 0.0, 0.0};
  for (int a = 0; a < d_ - 1; ++a) x[a] = -1.0 + idx[a] * h_;
  x[d_ - 1] = idx[d_ - 1] * h_;
  return x;
}

Index HalfBallGrid::nearest(const Point& x) const {
  Index idx{0, 0, 0};
  for (int a = 0; a < d_; ++a) {
    const double origin = (a < d_ - 1) ? -1.0 : 0.0;
    idx[a] = std::clamp(static_cast<int>(std::lround((x[a] - origin) / h_)), 0, node_ext_[a] - 1);
  }
  return idx;
}

std::size_t HalfBallGrid::cell_index(const Index& idx) const {
  std::size_t s = 0;
  for (int a = 0; a < d_; ++a) s += static_cast<std::size_t>(idx[a]) * cell_stride_[a];
  return s;
}

Index HalfBallGrid::cell_multi(std::size_t cell) const {
  Index idx{0, 0, 0};
  for (int a = 0; a < d_; ++a) {
    idx[a] = static_cast<int>(cell / cell_stride_[a]);
    cell %= cell_stride_[a];
  }
  return idx;
}

std::array<std::size_t, 8> HalfBallGrid::cell_corners(std::size_t cell) const {
  std::array<std::size_t, 8> out{};
  const std::size_t base = node_index(cell_multi(cell));
  for (int k = 0; k < (1 << d_); ++k) {
    std::size_t s = base;
    for (int a = 0; a < d_; ++a)
      if (k & (1 << a)) s += stride_[a];
    out[k] = s;
  }
  return out;
}

MaskStats HalfBallGrid::stats() const {
  MaskStats s;
  for (std::size_t i = 0; i < kind_.size(); ++i) {
    switch (kind_[i]) {
      case NodeKind::inside: ++s.inside; break;
      case NodeKind::flat: ++s.flat; break;
      case NodeKind::sphere: ++s.sphere; break;
      case NodeKind::outside: ++s.outside; break;
    }
    if (active_[i]) ++s.active;
  }
  const double cell_vol = std::pow(h_, d_);
  for (double w : weight_) s.volume += w * cell_vol;
  return s;
}

GridPtr make_grid(int d, int n) { return std::make_shared<const HalfBallGrid>(d, n); }

ScalarField ScalarField::zeros(GridPtr g) {
  ScalarField f;
  f.values.assign(g->node_count(), 0.0);
  f.grid = std::move(g);
  return f;
}

ScalarField ScalarField::from_function(GridPtr g, const std::function<double(const Point&)>& fn) {
  ScalarField f = zeros(g);
  for (std::size_t i = 0; i < f.values.size(); ++i) f.values[i] = fn(g->node_coord(i));
  return f;
}

Point VectorField::at(std::size_t node) const {
  Point p{0.0, 0.0, 0.0};
  for (int a = 0; a < grid->dim(); ++a) p[a] = comp[a][node];
  return p;
}

void require_same_grid(const ScalarField& a, const ScalarField& b) {
  if (!a.grid || !b.grid || !(*a.grid == *b.grid)) throw ValidationError("incompatible grids");
}

double integrate(const ScalarField& f, const ScalarField* weight) {
  if (weight) require_same_grid(f, *weight);
  const HalfBallGrid& g = *f.grid;
  const int nc = g.corners_per_cell();
  const double cell_vol = std::pow(g.h(), g.dim());
  double total = 0.0;
  for (std::size_t c = 0; c < g.cell_count(); ++c) {
    const double w = g.cell_weight(c);
    if (w <= 0.0) continue;
    const auto corners = g.cell_corners(c);
    double avg = 0.0;
    for (int k = 0; k < nc; ++k) {
      const std::size_t i = corners[k];
      avg += weight ? f.values[i] * weight->values[i] : f.values[i];
    }
    total += w * cell_vol * avg / nc;
  }
  return total;
}

VectorField gradient(const ScalarField& f) {
  const HalfBallGrid& g = *f.grid;
  const int d = g.dim();
  const double h = g.h();
  VectorField out;
  out.grid = f.grid;
  for (int a = 0; a < d; ++a) out.comp[a].assign(g.node_count(), 0.0);
  for (std::size_t i = 0; i < g.node_count(); ++i) {
    const Index idx = g.node_multi(i);
    for (int a = 0; a < d; ++a) {
      const std::size_t s = g.stride(a);
      const int last = g.node_extent(a) - 1;
      double v;
      if (idx[a] > 0 && idx[a] < last) {
        v = (f.values[i + s] - f.values[i - s]) / (2.0 * h);
      } else if (idx[a] == 0) {
        v = (-3.0 * f.values[i] + 4.0 * f.values[i + s] - f.values[i + 2 * s]) / (2.0 * h);
      } else {
        v = (3.0 * f.values[i] - 4.0 * f.values[i - s] + f.values[i - 2 * s]) / (2.0 * h);
      }
      out.comp[a][i] = v;
    }
  }
  return out;
}

namespace {

struct AxisStencil {
  int base = 0;  // lattice index of slot 0
  std::array<double, 4> w{};
  std::array<double, 4> dw{};
};

// Locates x along one axis: cell index i and local coordinate t in [0, 1].
void locate(const HalfBallGrid& g, int axis, double x, int& i, double& t) {
  const double origin = (axis < g.dim() - 1) ? -1.0 : 0.0;
  const int ncell = g.node_extent(axis) - 1;
  const double u = (x - origin) / g.h();
  i = std::clamp(static_cast<int>(std::floor(u)), 0, ncell - 1);
  t = std::clamp(u - i, 0.0, 1.0);
}

// Cubic Hermite weights on slots i-1, i, i+1, i+2 for the value and d/dx.
AxisStencil cubic_stencil(const HalfBallGrid& g, int axis, double x) {
  int i;
  double t;
  locate(g, axis, x, i, t);
  const int last = g.node_extent(axis) - 1;
  const double h00 = (2 * t - 3) * t * t + 1, h10 = ((t - 2) * t + 1) * t;
  const double h01 = (3 - 2 * t) * t * t, h11 = (t - 1) * t * t;
  const double d00 = 6 * t * t - 6 * t, d10 = (3 * t - 4) * t + 1;
  const double d01 = -6 * t * t + 6 * t, d11 = (3 * t - 2) * t;
  AxisStencil s;
  s.base = i - 1;
  // Slope at node k in index units as weights on slots.
  auto slope = [&](int k, std::array<double, 4>& m) {
    m.fill(0.0);
    const int slot = k - s.base;
    if (k == 0) {
      m[slot] = -1.5, m[slot + 1] = 2.0, m[slot + 2] = -0.5;
    } else if (k == last) {
      m[slot] = 1.5, m[slot - 1] = -2.0, m[slot - 2] = 0.5;
    } else {
      m[slot + 1] = 0.5, m[slot - 1] = -0.5;
    }
  };
  std::array<double, 4> mi, mj;
  slope(i, mi);
  slope(i + 1, mj);
  const double inv_h = 1.0 / g.h();
  for (int k = 0; k < 4; ++k) {
    s.w[k] = h10 * mi[k] + h11 * mj[k];
    s.dw[k] = (d10 * mi[k] + d11 * mj[k]) * inv_h;
  }
  s.w[1] += h00, s.w[2] += h01;
  s.dw[1] += d00 * inv_h, s.dw[2] += d01 * inv_h;
  return s;
}

int clamp_index(const HalfBallGrid& g, int axis, int k) {
  return std::clamp(k, 0, g.node_extent(axis) - 1);
}

}  // namespace

double linear_sample(const ScalarField& f, const Point& x) {
  const HalfBallGrid& g = *f.grid;
  const int d = g.dim();
  std::array<int, 3> i{0, 0, 0};
  std::array<double, 3> t{0, 0, 0};
  for (int a = 0; a < d; ++a) locate(g, a, x[a], i[a], t[a]);
  const std::size_t base = g.node_index(i);
  double v = 0.0;
  for (int k = 0; k < (1 << d); ++k) {
    double w = 1.0;
    std::size_t s = base;
    for (int a = 0; a < d; ++a) {
      if (k & (1 << a)) {
        w *= t[a];
        s += g.stride(a);
      } else {
        w *= 1.0 - t[a];
      }
    }
    v += w * f.values[s];
  }
  return v;
}

CubicSampler::CubicSampler(const ScalarField& f) : field_(&f) {
  for (int a = 0; a < f.grid->dim(); ++a)
    if (f.grid->node_extent(a) < 4) throw ValidationError("cubic sampling needs 4 nodes per axis");
}

double CubicSampler::value(const Point& x) const {
  Point g;
  return value_grad(x, g);
}

double CubicSampler::value_grad(const Point& x, Point& grad) const {
  const HalfBallGrid& g = *field_->grid;
  const auto& v = field_->values;
  const int d = g.dim();
  std::array<AxisStencil, 3> st;
  for (int a = 0; a < d; ++a) st[a] = cubic_stencil(g, a, x[a]);
  grad = {0.0, 0.0, 0.0};
  double val = 0.0;
  if (d == 2) {
    for (int p = 0; p < 4; ++p) {
      const double wp = st[0].w[p], dp = st[0].dw[p];
      if (wp == 0.0 && dp == 0.0) continue;
      const std::size_t rp = clamp_index(g, 0, st[0].base + p) * g.stride(0);
      for (int q = 0; q < 4; ++q) {
        const double wq = st[1].w[q], dq = st[1].dw[q];
        if (wq == 0.0 && dq == 0.0) continue;
        const double fv = v[rp + clamp_index(g, 1, st[1].base + q)];
        val += wp * wq * fv;
        grad[0] += dp * wq * fv;
        grad[1] += wp * dq * fv;
      }
    }
    return val;
  }
  for (int p = 0; p < 4; ++p) {
    const double wp = st[0].w[p], dp = st[0].dw[p];
    if (wp == 0.0 && dp == 0.0) continue;
    const std::size_t rp = clamp_index(g, 0, st[0].base + p) * g.stride(0);
    for (int q = 0; q < 4; ++q) {
      const double wq = st[1].w[q], dq = st[1].dw[q];
      if (wq == 0.0 && dq == 0.0) continue;
      const std::size_t rq = rp + clamp_index(g, 1, st[1].base + q) * g.stride(1);
      for (int s = 0; s < 4; ++s) {
        const double ws = st[2].w[s], ds = st[2].dw[s];
        if (ws == 0.0 && ds == 0.0) continue;
        const double fv = v[rq + clamp_index(g, 2, st[2].base + s)];
        val += wp * wq * ws * fv;
        grad[0] += dp * wq * ws * fv;
        grad[1] += wp * dq * ws * fv;
        grad[2] += wp * wq * ds * fv;
      }
    }
  }
  return val;
}

double ball_integral(const ScalarField& f, const Point& center, double R, int sub) {
  const HalfBallGrid& g = *f.grid;
  const int d = g.dim();
  const double h = g.h();
  Index lo{0, 0, 0}, hi{0, 0, 0};
  for (int a = 0; a < d; ++a) {
    const double origin = (a < d - 1) ? -1.0 : 0.0;
    const int ncell = g.node_extent(a) - 1;
    lo[a] = std::clamp(static_cast<int>(std::floor((center[a] - R - origin) / h)), 0, ncell - 1);
    hi[a] = std::clamp(static_cast<int>(std::floor((center[a] + R - origin) / h)), 0, ncell - 1);
  }
  const double R2 = R * R;
  const double sub_vol = std::pow(h / sub, d);
  double total = 0.0;
  Index c{lo[0], lo[1], lo[2]};
  auto body = [&](const Index& ci) {
    const std::size_t cell = g.cell_index(ci);
    if (g.cell_weight(cell) <= 0.0) return;
    const Point base = g.coord(ci);
    const auto corners = g.cell_corners(cell);
    const int ns = (d == 2) ? sub * sub : sub * sub * sub;
    for (int s = 0; s < ns; ++s) {
      std::array<double, 3> t{0, 0, 0};
      int rem = s;
      for (int a = 0; a < d; ++a) {
        t[a] = ((rem % sub) + 0.5) / sub;
        rem /= sub;
      }
      Point p{0, 0, 0};
      double dist2 = 0.0;
      for (int a = 0; a < d; ++a) {
        p[a] = base[a] + t[a] * h;
        dist2 += (p[a] - center[a]) * (p[a] - center[a]);
      }
      if (dist2 >= R2 || norm2(p) >= 1.0) continue;
      double v = 0.0;
      for (int k = 0; k < (1 << d); ++k) {
        double w = 1.0;
        for (int a = 0; a < d; ++a) w *= (k & (1 << a)) ? t[a] : 1.0 - t[a];
        v += w * f.values[corners[k]];
      }
      total += v * sub_vol;
    }
  };
  if (d == 2) {
    for (c[0] = lo[0]; c[0] <= hi[0]; ++c[0])
      for (c[1] = lo[1]; c[1] <= hi[1]; ++c[1]) body(c);
  } else {
    for (c[0] = lo[0]; c[0] <= hi[0]; ++c[0])
      for (c[1] = lo[1]; c[1] <= hi[1]; ++c[1])
        for (c[2] = lo[2]; c[2] <= hi[2]; ++c[2]) body(c);
  }
  return total;
}

void write_field_csv(const std::string& path, const ScalarField& f) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  const HalfBallGrid& g = *f.grid;
  const int d = g.dim();
  for (int a = 0; a < d; ++a) out << "x" << (a + 1) << ",";
  out << "value\n";
  out << std::setprecision(17);
  for (std::size_t i = 0; i < g.node_count(); ++i) {
    const Point x = g.node_coord(i);
    for (int a = 0; a < d; ++a) out << x[a] << ",";
    out << f.values[i] << "\n";
  }
}

ScalarField read_field_csv(const std::string& path, GridPtr g) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read " + path);
  const int d = g->dim();
  std::string line;
  std::getline(in, line);
  ScalarField f = ScalarField::zeros(g);
  std::vector<char> seen(g->node_count(), 0);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    Point x{0, 0, 0};
    double val = 0.0;
    for (int a = 0; a <= d; ++a) {
      if (!std::getline(ss, cell, ',')) throw ValidationError("malformed CSV row in " + path);
      (a < d ? x[a] : val) = std::stod(cell);
    }
    const Index idx = g->nearest(x);
    const std::size_t i = g->node_index(idx);
    const Point y = g->coord(idx);
    for (int a = 0; a < d; ++a)
      if (std::abs(y[a] - x[a]) > 1e-9) throw ValidationError("CSV node off the lattice in " + path);
    f.values[i] = val;
    seen[i] = 1;
  }
  for (std::size_t i = 0; i < seen.size(); ++i)
    if (!seen[i]) throw ValidationError("CSV misses lattice nodes in " + path);
  return f;
}

void write_grid_sidecar(const std::string& path, const HalfBallGrid& g) {
  const MaskStats s = g.stats();
  nlohmann::json j;
  j["d"] = g.dim();
  j["n"] = g.n();
  j["h"] = g.h();
  j["nodes"] = g.node_count();
  j["mask"] = {{"inside", s.inside}, {"flat", s.flat},     {"sphere", s.sphere},
               {"outside", s.outside}, {"active", s.active}, {"volume", s.volume}};
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  out << j.dump(2) << "\n";
}

}  // namespace branchlab
