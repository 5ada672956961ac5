#pragma once

/// Node-centred lattice on the box [-1,1]^{d-1} x [0,1] with a cut-cell mask
/// for the half ball B1+ = {|x| < 1, x_d > 0}. Every box node carries a value;
/// the mask decides which nodes are unknowns and how much of each cell counts.

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace branchlab {

using Point = std::array<double, 3>;  // trailing entries are zero when d = 2
using Index = std::array<int, 3>;

enum class NodeKind : std::uint8_t { inside, flat, sphere, outside };

struct MaskStats {
  std::size_t inside = 0;
  std::size_t flat = 0;
  std::size_t sphere = 0;
  std::size_t outside = 0;
  std::size_t active = 0;
  double volume = 0.0;  // sum of cut-cell weights times h^d
};

class HalfBallGrid {
 public:
  HalfBallGrid(int d, int n);

  int dim() const { return d_; }
  int n() const { return n_; }
  double h() const { return h_; }

  std::size_t node_count() const { return kind_.size(); }
  std::size_t cell_count() const { return weight_.size(); }
  int node_extent(int axis) const { return node_ext_[axis]; }
  int cell_extent(int axis) const { return node_ext_[axis] - 1; }
  std::size_t stride(int axis) const { return stride_[axis]; }

  std::size_t node_index(const Index& idx) const;
  Index node_multi(std::size_t node) const;
  Point coord(const Index& idx) const;
  Point node_coord(std::size_t node) const { return coord(node_multi(node)); }
  /// Lattice index of the node nearest to x, clamped to the box.
  Index nearest(const Point& x) const;

  NodeKind kind(std::size_t node) const { return kind_[node]; }
  /// Inside or flat: the nodes a solver is free to move.
  bool unknown(std::size_t node) const {
    return kind_[node] == NodeKind::inside || kind_[node] == NodeKind::flat;
  }
  /// Corner of at least one cell with positive cut weight.
  bool active(std::size_t node) const { return active_[node] != 0; }

  std::size_t cell_index(const Index& idx) const;
  Index cell_multi(std::size_t cell) const;
  /// Fraction of the cell lying in B1+.
  double cell_weight(std::size_t cell) const { return weight_[cell]; }
  /// Corner node ids in binary order (bit a set means +1 along axis a).
  std::array<std::size_t, 8> cell_corners(std::size_t cell) const;
  int corners_per_cell() const { return 1 << d_; }
  /// Lumped node volume: sum over adjacent cells of weight * h^d / 2^d.
  const std::vector<double>& node_volume() const { return node_volume_; }

  MaskStats stats() const;
  bool operator==(const HalfBallGrid& other) const { return d_ == other.d_ && n_ == other.n_; }

 private:
  int d_;
  int n_;
  double h_;
  Index node_ext_{1, 1, 1};
  std::array<std::size_t, 3> stride_{0, 0, 0};
  std::array<std::size_t, 3> cell_stride_{0, 0, 0};
  std::vector<NodeKind> kind_;
  std::vector<std::uint8_t> active_;
  std::vector<double> weight_;
  std::vector<double> node_volume_;
};

using GridPtr = std::shared_ptr<const HalfBallGrid>;

GridPtr make_grid(int d, int n);

/// Area of the intersection of [x0,x1]x[y0,y1] with the disk of radius R about the origin.
double rect_disk_area(double x0, double x1, double y0, double y1, double R);

struct ScalarField {
  GridPtr grid;
  std::vector<double> values;

  static ScalarField zeros(GridPtr g);
  static ScalarField from_function(GridPtr g, const std::function<double(const Point&)>& f);
  double operator[](std::size_t i) const { return values[i]; }
  double& operator[](std::size_t i) { return values[i]; }
};

struct VectorField {
  GridPtr grid;
  std::array<std::vector<double>, 3> comp;

  Point at(std::size_t node) const;
};

/// Throws ValidationError("incompatible grids") unless both fields share a lattice.
void require_same_grid(const ScalarField& a, const ScalarField& b);

/// Cut-cell quadrature: sum over cells of corner-averaged (field * weight) times
/// the cell's cut fraction times h^d.
double integrate(const ScalarField& f, const ScalarField* weight = nullptr);

/// Central differences in the lattice interior, second-order one-sided at lattice
/// edges. Exact for affine fields.
VectorField gradient(const ScalarField& f);

/// Integral of f over B1+ intersected with the ball B_R(center), by midpoint
/// sub-sampling of each cell with `sub`^d points and Q1 interpolation.
double ball_integral(const ScalarField& f, const Point& center, double R, int sub = 4);

/// Q1 (multilinear) interpolation; points are clamped to the box.
double linear_sample(const ScalarField& f, const Point& x);

/// C^1 tensor-product cubic Hermite interpolation with finite-difference slopes
/// (central inside the lattice, second-order one-sided at lattice edges).
class CubicSampler {
 public:
  explicit CubicSampler(const ScalarField& f);
  double value(const Point& x) const;
  double value_grad(const Point& x, Point& grad) const;
  const ScalarField& field() const { return *field_; }

 private:
  const ScalarField* field_;
};

/// CSV with header x1,...,xd,value over every lattice node.
void write_field_csv(const std::string& path, const ScalarField& f);
ScalarField read_field_csv(const std::string& path, GridPtr g);
/// JSON sidecar with d, n, h and mask statistics.
void write_grid_sidecar(const std::string& path, const HalfBallGrid& g);

double norm2(const Point& x);

}  // namespace branchlab
