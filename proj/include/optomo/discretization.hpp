#pragma once

// Spatial grids, angular quadratures and the finite-difference operators shared
// by the transport and diffusion solvers.

#include <Eigen/Dense>

#include <array>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace optomo {

enum class Geometry { slab, square };

inline std::string to_string(Geometry g) { return g == Geometry::slab ? "slab" : "square"; }

inline Geometry geometry_from_string(const std::string& s) {
  if (s == "slab") return Geometry::slab;
  if (s == "square") return Geometry::square;
  throw std::invalid_argument("unknown geometry '" + s + "' (expected slab or square)");
}

using Vec2 = std::array<double, 2>;

inline double dot(const Vec2& a, const Vec2& b) { return a[0] * b[0] + a[1] * b[1]; }
inline double norm(const Vec2& a) { return std::sqrt(dot(a, a)); }

/// Nodal values of a scalar quantity (sigma, rho, kernels, ...).
using ScalarField = Eigen::VectorXd;
/// Nodal values of a gradient; the second component is zero on the slab.
using VectorField = std::vector<Vec2>;

struct BoundaryNode {
  std::size_t node;
  Vec2 position;
  Vec2 normal;  ///< outward, unit length (diagonal at square corners)
  double weight;  ///< boundary measure carried by this node
};

/// Uniform vertex-centred grid on [0,1] or [0,1]^2.
///
/// Square nodes are numbered row-major, node = j * (N + 1) + i. Boundary nodes
/// of the square are listed counter-clockwise starting at the origin, so that
/// neighbouring entries are neighbours along the perimeter.
class SpatialGrid {
 public:
  SpatialGrid(Geometry geometry, int cells) : geometry_(geometry), cells_(cells), h_(1.0 / cells) {
    if (cells < 4) throw std::invalid_argument("grid resolution must be at least 4 cells per axis");
    const int n = cells_;
    if (geometry_ == Geometry::slab) {
      boundary_.push_back({0, {0.0, 0.0}, {-1.0, 0.0}, 1.0});
      boundary_.push_back({static_cast<std::size_t>(n), {1.0, 0.0}, {1.0, 0.0}, 1.0});
    } else {
      const double d = 1.0 / std::sqrt(2.0);
      auto push = [&](int i, int j) {
        Vec2 nrm{0.0, 0.0};
        if (i == 0) nrm[0] = -1.0;
        if (i == n) nrm[0] = 1.0;
        if (j == 0) nrm[1] = -1.0;
        if (j == n) nrm[1] = 1.0;
        if (nrm[0] != 0.0 && nrm[1] != 0.0) nrm = {nrm[0] * d, nrm[1] * d};
        boundary_.push_back({index(i, j), {i * h_, j * h_}, nrm, h_});
      };
      for (int i = 0; i < n; ++i) push(i, 0);
      for (int j = 0; j < n; ++j) push(n, j);
      for (int i = n; i > 0; --i) push(i, n);
      for (int j = n; j > 0; --j) push(0, j);
    }
    slot_.assign(node_count(), -1);
    for (std::size_t b = 0; b < boundary_.size(); ++b) slot_[boundary_[b].node] = static_cast<long>(b);
  }

  Geometry geometry() const { return geometry_; }
  int dimension() const { return geometry_ == Geometry::slab ? 1 : 2; }
  int cells() const { return cells_; }
  double spacing() const { return h_; }
  std::size_t points_per_axis() const { return static_cast<std::size_t>(cells_) + 1; }
  std::size_t node_count() const {
    const std::size_t p = points_per_axis();
    return geometry_ == Geometry::slab ? p : p * p;
  }

  std::size_t index(int i, int j = 0) const {
    return static_cast<std::size_t>(j) * points_per_axis() + static_cast<std::size_t>(i);
  }
  int ix(std::size_t node) const { return static_cast<int>(node % points_per_axis()); }
  int iy(std::size_t node) const {
    return geometry_ == Geometry::slab ? 0 : static_cast<int>(node / points_per_axis());
  }
  Vec2 position(std::size_t node) const { return {ix(node) * h_, iy(node) * h_}; }

  const std::vector<BoundaryNode>& boundary() const { return boundary_; }
  bool on_boundary(std::size_t node) const { return node < slot_.size() && slot_[node] >= 0; }

  /// Position of `node` in boundary(), if it is a boundary node.
  std::optional<std::size_t> boundary_slot(std::size_t node) const {
    if (!on_boundary(node)) return std::nullopt;
    return static_cast<std::size_t>(slot_[node]);
  }

  /// Total boundary measure: 2 for the slab endpoints, 4 for the square perimeter.
  double boundary_measure() const { return geometry_ == Geometry::slab ? 2.0 : 4.0; }

  /// Boundary node closest to a point (used to resolve detector coordinates).
  std::size_t nearest_boundary_node(const Vec2& p) const {
    std::size_t best = 0;
    double dist = 1e300;
    for (const auto& b : boundary_) {
      const Vec2 d{b.position[0] - p[0], b.position[1] - p[1]};
      if (norm(d) < dist) {
        dist = norm(d);
        best = b.node;
      }
    }
    return best;
  }

 private:
  Geometry geometry_;
  int cells_;
  double h_;
  std::vector<BoundaryNode> boundary_;
  std::vector<long> slot_;
};

inline SpatialGrid build_grid(Geometry geometry, int cells) { return SpatialGrid(geometry, cells); }

/// Discrete-ordinates set with weights normalised to one.
struct AngularQuadrature {
  Geometry geometry;
  std::vector<Vec2> directions;
  std::vector<double> weights;
  std::vector<std::size_t> reflection;  ///< index of -v_q
  double cd = 0.0;  ///< second moment <(v.e_i)^2>

  std::size_t size() const { return directions.size(); }

  /// <f>_v for values listed in ordinate order.
  template <class Values>
  double average(const Values& f) const {
    double s = 0.0;
    for (std::size_t q = 0; q < weights.size(); ++q) s += weights[q] * f[q];
    return s;
  }
};

/// Second angular moment on S^2, kept for reference; the sphere itself is not discretised.
inline constexpr double kSphereSecondMoment = 1.0 / 3.0;

namespace detail {

// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration on P_n.
inline void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
  x.assign(n, 0.0);
  w.assign(n, 0.0);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = z;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (z * p1 - p0) / (z * z - 1.0);
      const double dz = p1 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    double p0 = 1.0, p1 = z;
    for (int k = 2; k <= n; ++k) {
      const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    dp = n * (z * p1 - p0) / (z * z - 1.0);
    x[i] = -z;
    x[n - 1 - i] = z;
    w[i] = w[n - 1 - i] = 2.0 / ((1.0 - z * z) * dp * dp);
  }
}

}  // namespace detail

/// Gauss-Legendre cosines on the slab (ascending), equispaced half-offset angles on the square.
inline AngularQuadrature build_quadrature(Geometry geometry, int count) {
  if (count < 4 || count % 2 != 0)
    throw std::invalid_argument("ordinate count must be even and at least 4");
  AngularQuadrature quad;
  quad.geometry = geometry;
  const auto n = static_cast<std::size_t>(count);
  if (geometry == Geometry::slab) {
    std::vector<double> mu, w;
    detail::gauss_legendre(count, mu, w);
    for (std::size_t q = 0; q < n; ++q) {
      quad.directions.push_back({mu[q], 0.0});
      quad.weights.push_back(0.5 * w[q]);
      quad.reflection.push_back(n - 1 - q);
    }
  } else {
    for (std::size_t q = 0; q < n; ++q) {
      const double theta = 2.0 * std::numbers::pi * (q + 0.5) / count;
      quad.directions.push_back({std::cos(theta), std::sin(theta)});
      quad.weights.push_back(1.0 / count);
      quad.reflection.push_back((q + n / 2) % n);
    }
  }
  for (std::size_t q = 0; q < n; ++q)
    quad.cd += quad.weights[q] * quad.directions[q][0] * quad.directions[q][0];
  return quad;
}

/// Evaluates `fn` at every grid node.
inline ScalarField sample(const SpatialGrid& grid, const std::function<double(const Vec2&)>& fn) {
  ScalarField out(static_cast<Eigen::Index>(grid.node_count()));
  for (std::size_t k = 0; k < grid.node_count(); ++k) out[static_cast<Eigen::Index>(k)] = fn(grid.position(k));
  return out;
}

inline void require_field(const SpatialGrid& grid, const ScalarField& field, const char* what) {
  if (static_cast<std::size_t>(field.size()) != grid.node_count())
    throw std::invalid_argument(std::string(what) + ": field length does not match grid node count");
}

namespace detail {

// Second-order derivative along one axis of a line of n+1 samples with spacing h.
template <class Get>
double axis_derivative(Get&& at, int i, int n, double h) {
  if (i == 0) return (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h);
  if (i == n) return (3.0 * at(n) - 4.0 * at(n - 1) + at(n - 2)) / (2.0 * h);
  return (at(i + 1) - at(i - 1)) / (2.0 * h);
}

}  // namespace detail

/// Central differences inside, second-order one-sided differences on the boundary.
inline VectorField gradient(const SpatialGrid& grid, const ScalarField& field) {
  require_field(grid, field, "gradient");
  const int n = grid.cells();
  const double h = grid.spacing();
  VectorField out(grid.node_count(), Vec2{0.0, 0.0});
  if (grid.geometry() == Geometry::slab) {
    for (int i = 0; i <= n; ++i)
      out[static_cast<std::size_t>(i)][0] = detail::axis_derivative([&](int k) { return field[k]; }, i, n, h);
    return out;
  }
  for (int j = 0; j <= n; ++j) {
    for (int i = 0; i <= n; ++i) {
      const std::size_t k = grid.index(i, j);
      out[k][0] = detail::axis_derivative(
          [&](int a) { return field[static_cast<Eigen::Index>(grid.index(a, j))]; }, i, n, h);
      out[k][1] = detail::axis_derivative(
          [&](int b) { return field[static_cast<Eigen::Index>(grid.index(i, b))]; }, j, n, h);
    }
  }
  return out;
}

/// Trapezoidal rule over the domain (tensor product on the square).
inline double integrate(const SpatialGrid& grid, const ScalarField& field) {
  require_field(grid, field, "integrate");
  const int n = grid.cells();
  const double h = grid.spacing();
  auto w1 = [n](int i) { return (i == 0 || i == n) ? 0.5 : 1.0; };
  double s = 0.0;
  if (grid.geometry() == Geometry::slab) {
    for (int i = 0; i <= n; ++i) s += w1(i) * field[i];
    return s * h;
  }
  for (int j = 0; j <= n; ++j)
    for (int i = 0; i <= n; ++i) s += w1(i) * w1(j) * field[static_cast<Eigen::Index>(grid.index(i, j))];
  return s * h * h;
}

/// Shape of the discrete boundary delta on the square. The slab always uses the
/// endpoint indicator.
enum class MollifierShape { hat, bump };

struct Mollifier {
  MollifierShape shape = MollifierShape::hat;
  /// Half-width along the perimeter in units of the grid spacing; 2 gives a
  /// three-node hat.
  double half_width_cells = 2.0;
};

/// Discrete delta at boundary node `node`: nodal values over boundary() that
/// integrate to one under the boundary weights.
inline ScalarField boundary_delta(const SpatialGrid& grid, std::size_t node, const Mollifier& mollifier = {}) {
  const auto slot = grid.boundary_slot(node);
  if (!slot) throw std::invalid_argument("delta centre is not a boundary node");
  const auto& bnd = grid.boundary();
  const auto count = static_cast<Eigen::Index>(bnd.size());
  ScalarField out = ScalarField::Zero(count);
  if (grid.geometry() == Geometry::slab) {
    out[static_cast<Eigen::Index>(*slot)] = 1.0 / bnd[*slot].weight;
    return out;
  }
  if (!(mollifier.half_width_cells >= 1.0)) throw std::invalid_argument("mollifier half-width must be >= 1 cell");
  const double width = mollifier.half_width_cells;
  double mass = 0.0;
  for (Eigen::Index b = 0; b < count; ++b) {
    const double raw = std::abs(static_cast<double>(b) - static_cast<double>(*slot));
    const double s = std::min(raw, static_cast<double>(count) - raw) / width;  // perimeter distance / width
    double v = 0.0;
    if (s < 1.0) v = mollifier.shape == MollifierShape::hat ? 1.0 - s : std::exp(1.0 - 1.0 / (1.0 - s * s));
    out[b] = v;
    mass += v * bnd[static_cast<std::size_t>(b)].weight;
  }
  return out / mass;
}

inline double max_abs(const ScalarField& f) { return f.size() == 0 ? 0.0 : f.cwiseAbs().maxCoeff(); }

}  // namespace optomo
