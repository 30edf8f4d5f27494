#pragma once

// Scaled radiative transfer  v.grad f = (sigma/eps) (<f> - f)  with incoming data,
// its adjoint, the collision operator and albedo measurements.
//
// Slab: vertex-centred diamond differencing. Square: first-order upwinding.
// The scattering coupling is a fixed point for the scalar flux <f>; it is solved
// with GMRES on (I - T) <f> = b where T is one transport sweep.

#include "optomo/discretization.hpp"
#include "optomo/krylov.hpp"
#include "optomo/medium.hpp"
#include "optomo/traces.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace optomo {

struct SolverOptions {
  double tolerance = 1e-10;
  int max_iterations = 10000;
  int restart = 100;
  bool accelerate = true;  ///< false: plain source iteration (debugging only)
};

class SolverFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// f(node, ordinate), stored ordinate-fastest.
struct AngularFlux {
  Eigen::MatrixXd values;  ///< (ordinates x nodes)
  double epsilon = 1.0;
  SolveTranscript transcript;

  double operator()(std::size_t node, std::size_t q) const {
    return values(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(node));
  }
  std::size_t node_count() const { return static_cast<std::size_t>(values.cols()); }
};

/// Kinetic data indexed by (ordinate, boundary slot). Entries outside the
/// relevant half of phase space are ignored.
struct KineticBoundaryData {
  Eigen::MatrixXd values;  ///< (ordinates x boundary nodes)
};

/// Discrete incoming set: (boundary node, v) whose upwind stencil leaves the
/// domain. Away from square corners this is exactly v.n < 0.
inline bool is_incoming(const SpatialGrid& grid, std::size_t node, const Vec2& v) {
  const int n = grid.cells();
  const int i = grid.ix(node);
  const int j = grid.iy(node);
  if (grid.geometry() == Geometry::slab) return (i == 0 && v[0] > 0.0) || (i == n && v[0] < 0.0);
  return (i == 0 && v[0] > 0.0) || (i == n && v[0] < 0.0) || (j == 0 && v[1] > 0.0) || (j == n && v[1] < 0.0);
}

/// Outgoing set, the mirror image of the incoming set under v -> -v.
inline bool is_outgoing(const SpatialGrid& grid, std::size_t node, const Vec2& v) {
  return is_incoming(grid, node, Vec2{-v[0], -v[1]});
}

/// L f = <f>_v - f at one node.
inline std::vector<double> collision(const std::vector<double>& f, const AngularQuadrature& quad) {
  if (f.size() != quad.size()) throw std::invalid_argument("collision: value count does not match quadrature");
  const double mean = quad.average(f);
  std::vector<double> out(f.size());
  for (std::size_t q = 0; q < f.size(); ++q) out[q] = mean - f[q];
  return out;
}

inline ScalarField scalar_flux(const AngularFlux& f, const AngularQuadrature& quad) {
  const Eigen::Map<const Eigen::VectorXd> w(quad.weights.data(), static_cast<Eigen::Index>(quad.size()));
  return f.values.transpose() * w;
}

/// One transport sweep: given the scalar flux in the scattering source and
/// (optionally) boundary data, computes f and returns its new scalar flux.
class TransportSweeper {
 public:
  TransportSweeper(const SpatialGrid& grid, const AngularQuadrature& quad, const ScalarField& sigma, double epsilon)
      : grid_(grid), quad_(quad), epsilon_(epsilon) {
    require_field(grid, sigma, "transport sweep");
    if (quad.geometry != grid.geometry()) throw std::invalid_argument("quadrature and grid geometry differ");
    if (!(epsilon > 0.0)) throw std::invalid_argument("Knudsen number must be positive");
    rate_ = sigma / epsilon;
    if (grid.geometry() == Geometry::square) scratch_.resize(static_cast<Eigen::Index>(grid.node_count()));
  }

  Eigen::VectorXd sweep(const Eigen::VectorXd& source, const KineticBoundaryData* bc, Eigen::MatrixXd* flux) const {
    return grid_.geometry() == Geometry::slab ? sweep_slab(source, bc, flux) : sweep_square(source, bc, flux);
  }

 private:
  double data(const KineticBoundaryData* bc, std::size_t q, std::size_t node) const {
    if (bc == nullptr) return 0.0;
    return bc->values(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(*grid_.boundary_slot(node)));
  }

  Eigen::VectorXd sweep_slab(const Eigen::VectorXd& src, const KineticBoundaryData* bc, Eigen::MatrixXd* flux) const {
    const int n = grid_.cells();
    const double h = grid_.spacing();
    Eigen::VectorXd avg = Eigen::VectorXd::Zero(n + 1);
    std::vector<double> f(static_cast<std::size_t>(n) + 1);
    for (std::size_t q = 0; q < quad_.size(); ++q) {
      const double mu = quad_.directions[q][0];
      const double a = std::abs(mu) / h;
      if (mu > 0.0) {
        f[0] = data(bc, q, 0);
        for (int i = 0; i < n; ++i) {
          const double s = 0.5 * (rate_[i] + rate_[i + 1]);
          f[i + 1] = ((a - 0.5 * s) * f[i] + s * 0.5 * (src[i] + src[i + 1])) / (a + 0.5 * s);
        }
      } else {
        f[n] = data(bc, q, static_cast<std::size_t>(n));
        for (int i = n - 1; i >= 0; --i) {
          const double s = 0.5 * (rate_[i] + rate_[i + 1]);
          f[i] = ((a - 0.5 * s) * f[i + 1] + s * 0.5 * (src[i] + src[i + 1])) / (a + 0.5 * s);
        }
      }
      const double w = quad_.weights[q];
      for (int i = 0; i <= n; ++i) avg[i] += w * f[static_cast<std::size_t>(i)];
      if (flux != nullptr)
        for (int i = 0; i <= n; ++i) (*flux)(static_cast<Eigen::Index>(q), i) = f[static_cast<std::size_t>(i)];
    }
    return avg;
  }

  Eigen::VectorXd sweep_square(const Eigen::VectorXd& src, const KineticBoundaryData* bc, Eigen::MatrixXd* flux) const {
    const int n = grid_.cells();
    const double h = grid_.spacing();
    const Eigen::Index stride = n + 1;
    Eigen::VectorXd avg = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(grid_.node_count()));
    double* f = scratch_.data();
    for (std::size_t q = 0; q < quad_.size(); ++q) {
      const Vec2 v = quad_.directions[q];
      const double ax = std::abs(v[0]) / h;
      const double ay = std::abs(v[1]) / h;
      const int di = v[0] > 0.0 ? 1 : -1;
      const int dj = v[1] > 0.0 ? 1 : -1;
      const int i0 = di > 0 ? 0 : n;
      const int j0 = dj > 0 ? 0 : n;
      for (int jj = 0; jj <= n; ++jj) {
        const int j = j0 + dj * jj;
        for (int ii = 0; ii <= n; ++ii) {
          const int i = i0 + di * ii;
          const Eigen::Index k = j * stride + i;
          if (ii == 0 || jj == 0) {
            f[k] = data(bc, q, static_cast<std::size_t>(k));
          } else {
            const double s = rate_[k];
            f[k] = (ax * f[k - di] + ay * f[k - dj * stride] + s * src[k]) / (ax + ay + s);
          }
        }
      }
      const double w = quad_.weights[q];
      avg += w * scratch_;
      if (flux != nullptr) flux->row(static_cast<Eigen::Index>(q)) = scratch_.transpose();
    }
    return avg;
  }

  const SpatialGrid& grid_;
  const AngularQuadrature& quad_;
  double epsilon_;
  Eigen::VectorXd rate_;
  mutable Eigen::VectorXd scratch_;
};

namespace detail {

inline std::string failure_report(const SpatialGrid& grid, double epsilon, const SolveTranscript& t) {
  std::ostringstream os;
  os << "transport solve did not converge: eps=" << epsilon << " geometry=" << to_string(grid.geometry())
     << " cells=" << grid.cells() << " iterations=" << t.iterations << " residual=" << t.residual
     << " history(tail)=[";
  const std::size_t from = t.history.size() > 8 ? t.history.size() - 8 : 0;
  for (std::size_t i = from; i < t.history.size(); ++i) os << (i > from ? " " : "") << t.history[i];
  os << "]";
  return os.str();
}

}  // namespace detail

/// Solves v.grad f = (sigma/eps) L f with f = phi on the incoming boundary.
inline AngularFlux solve_rte(const Medium& medium, double epsilon, const KineticBoundaryData& bc,
                             const SpatialGrid& grid, const AngularQuadrature& quad, const SolverOptions& opts = {}) {
  if (!(epsilon > 0.0 && epsilon <= 1.0)) throw std::invalid_argument("Knudsen number must lie in (0, 1]");
  if (bc.values.rows() != static_cast<Eigen::Index>(quad.size()) ||
      bc.values.cols() != static_cast<Eigen::Index>(grid.boundary().size()))
    throw std::invalid_argument("boundary data shape does not match grid and quadrature");
  if (!bc.values.allFinite()) throw std::invalid_argument("boundary data must be finite");
  if (!medium.admissible) throw std::invalid_argument("transport solve requires an admissible medium");

  const TransportSweeper sweeper(grid, quad, medium.sigma, epsilon);
  const auto nodes = static_cast<Eigen::Index>(grid.node_count());
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(nodes);
  const Eigen::VectorXd rhs = sweeper.sweep(zero, &bc, nullptr);

  Eigen::VectorXd phi = rhs;
  SolveTranscript transcript;
  if (opts.accelerate) {
    auto apply = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd { return x - sweeper.sweep(x, nullptr, nullptr); };
    transcript = gmres(apply, rhs, phi, opts.tolerance, opts.max_iterations, opts.restart);
  } else {
    const double scale = std::max(rhs.norm(), std::numeric_limits<double>::min());
    for (int it = 0; it < opts.max_iterations; ++it) {
      const Eigen::VectorXd next = sweeper.sweep(phi, &bc, nullptr);
      const double rel = (next - phi).norm() / scale;
      phi = next;
      transcript.iterations = it + 1;
      transcript.residual = rel;
      transcript.history.push_back(rel);
      if (rel <= opts.tolerance) break;
    }
    transcript.converged = transcript.residual <= opts.tolerance;
  }
  if (!transcript.converged) throw SolverFailure(detail::failure_report(grid, epsilon, transcript));

  AngularFlux out;
  out.values.resize(static_cast<Eigen::Index>(quad.size()), nodes);
  out.epsilon = epsilon;
  out.transcript = std::move(transcript);
  sweeper.sweep(phi, &bc, &out.values);
  return out;
}

/// Kinetic data from nodal boundary values and gradients:
/// phi = xi + sign * order * eps / sigma * v.grad xi on the chosen half of phase space.
inline KineticBoundaryData lift_from_gradient(const Medium& medium, double epsilon, const ScalarField& values,
                                              const std::vector<Vec2>& gradients, int order, bool outgoing,
                                              const SpatialGrid& grid, const AngularQuadrature& quad) {
  if (order != 0 && order != 1) throw std::invalid_argument("lift order must be 0 or 1");
  const auto& bnd = grid.boundary();
  KineticBoundaryData out{Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(quad.size()),
                                                static_cast<Eigen::Index>(bnd.size()))};
  const double sign = outgoing ? 1.0 : -1.0;
  for (std::size_t b = 0; b < bnd.size(); ++b) {
    const double inv_sigma = 1.0 / medium.sigma[static_cast<Eigen::Index>(bnd[b].node)];
    for (std::size_t q = 0; q < quad.size(); ++q) {
      const Vec2& v = quad.directions[q];
      const bool active = outgoing ? is_outgoing(grid, bnd[b].node, v) : is_incoming(grid, bnd[b].node, v);
      if (!active) continue;
      double val = values[static_cast<Eigen::Index>(b)];
      if (order == 1) val += sign * epsilon * inv_sigma * dot(v, gradients[b]);
      out.values(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(b)) = val;
    }
  }
  return out;
}

/// Order 0: phi = xi. Order 1: phi = xi - eps sigma^-1 v.grad xi (compatible lift).
inline KineticBoundaryData lift_boundary(const Medium& medium, double epsilon, const Trace& trace, int order,
                                         const SpatialGrid& grid, const AngularQuadrature& quad) {
  if (order != 0 && order != 1) throw std::invalid_argument("lift order must be 0 or 1");
  std::vector<Vec2> grads;
  for (const auto& b : grid.boundary()) grads.push_back(trace.gradient(b.position));
  return lift_from_gradient(medium, epsilon, boundary_values(grid, trace), grads, order, false, grid, quad);
}

/// -(1 / (C_d eps)) sum_q w_q (v_q.n) f(x_j, v_q) over all ordinates.
inline double albedo_measurement(const AngularFlux& f, std::size_t node, const SpatialGrid& grid,
                                 const AngularQuadrature& quad) {
  const auto slot = grid.boundary_slot(node);
  if (!slot) throw std::invalid_argument("albedo detector must be a boundary node");
  const Vec2& n = grid.boundary()[*slot].normal;
  double s = 0.0;
  for (std::size_t q = 0; q < quad.size(); ++q) s += quad.weights[q] * dot(quad.directions[q], n) * f(node, q);
  return -s / (quad.cd * f.epsilon);
}

struct MeasurementSetup {
  std::vector<std::size_t> detectors;  ///< boundary node indices x_j
  std::vector<Trace> sources;          ///< Dirichlet traces xi_k
  double noise_std = 0.05;             ///< gamma

  void validate(const SpatialGrid& grid) const {
    if (detectors.empty() || sources.empty()) throw std::invalid_argument("measurement setup needs J >= 1 and K >= 1");
    for (std::size_t d : detectors)
      if (!grid.on_boundary(d)) throw std::invalid_argument("detector " + std::to_string(d) + " is not a boundary node");
    if (!(noise_std > 0.0)) throw std::invalid_argument("noise standard deviation must be positive");
  }
};

/// J x K boundary measurements of one forward model.
struct ForwardData {
  Eigen::MatrixXd values;
  std::string model;  ///< "RTE" or "DE"
  double epsilon = std::numeric_limits<double>::quiet_NaN();
};

inline ForwardData forward_map_rte(const Medium& medium, double epsilon, const MeasurementSetup& setup, int order,
                                   const SpatialGrid& grid, const AngularQuadrature& quad,
                                   const SolverOptions& opts = {}) {
  setup.validate(grid);
  ForwardData out{Eigen::MatrixXd(static_cast<Eigen::Index>(setup.detectors.size()),
                                  static_cast<Eigen::Index>(setup.sources.size())),
                  "RTE", epsilon};
  for (std::size_t k = 0; k < setup.sources.size(); ++k) {
    AngularFlux f;
    try {
      f = solve_rte(medium, epsilon, lift_boundary(medium, epsilon, setup.sources[k], order, grid, quad), grid, quad,
                    opts);
    } catch (const SolverFailure& e) {
      throw SolverFailure("source k=" + std::to_string(k) + ": " + e.what());
    }
    for (std::size_t j = 0; j < setup.detectors.size(); ++j)
      out.values(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) =
          albedo_measurement(f, setup.detectors[j], grid, quad);
  }
  return out;
}

/// Solves -v.grad g = (sigma/eps) L g with g given on the outgoing boundary, by
/// the forward solver in reversed ordinates.
inline AngularFlux solve_rte_adjoint(const Medium& medium, double epsilon, const KineticBoundaryData& outgoing_data,
                                     const SpatialGrid& grid, const AngularQuadrature& quad,
                                     const SolverOptions& opts = {}) {
  KineticBoundaryData mirrored{Eigen::MatrixXd(outgoing_data.values.rows(), outgoing_data.values.cols())};
  for (std::size_t q = 0; q < quad.size(); ++q)
    mirrored.values.row(static_cast<Eigen::Index>(q)) =
        outgoing_data.values.row(static_cast<Eigen::Index>(quad.reflection[q]));
  AngularFlux reversed = solve_rte(medium, epsilon, mirrored, grid, quad, opts);
  AngularFlux out = reversed;
  for (std::size_t q = 0; q < quad.size(); ++q)
    out.values.row(static_cast<Eigen::Index>(q)) = reversed.values.row(static_cast<Eigen::Index>(quad.reflection[q]));
  return out;
}

/// Outgoing adjoint data: the discrete delta at `node` on every outgoing ordinate.
inline KineticBoundaryData adjoint_delta_data(const SpatialGrid& grid, const AngularQuadrature& quad,
                                              std::size_t node, const Mollifier& mollifier = {}) {
  const ScalarField delta = boundary_delta(grid, node, mollifier);
  KineticBoundaryData out{Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(quad.size()), delta.size())};
  for (std::size_t b = 0; b < grid.boundary().size(); ++b)
    for (std::size_t q = 0; q < quad.size(); ++q)
      if (is_outgoing(grid, grid.boundary()[b].node, quad.directions[q]))
        out.values(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(b)) = delta[static_cast<Eigen::Index>(b)];
  return out;
}

}  // namespace optomo
