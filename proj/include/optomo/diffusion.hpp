#pragma once

// Diffusion limit  -div(sigma^-1 grad rho) = 0  with Dirichlet data, its
// adjoint and the Dirichlet-to-Neumann measurement sigma^-1 d_n rho.

#include "optomo/discretization.hpp"
#include "optomo/medium.hpp"
#include "optomo/traces.hpp"
#include "optomo/transport.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace optomo {

struct DiffusionSolution {
  ScalarField rho;
  ScalarField boundary_data;  ///< Dirichlet values over grid.boundary()
};

namespace detail {

// Harmonic mean of sigma^-1 across the interface between nodes a and b.
inline double interface_conductivity(const ScalarField& sigma, Eigen::Index a, Eigen::Index b) {
  return 2.0 / (sigma[a] + sigma[b]);
}

}  // namespace detail

/// Conservative five-point (three-point on the slab) solve with Dirichlet data
/// given per boundary node.
inline DiffusionSolution solve_de(const Medium& medium, const ScalarField& boundary_data, const SpatialGrid& grid) {
  if (!medium.admissible) throw std::invalid_argument("diffusion solve requires an admissible medium");
  require_field(grid, medium.sigma, "diffusion solve");
  if (boundary_data.size() != static_cast<Eigen::Index>(grid.boundary().size()))
    throw std::invalid_argument("Dirichlet data length does not match boundary node count");
  if (!boundary_data.allFinite()) throw std::invalid_argument("Dirichlet data must be finite");

  const auto nodes = static_cast<Eigen::Index>(grid.node_count());
  ScalarField rho = ScalarField::Zero(nodes);
  std::vector<Eigen::Index> unknown(static_cast<std::size_t>(nodes), -1);
  Eigen::Index count = 0;
  for (std::size_t k = 0; k < grid.node_count(); ++k) {
    if (auto slot = grid.boundary_slot(k)) rho[static_cast<Eigen::Index>(k)] = boundary_data[static_cast<Eigen::Index>(*slot)];
    else unknown[k] = count++;
  }

  const int n = grid.cells();
  const double h2 = grid.spacing() * grid.spacing();
  std::vector<Eigen::Triplet<double>> trip;
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(count);
  auto couple = [&](Eigen::Index row_node, Eigen::Index nb) {
    const Eigen::Index r = unknown[static_cast<std::size_t>(row_node)];
    const double a = detail::interface_conductivity(medium.sigma, row_node, nb) / h2;
    trip.emplace_back(r, r, a);
    const Eigen::Index c = unknown[static_cast<std::size_t>(nb)];
    if (c >= 0) trip.emplace_back(r, c, -a);
    else rhs[r] += a * rho[nb];
  };
  for (std::size_t k = 0; k < grid.node_count(); ++k) {
    if (unknown[k] < 0) continue;
    const auto kk = static_cast<Eigen::Index>(k);
    couple(kk, kk - 1);
    couple(kk, kk + 1);
    if (grid.geometry() == Geometry::square) {
      couple(kk, kk - (n + 1));
      couple(kk, kk + (n + 1));
    }
  }
  Eigen::SparseMatrix<double> a(count, count);
  a.setFromTriplets(trip.begin(), trip.end());

  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(a);
  if (solver.info() != Eigen::Success)
    throw std::runtime_error("diffusion matrix factorisation failed (sup sigma=" + std::to_string(medium.sup_sigma) +
                             ", sup 1/sigma=" + std::to_string(medium.sup_inv_sigma) + ")");
  const Eigen::VectorXd x = solver.solve(rhs);
  const double dmin = solver.vectorD().minCoeff();
  const double dmax = solver.vectorD().maxCoeff();
  if (solver.info() != Eigen::Success || !(dmin > 0.0) || !x.allFinite())
    throw std::runtime_error("diffusion solve failed; pivot ratio " + std::to_string(dmax / dmin));
  for (std::size_t k = 0; k < grid.node_count(); ++k)
    if (unknown[k] >= 0) rho[static_cast<Eigen::Index>(k)] = x[unknown[k]];
  return {std::move(rho), boundary_data};
}

inline DiffusionSolution solve_de(const Medium& medium, const Trace& trace, const SpatialGrid& grid) {
  return solve_de(medium, boundary_values(grid, trace), grid);
}

/// min(data) - tol <= rho <= max(data) + tol.
inline bool satisfies_maximum_principle(const DiffusionSolution& sol, double tol = 1e-10) {
  const double lo = sol.boundary_data.minCoeff();
  const double hi = sol.boundary_data.maxCoeff();
  return sol.rho.minCoeff() >= lo - tol && sol.rho.maxCoeff() <= hi + tol;
}

/// sigma(x_j)^-1 times the outward normal derivative (three-point one-sided).
inline double dtn_measurement(const DiffusionSolution& sol, std::size_t node, const Medium& medium,
                              const SpatialGrid& grid) {
  const auto slot = grid.boundary_slot(node);
  if (!slot) throw std::invalid_argument("DtN detector must be a boundary node");
  const Vec2& nrm = grid.boundary()[*slot].normal;
  const int n = grid.cells();
  const double h = grid.spacing();
  const int i = grid.ix(node);
  const int j = grid.iy(node);
  auto at = [&](int a, int b) { return sol.rho[static_cast<Eigen::Index>(grid.index(a, b))]; };
  double dn = 0.0;
  if (nrm[0] != 0.0) dn += nrm[0] * detail::axis_derivative([&](int a) { return at(a, j); }, i, n, h);
  if (nrm[1] != 0.0) dn += nrm[1] * detail::axis_derivative([&](int b) { return at(i, b); }, j, n, h);
  return dn / medium.sigma[static_cast<Eigen::Index>(node)];
}

inline ForwardData forward_map_de(const Medium& medium, const MeasurementSetup& setup, const SpatialGrid& grid) {
  setup.validate(grid);
  ForwardData out{Eigen::MatrixXd(static_cast<Eigen::Index>(setup.detectors.size()),
                                  static_cast<Eigen::Index>(setup.sources.size())),
                  "DE", std::numeric_limits<double>::quiet_NaN()};
  for (std::size_t k = 0; k < setup.sources.size(); ++k) {
    const DiffusionSolution sol = solve_de(medium, setup.sources[k], grid);
    for (std::size_t j = 0; j < setup.detectors.size(); ++j)
      out.values(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) =
          dtn_measurement(sol, setup.detectors[j], medium, grid);
  }
  return out;
}

/// Adjoint solve: Dirichlet data is the discrete boundary delta at `node`.
inline DiffusionSolution solve_de_adjoint(const Medium& background, std::size_t node, const SpatialGrid& grid,
                                          const Mollifier& mollifier = {}) {
  return solve_de(background, boundary_delta(grid, node, mollifier), grid);
}

/// Sum over boundary nodes of weight * sigma^-1 d_n rho; zero for a conservative solve.
inline double total_boundary_flux(const DiffusionSolution& sol, const Medium& medium, const SpatialGrid& grid) {
  double s = 0.0;
  for (const auto& b : grid.boundary()) s += b.weight * dtn_measurement(sol, b.node, medium, grid);
  return s;
}

}  // namespace optomo
