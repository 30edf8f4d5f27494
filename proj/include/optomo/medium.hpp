#pragma once

// Media sigma = exp(u), the admissible set, the cosine parameterisation of u
// and the Gaussian priors built on it.

#include "optomo/discretization.hpp"
#include "optomo/random.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <utility>
#include <vector>

namespace optomo {

using CoefficientVector = Eigen::VectorXd;

struct PriorSpec {
  int basis_size = 3;            ///< M
  double amplitude = 0.3;        ///< tau
  double decay = 2.0;            ///< s, coefficient m has std dev tau * m^-s (m = 1..M)
  double mean_offset = 0.0;      ///< constant added to u
  double admissibility_bound = 10.0;  ///< C1
  int max_rejections = 1000;

  void validate() const {
    if (basis_size < 1) throw std::invalid_argument("prior basis size must be >= 1");
    if (!(amplitude >= 0.0)) throw std::invalid_argument("prior amplitude must be non-negative");
    if (!(decay >= 1.0)) throw std::invalid_argument("prior decay exponent must be >= 1");
    if (!(admissibility_bound > 0.0)) throw std::invalid_argument("admissibility bound must be positive");
    if (max_rejections < 1) throw std::invalid_argument("rejection cap must be >= 1");
  }
};

struct Medium {
  ScalarField log_sigma;  ///< u
  ScalarField sigma;      ///< exp(u)
  double bound = 0.0;     ///< C1 used for the admissibility flag
  double sup_sigma = 0.0;
  double sup_inv_sigma = 0.0;
  double sup_grad_inv_sigma = 0.0;
  bool admissible = false;
};

/// Builds sigma = exp(u) and evaluates the three admissibility sup-norms on the grid.
inline Medium medium_from_log_field(const SpatialGrid& grid, ScalarField u, double bound) {
  require_field(grid, u, "medium");
  Medium m;
  m.log_sigma = std::move(u);
  m.sigma = m.log_sigma.array().exp().matrix();
  m.bound = bound;
  const ScalarField inv = m.sigma.cwiseInverse();
  m.sup_sigma = max_abs(m.sigma);
  m.sup_inv_sigma = max_abs(inv);
  for (const Vec2& g : gradient(grid, inv)) m.sup_grad_inv_sigma = std::max(m.sup_grad_inv_sigma, norm(g));
  m.admissible = m.sup_sigma < bound && m.sup_inv_sigma < bound && m.sup_grad_inv_sigma < bound;
  return m;
}

inline Medium constant_medium(const SpatialGrid& grid, double sigma, double bound = 10.0) {
  return medium_from_log_field(grid, ScalarField::Constant(static_cast<Eigen::Index>(grid.node_count()), std::log(sigma)),
                               bound);
}

/// Frequencies (a, b) of the cosine basis functions cos(a pi x) cos(b pi y), ordered
/// by total degree; the slab uses (b, 0). Entry 0 is the constant function.
inline std::vector<std::pair<int, int>> basis_frequencies(Geometry geometry, int count) {
  std::vector<std::pair<int, int>> out;
  if (geometry == Geometry::slab) {
    for (int b = 0; b < count; ++b) out.emplace_back(b, 0);
    return out;
  }
  for (int degree = 0; static_cast<int>(out.size()) < count; ++degree)
    for (int a = degree; a >= 0 && static_cast<int>(out.size()) < count; --a) out.emplace_back(a, degree - a);
  return out;
}

inline double basis_function(const std::pair<int, int>& freq, const Vec2& x) {
  return std::cos(freq.first * std::numbers::pi * x[0]) * std::cos(freq.second * std::numbers::pi * x[1]);
}

/// Nodal values of the basis, one column per coefficient.
inline Eigen::MatrixXd basis_matrix(const PriorSpec& spec, const SpatialGrid& grid) {
  const auto freqs = basis_frequencies(grid.geometry(), spec.basis_size);
  Eigen::MatrixXd psi(static_cast<Eigen::Index>(grid.node_count()), spec.basis_size);
  for (std::size_t k = 0; k < grid.node_count(); ++k)
    for (int m = 0; m < spec.basis_size; ++m)
      psi(static_cast<Eigen::Index>(k), m) = basis_function(freqs[static_cast<std::size_t>(m)], grid.position(k));
  return psi;
}

inline ScalarField log_field_from_coefficients(const PriorSpec& spec, const CoefficientVector& theta,
                                               const SpatialGrid& grid) {
  if (theta.size() != spec.basis_size)
    throw std::invalid_argument("coefficient vector length does not match prior basis size");
  ScalarField u = basis_matrix(spec, grid) * theta;
  u.array() += spec.mean_offset;
  return u;
}

inline Medium medium_from_coefficients(const PriorSpec& spec, const CoefficientVector& theta,
                                       const SpatialGrid& grid) {
  return medium_from_log_field(grid, log_field_from_coefficients(spec, theta, grid), spec.admissibility_bound);
}

/// Per-coefficient standard deviations tau * m^-s.
inline Eigen::VectorXd prior_std(const PriorSpec& spec) {
  Eigen::VectorXd sd(spec.basis_size);
  for (int m = 0; m < spec.basis_size; ++m) sd[m] = spec.amplitude * std::pow(m + 1.0, -spec.decay);
  return sd;
}

/// Unconstrained Gaussian draw (no admissibility check).
inline CoefficientVector sample_gaussian_coefficients(const PriorSpec& spec, Rng& rng) {
  const Eigen::VectorXd sd = prior_std(spec);
  CoefficientVector theta(spec.basis_size);
  for (int m = 0; m < spec.basis_size; ++m) theta[m] = sd[m] * standard_normal(rng);
  return theta;
}

class PriorRejectionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Gaussian draw conditioned on admissibility by rejection.
inline CoefficientVector sample_prior(const PriorSpec& spec, const SpatialGrid& grid, Rng& rng) {
  spec.validate();
  const Eigen::MatrixXd psi = basis_matrix(spec, grid);
  for (int attempt = 0; attempt < spec.max_rejections; ++attempt) {
    CoefficientVector theta = sample_gaussian_coefficients(spec, rng);
    ScalarField u = psi * theta;
    u.array() += spec.mean_offset;
    if (medium_from_log_field(grid, std::move(u), spec.admissibility_bound).admissible) return theta;
  }
  throw PriorRejectionError("prior sampling rejected " + std::to_string(spec.max_rejections) +
                            " consecutive draws; prior and admissibility bound are incompatible");
}

/// diag(tau^2 m^-2s): the plain Gaussian prior of the linearised problem.
inline Eigen::MatrixXd linearized_prior_covariance(const PriorSpec& spec) {
  spec.validate();
  return prior_std(spec).array().square().matrix().asDiagonal();
}

}  // namespace optomo
