#pragma once

// Diffusion-limit expansion f = rho + eps f1 + eps^2 f2 + ..., residual norms,
// the forward-map gap and log-log rate fits.
//
//   f1 = -sigma^-1 v.grad rho
//   f2 = +sigma^-1 (B - <B>),  B = (v.grad)(sigma^-1 v.grad rho)
//
// The sign of f2 follows from matching the O(eps) terms: v.grad f1 = sigma L f2,
// and L acts as -1 on mean-zero functions.

#include "optomo/diffusion.hpp"
#include "optomo/transport.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace optomo {

struct ExpansionTerms {
  ScalarField rho;     ///< f0
  Eigen::MatrixXd f1;  ///< (ordinates x nodes)
  Eigen::MatrixXd f2;  ///< (ordinates x nodes)
  double bracket_mean = 0.0;  ///< max_x |<B>| before removal
};

/// Raised when <B> is far from zero, i.e. rho is not a diffusion solution.
class InconsistentDensity : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Expansion terms for a prescribed density. With `check_mean` the angular mean
/// of B must be below `mean_tolerance` (absolute).
inline ExpansionTerms expansion_terms_from_density(const Medium& medium, const ScalarField& rho,
                                                   const SpatialGrid& grid, const AngularQuadrature& quad,
                                                   bool check_mean = false, double mean_tolerance = 0.0) {
  require_field(grid, rho, "expansion");
  require_field(grid, medium.sigma, "expansion");
  const auto nv = static_cast<Eigen::Index>(quad.size());
  const auto nodes = static_cast<Eigen::Index>(grid.node_count());
  const ScalarField inv = medium.sigma.cwiseInverse();
  const VectorField grad_rho = gradient(grid, rho);

  ExpansionTerms t;
  t.rho = rho;
  t.f1.resize(nv, nodes);
  t.f2.resize(nv, nodes);
  for (Eigen::Index q = 0; q < nv; ++q) {
    const Vec2& v = quad.directions[static_cast<std::size_t>(q)];
    ScalarField flux(nodes);  // sigma^-1 v.grad rho
    for (Eigen::Index k = 0; k < nodes; ++k) flux[k] = inv[k] * dot(v, grad_rho[static_cast<std::size_t>(k)]);
    t.f1.row(q) = -flux.transpose();
    const VectorField g = gradient(grid, flux);
    for (Eigen::Index k = 0; k < nodes; ++k) t.f2(q, k) = dot(v, g[static_cast<std::size_t>(k)]);
  }
  const Eigen::Map<const Eigen::VectorXd> w(quad.weights.data(), nv);
  const Eigen::RowVectorXd mean = w.transpose() * t.f2;
  t.bracket_mean = mean.size() ? mean.cwiseAbs().maxCoeff() : 0.0;
  if (check_mean && t.bracket_mean > mean_tolerance)
    throw InconsistentDensity("angular mean of the second-order bracket is " + std::to_string(t.bracket_mean) +
                              " (tolerance " + std::to_string(mean_tolerance) + ")");
  t.f2.rowwise() -= mean;
  t.f2 = t.f2 * inv.asDiagonal();
  return t;
}

/// Default consistency tolerance for <B>: ten times a second-difference
/// truncation estimate, scaled by the size of B.
inline double default_bracket_tolerance(const SpatialGrid& grid, double scale) {
  return 10.0 * grid.spacing() * (1.0 + scale);
}

/// Expansion about the diffusion solution with trace xi.
inline ExpansionTerms expansion_terms(const Medium& medium, const Trace& trace, const SpatialGrid& grid,
                                      const AngularQuadrature& quad) {
  const DiffusionSolution sol = solve_de(medium, trace, grid);
  ExpansionTerms t = expansion_terms_from_density(medium, sol.rho, grid, quad);
  const double scale = t.f2.cwiseAbs().maxCoeff();
  const double tol = default_bracket_tolerance(grid, scale);
  if (t.bracket_mean > tol)
    throw InconsistentDensity("angular mean of the second-order bracket is " + std::to_string(t.bracket_mean) +
                              " (tolerance " + std::to_string(tol) + ")");
  return t;
}

struct Residuals {
  double r0 = 0.0;  ///< max |f - rho|
  double r1 = 0.0;  ///< max |f - rho - eps f1|
};

inline Residuals residual_norms(const AngularFlux& f, const ExpansionTerms& terms, double epsilon) {
  if (f.values.rows() != terms.f1.rows() || f.values.cols() != terms.f1.cols())
    throw std::invalid_argument("residual_norms: flux and expansion shapes differ");
  const Eigen::MatrixXd zeroth = f.values.rowwise() - terms.rho.transpose();
  return {zeroth.cwiseAbs().maxCoeff(), (zeroth - epsilon * terms.f1).cwiseAbs().maxCoeff()};
}

/// max_{j,k} |G_RTE - G_DE| with order-1 compatible lifts on the transport side.
inline double forward_gap(const Medium& medium, double epsilon, const MeasurementSetup& setup,
                          const SpatialGrid& grid, const AngularQuadrature& quad, const SolverOptions& opts = {}) {
  const ForwardData rte = forward_map_rte(medium, epsilon, setup, 1, grid, quad, opts);
  const ForwardData de = forward_map_de(medium, setup, grid);
  return (rte.values - de.values).cwiseAbs().maxCoeff();
}

struct RatePoint {
  double epsilon;
  double value;
};

struct RateStudy {
  std::string metric;
  std::vector<RatePoint> points;
  double slope = 0.0;
  double intercept = 0.0;  ///< natural log of the prefactor
  double r2 = 0.0;
  int n_points = 0;        ///< points used in the fit
  int excluded = 0;        ///< non-positive values dropped
  std::string fingerprint;
};

/// Least-squares line through (log eps, log value) over the positive values.
inline RateStudy fit_rate(std::vector<RatePoint> points, std::string metric = {}) {
  RateStudy s;
  s.metric = std::move(metric);
  std::vector<double> x, y;
  for (const auto& p : points) {
    if (!(p.epsilon > 0.0)) throw std::invalid_argument("fit_rate: epsilon must be positive");
    if (p.value > 0.0 && std::isfinite(p.value)) {
      x.push_back(std::log(p.epsilon));
      y.push_back(std::log(p.value));
    } else {
      ++s.excluded;
    }
  }
  s.points = std::move(points);
  s.n_points = static_cast<int>(x.size());
  if (s.n_points < 4)
    throw std::invalid_argument("fit_rate: need at least 4 positive values, got " + std::to_string(s.n_points));
  const double n = s.n_points;
  double mx = 0, my = 0;
  for (int i = 0; i < s.n_points; ++i) mx += x[i], my += y[i];
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (int i = 0; i < s.n_points; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw std::invalid_argument("fit_rate: epsilon values must not all coincide");
  s.slope = sxy / sxx;
  s.intercept = my - s.slope * mx;
  double sse = 0.0;
  for (int i = 0; i < s.n_points; ++i) {
    const double r = y[i] - (s.intercept + s.slope * x[i]);
    sse += r * r;
  }
  s.r2 = syy > 0.0 ? 1.0 - sse / syy : 1.0;
  return s;
}

/// The seven-point geometric sweep (ratio sqrt 2) used by the rate studies.
inline std::vector<double> reference_epsilons() { return {0.4, 0.283, 0.2, 0.141, 0.1, 0.0707, 0.05}; }

}  // namespace optomo
