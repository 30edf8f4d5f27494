#pragma once

// Linearisation about a background u0: adjoint-state sensitivity kernels, the
// linear maps w -> <gamma_jk, w>, and Gaussian posterior algebra.
//
// Kernels (delta sigma = e^{u0} w):
//   RTE: gamma = -(e^{u0} / (C_d eps^2)) <g_j L f_k>_v
//   DE:  gamma = -e^{-u0} grad rho_k . grad rho_{g,j}
// Both signs are fixed by the tangent identity dG = <gamma, w>; the RTE kernel
// tends to the DE kernel as eps -> 0.

#include "optomo/diffusion.hpp"
#include "optomo/medium.hpp"
#include "optomo/transport.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace optomo {

/// Boundary data used for the adjoint problems.
struct AdjointOptions {
  Mollifier mollifier;
  /// 0: g = delta on the outgoing set. 1: g = delta + eps sigma0^-1 v.grad rho_g,
  /// the compatible lift built from the diffusion adjoint rho_g.
  int lift_order = 1;
};

struct KernelBank {
  std::string model;  ///< "RTE" or "DE"
  double epsilon = std::numeric_limits<double>::quiet_NaN();
  int detectors = 0;  ///< J
  int sources = 0;    ///< K
  std::vector<ScalarField> kernels;  ///< entry j * K + k
  ScalarField background;  ///< u0

  const ScalarField& at(int j, int k) const { return kernels.at(static_cast<std::size_t>(j * sources + k)); }
};

/// Row-major flattening (j, k) -> j * K + k, shared by data vectors and linear maps.
inline Eigen::VectorXd flatten(const Eigen::MatrixXd& jk) {
  Eigen::VectorXd out(jk.size());
  for (Eigen::Index j = 0; j < jk.rows(); ++j)
    for (Eigen::Index k = 0; k < jk.cols(); ++k) out[j * jk.cols() + k] = jk(j, k);
  return out;
}

/// Outgoing kinetic data for the adjoint transport problem at detector `node`.
inline KineticBoundaryData adjoint_boundary_data(const Medium& background, double epsilon, std::size_t node,
                                                 const SpatialGrid& grid, const AngularQuadrature& quad,
                                                 const AdjointOptions& opts) {
  if (opts.lift_order == 0) return adjoint_delta_data(grid, quad, node, opts.mollifier);
  if (opts.lift_order != 1) throw std::invalid_argument("adjoint lift order must be 0 or 1");
  const DiffusionSolution rg = solve_de_adjoint(background, node, grid, opts.mollifier);
  const VectorField grad = gradient(grid, rg.rho);
  std::vector<Vec2> bgrad;
  for (const auto& b : grid.boundary()) bgrad.push_back(grad[b.node]);
  return lift_from_gradient(background, epsilon, rg.boundary_data, bgrad, 1, true, grid, quad);
}

inline KernelBank kernel_bank_rte(const Medium& background, double epsilon, const MeasurementSetup& setup,
                                  const SpatialGrid& grid, const AngularQuadrature& quad,
                                  const AdjointOptions& adj = {}, const SolverOptions& solver = {}) {
  setup.validate(grid);
  const auto nv = static_cast<Eigen::Index>(quad.size());
  const auto nodes = static_cast<Eigen::Index>(grid.node_count());
  const Eigen::Map<const Eigen::VectorXd> w(quad.weights.data(), nv);

  // L f_k for every source
  std::vector<Eigen::MatrixXd> lf;
  for (std::size_t k = 0; k < setup.sources.size(); ++k) {
    try {
      const AngularFlux f =
          solve_rte(background, epsilon, lift_boundary(background, epsilon, setup.sources[k], 1, grid, quad), grid,
                    quad, solver);
      const Eigen::RowVectorXd mean = w.transpose() * f.values;
      lf.push_back((-f.values).rowwise() + mean);
    } catch (const SolverFailure& e) {
      throw SolverFailure("forward kernel solve k=" + std::to_string(k) + ": " + e.what());
    }
  }

  KernelBank bank;
  bank.model = "RTE";
  bank.epsilon = epsilon;
  bank.detectors = static_cast<int>(setup.detectors.size());
  bank.sources = static_cast<int>(setup.sources.size());
  bank.background = background.log_sigma;
  const Eigen::ArrayXd scale = -background.sigma.array() / (quad.cd * epsilon * epsilon);
  for (std::size_t j = 0; j < setup.detectors.size(); ++j) {
    AngularFlux g;
    try {
      g = solve_rte_adjoint(background, epsilon,
                            adjoint_boundary_data(background, epsilon, setup.detectors[j], grid, quad, adj), grid,
                            quad, solver);
    } catch (const SolverFailure& e) {
      throw SolverFailure("adjoint kernel solve j=" + std::to_string(j) + ": " + e.what());
    }
    for (std::size_t k = 0; k < lf.size(); ++k) {
      const Eigen::RowVectorXd inner = w.transpose() * g.values.cwiseProduct(lf[k]);
      ScalarField gamma(nodes);
      gamma = scale * inner.transpose().array();
      bank.kernels.push_back(std::move(gamma));
    }
  }
  return bank;
}

inline KernelBank kernel_bank_de(const Medium& background, const MeasurementSetup& setup, const SpatialGrid& grid,
                                 const AdjointOptions& adj = {}) {
  setup.validate(grid);
  std::vector<VectorField> grad_lin;
  for (const auto& src : setup.sources) grad_lin.push_back(gradient(grid, solve_de(background, src, grid).rho));
  KernelBank bank;
  bank.model = "DE";
  bank.detectors = static_cast<int>(setup.detectors.size());
  bank.sources = static_cast<int>(setup.sources.size());
  bank.background = background.log_sigma;
  const ScalarField inv = background.sigma.cwiseInverse();
  for (std::size_t node : setup.detectors) {
    const VectorField gg = gradient(grid, solve_de_adjoint(background, node, grid, adj.mollifier).rho);
    for (const auto& gl : grad_lin) {
      ScalarField gamma(static_cast<Eigen::Index>(grid.node_count()));
      for (std::size_t x = 0; x < grid.node_count(); ++x)
        gamma[static_cast<Eigen::Index>(x)] = -inv[static_cast<Eigen::Index>(x)] * dot(gl[x], gg[x]);
      bank.kernels.push_back(std::move(gamma));
    }
  }
  return bank;
}

/// G[j K + k, m] = integral of gamma_jk psi_m (trapezoidal rule).
inline Eigen::MatrixXd linear_map(const KernelBank& bank, const PriorSpec& spec, const SpatialGrid& grid) {
  const Eigen::MatrixXd psi = basis_matrix(spec, grid);
  Eigen::MatrixXd g(static_cast<Eigen::Index>(bank.kernels.size()), spec.basis_size);
  for (std::size_t r = 0; r < bank.kernels.size(); ++r) {
    require_field(grid, bank.kernels[r], "linear map");
    for (int m = 0; m < spec.basis_size; ++m)
      g(static_cast<Eigen::Index>(r), m) = integrate(grid, bank.kernels[r].cwiseProduct(psi.col(m)));
  }
  return g;
}

/// y - G(u0), flattened.
inline Eigen::VectorXd linearized_data(const Eigen::MatrixXd& observed, const ForwardData& background) {
  if (observed.rows() != background.values.rows() || observed.cols() != background.values.cols())
    throw std::invalid_argument("linearized data: shape mismatch");
  return flatten(observed - background.values);
}

struct GaussianPosterior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;

  Eigen::VectorXd eigenvalues() const { return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(covariance).eigenvalues(); }
};

/// Conjugate update with error covariance gamma^2 I, through a Cholesky factor of
/// the posterior precision.
inline GaussianPosterior gaussian_update(const Eigen::MatrixXd& g, const Eigen::MatrixXd& prior_cov,
                                         const Eigen::VectorXd& prior_mean, double noise_std,
                                         const Eigen::VectorXd& z) {
  const Eigen::Index m = prior_cov.rows();
  if (prior_cov.cols() != m || prior_mean.size() != m || g.cols() != m || z.size() != g.rows())
    throw std::invalid_argument("gaussian_update: dimension mismatch");
  if (!(noise_std > 0.0)) throw std::invalid_argument("gaussian_update: noise std must be positive");
  if ((prior_cov - prior_cov.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + prior_cov.cwiseAbs().maxCoeff()))
    throw std::invalid_argument("gaussian_update: prior covariance is not symmetric");
  const Eigen::LLT<Eigen::MatrixXd> prior(prior_cov);
  if (prior.info() != Eigen::Success) throw std::invalid_argument("gaussian_update: prior covariance is not SPD");
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(m, m);
  const double inv_var = 1.0 / (noise_std * noise_std);
  Eigen::MatrixXd precision = prior.solve(eye) + inv_var * g.transpose() * g;
  precision = 0.5 * (precision + precision.transpose());
  const Eigen::LLT<Eigen::MatrixXd> post(precision);
  if (post.info() != Eigen::Success) throw std::runtime_error("gaussian_update: posterior precision is not SPD");
  GaussianPosterior out;
  out.covariance = post.solve(eye);
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose());
  out.mean = prior_mean + post.solve(inv_var * g.transpose() * (z - g * prior_mean));
  return out;
}

struct MomentGap {
  double mean = 0.0;        ///< Euclidean norm of the mean difference
  double covariance = 0.0;  ///< spectral norm of the covariance difference
};

inline MomentGap moment_distance(const GaussianPosterior& p, const GaussianPosterior& q) {
  if (p.mean.size() != q.mean.size() || p.covariance.rows() != q.covariance.rows())
    throw std::invalid_argument("moment_distance: dimension mismatch");
  const Eigen::MatrixXd d = p.covariance - q.covariance;
  const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(0.5 * (d + d.transpose())).eigenvalues();
  return {(p.mean - q.mean).norm(), ev.size() ? ev.cwiseAbs().maxCoeff() : 0.0};
}

/// Hellinger distance (d^2 = 1 - Bhattacharyya coefficient) between two Gaussians.
inline double gaussian_hellinger(const GaussianPosterior& p, const GaussianPosterior& q) {
  if (p.mean.size() != q.mean.size()) throw std::invalid_argument("gaussian_hellinger: dimension mismatch");
  auto logdet = [](const Eigen::MatrixXd& c) {
    const Eigen::LLT<Eigen::MatrixXd> l(c);
    if (l.info() != Eigen::Success) throw std::invalid_argument("gaussian_hellinger: covariance is not SPD");
    return 2.0 * l.matrixL().toDenseMatrix().diagonal().array().log().sum();
  };
  const Eigen::MatrixXd avg = 0.5 * (p.covariance + q.covariance);
  const Eigen::VectorXd dm = p.mean - q.mean;
  const Eigen::LLT<Eigen::MatrixXd> la(avg);
  const double quad = dm.dot(la.solve(dm));
  const double log_bc = 0.25 * logdet(p.covariance) + 0.25 * logdet(q.covariance) - 0.5 * logdet(avg) - 0.125 * quad;
  const double d2 = -std::expm1(log_bc);  // accurate for tiny distances
  return std::sqrt(std::max(d2, 0.0));
}

}  // namespace optomo
