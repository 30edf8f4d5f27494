#pragma once

// Gaussian likelihoods, evidences and Monte-Carlo divergences between the
// transport and diffusion posteriors, plus a pCN sampler.
//
// All estimators work on paired log-likelihood arrays (l_RTE[i], l_DE[i])
// evaluated at the same prior draws theta_i. Weights are formed as exp(l - s)
// with a common shift s, so evidences far below 1 do not underflow.

#include "optomo/diffusion.hpp"
#include "optomo/medium.hpp"
#include "optomo/parallel.hpp"
#include "optomo/random.hpp"
#include "optomo/transport.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace optomo {

enum class Model { rte, de };

inline std::string to_string(Model m) { return m == Model::rte ? "RTE" : "DE"; }

inline Model model_from_string(const std::string& s) {
  if (s == "RTE" || s == "rte") return Model::rte;
  if (s == "DE" || s == "de") return Model::de;
  throw std::invalid_argument("unknown model tag '" + s + "' (expected RTE or DE)");
}

struct DataProvenance {
  Model model = Model::de;
  CoefficientVector theta_true;
  std::uint64_t noise_seed = 0;
  double noise_std = 0.0;
  double epsilon = std::numeric_limits<double>::quiet_NaN();  ///< only for RTE-generated data
};

struct DataVector {
  Eigen::MatrixXd values;  ///< J x K
  DataProvenance provenance;
};

/// The J x K noise realisation implied by a seed (row-major draw order).
inline Eigen::MatrixXd noise_realization(std::uint64_t seed, double noise_std, Eigen::Index rows, Eigen::Index cols) {
  Rng rng = make_stream(seed, 0);
  Eigen::MatrixXd eta(rows, cols);
  for (Eigen::Index j = 0; j < rows; ++j)
    for (Eigen::Index k = 0; k < cols; ++k) eta(j, k) = noise_std * standard_normal(rng);
  return eta;
}

/// Problem description shared by likelihood evaluations.
struct InverseProblem {
  const PriorSpec& prior;
  const MeasurementSetup& setup;
  const SpatialGrid& grid;
  const AngularQuadrature& quad;
  SolverOptions solver{};
};

inline ForwardData forward_map(Model model, const Medium& medium, double epsilon, const InverseProblem& p) {
  return model == Model::rte ? forward_map_rte(medium, epsilon, p.setup, 1, p.grid, p.quad, p.solver)
                             : forward_map_de(medium, p.setup, p.grid);
}

inline DataVector generate_data(const InverseProblem& p, const CoefficientVector& theta_true, Model model,
                                double epsilon, double noise_std, std::uint64_t seed) {
  if (!(noise_std >= 0.0)) throw std::invalid_argument("noise standard deviation must be non-negative");
  const Medium medium = medium_from_coefficients(p.prior, theta_true, p.grid);
  if (!medium.admissible) throw std::invalid_argument("data-generating medium is not admissible");
  DataVector d;
  d.values = forward_map(model, medium, epsilon, p).values;
  d.values += noise_realization(seed, noise_std, d.values.rows(), d.values.cols());
  d.provenance = {model, theta_true, seed, noise_std,
                  model == Model::rte ? epsilon : std::numeric_limits<double>::quiet_NaN()};
  return d;
}

/// -|y - G|^2 / (2 gamma^2) over the flattened J x K entries.
inline double log_likelihood(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& observed, double noise_std) {
  if (predicted.rows() != observed.rows() || predicted.cols() != observed.cols())
    throw std::invalid_argument("log_likelihood: prediction and data shapes differ");
  if (!(noise_std > 0.0)) throw std::invalid_argument("log_likelihood: noise std must be positive");
  return -(observed - predicted).squaredNorm() / (2.0 * noise_std * noise_std);
}

inline double log_likelihood(Model model, const CoefficientVector& theta, const Eigen::MatrixXd& observed,
                             double epsilon, const InverseProblem& p) {
  const Medium medium = medium_from_coefficients(p.prior, theta, p.grid);
  if (!medium.admissible) throw std::invalid_argument("log_likelihood: coefficient vector is not admissible");
  try {
    return log_likelihood(forward_map(model, medium, epsilon, p).values, observed, p.setup.noise_std);
  } catch (const SolverFailure& e) {
    std::string where = "theta=(";
    for (Eigen::Index i = 0; i < theta.size(); ++i) where += (i ? "," : "") + std::to_string(theta[i]);
    throw SolverFailure(where + ") eps=" + std::to_string(epsilon) + ": " + e.what());
  }
}

struct PosteriorEnsemble {
  std::vector<CoefficientVector> thetas;
  std::vector<double> ll_rte;
  std::vector<double> ll_de;
  std::string mode = "prior-IS";
  std::uint64_t seed = 0;
  double epsilon = std::numeric_limits<double>::quiet_NaN();

  void check_paired() const {
    if (ll_rte.size() != ll_de.size()) throw std::invalid_argument("ensemble log-likelihood arrays are not paired");
    if (ll_rte.empty()) throw std::invalid_argument("ensemble is empty");
  }
};

/// Admissible prior draws; draw i uses stream (seed, i).
inline std::vector<CoefficientVector> draw_prior_samples(const PriorSpec& spec, const SpatialGrid& grid,
                                                         std::size_t count, std::uint64_t seed) {
  std::vector<CoefficientVector> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = make_stream(seed, i);
    out[i] = sample_prior(spec, grid, rng);
  }
  return out;
}

/// Log-likelihoods of one model over a fixed list of draws (common random numbers).
inline std::vector<double> evaluate_log_likelihoods(Model model, const std::vector<CoefficientVector>& thetas,
                                                    const Eigen::MatrixXd& observed, double epsilon,
                                                    const InverseProblem& p, unsigned threads = 1) {
  std::vector<double> out(thetas.size());
  parallel_for(thetas.size(), threads,
               [&](std::size_t i) { out[i] = log_likelihood(model, thetas[i], observed, epsilon, p); });
  return out;
}

struct Estimate {
  double value = 0.0;
  double standard_error = 0.0;
};

namespace detail {

inline double max_of(const std::vector<double>& a) { return *std::max_element(a.begin(), a.end()); }

// Sample means and the covariance of the means for columns of x (n x p).
inline void mean_and_cov(const Eigen::MatrixXd& x, Eigen::VectorXd& mean, Eigen::MatrixXd& cov_of_mean) {
  const double n = static_cast<double>(x.rows());
  mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd c = x.rowwise() - mean.transpose();
  cov_of_mean = n > 1 ? Eigen::MatrixXd((c.transpose() * c) / (n - 1.0) / n) : Eigen::MatrixXd::Zero(x.cols(), x.cols());
}

inline double delta_se(const Eigen::VectorXd& grad, const Eigen::MatrixXd& cov) {
  return std::sqrt(std::max(grad.dot(cov * grad), 0.0));
}

}  // namespace detail

/// Kish effective sample size of weights exp(l_i).
inline double effective_sample_size(const std::vector<double>& ll) {
  const double s = detail::max_of(ll);
  double sw = 0.0, sw2 = 0.0;
  for (double l : ll) {
    const double w = std::exp(l - s);
    sw += w;
    sw2 += w * w;
  }
  return sw * sw / sw2;
}

struct Evidences {
  double log_z_rte = 0.0;
  double log_z_de = 0.0;
  Estimate z_rte;
  Estimate z_de;
  double ess_rte = 0.0;
  double ess_de = 0.0;
  std::vector<std::string> warnings;
};

inline Evidences estimate_evidences(const std::vector<double>& ll_rte, const std::vector<double>& ll_de) {
  if (ll_rte.size() != ll_de.size() || ll_rte.empty()) throw std::invalid_argument("evidences need paired, non-empty arrays");
  Evidences ev;
  auto one = [&](const std::vector<double>& ll, double& log_z, Estimate& z, double& ess, const char* tag) {
    const double s = detail::max_of(ll);
    const double n = static_cast<double>(ll.size());
    double m = 0.0, m2 = 0.0;
    for (double l : ll) {
      const double w = std::exp(l - s);
      m += w;
      m2 += w * w;
    }
    m /= n;
    m2 /= n;
    log_z = s + std::log(m);
    const double var = n > 1 ? std::max(m2 - m * m, 0.0) * n / (n - 1.0) : 0.0;
    z = {std::exp(log_z), std::exp(s) * std::sqrt(var / n)};
    ess = effective_sample_size(ll);
    if (ess < 10.0) ev.warnings.push_back(std::string(tag) + " evidence: effective sample size " + std::to_string(ess) + " < 10");
  };
  one(ll_rte, ev.log_z_rte, ev.z_rte, ev.ess_rte, "RTE");
  one(ll_de, ev.log_z_de, ev.z_de, ev.ess_de, "DE");
  return ev;
}

enum class KlDirection {
  rte_de,  ///< KL(mu_RTE || mu_DE), expectation under mu_RTE
  de_rte   ///< KL(mu_DE || mu_RTE)
};

struct DivergenceResult {
  Estimate estimate;
  double ess = 0.0;
  std::vector<std::string> warnings;
};

/// Self-normalised importance-sampling KL with a delta-method standard error.
inline DivergenceResult estimate_kl(const std::vector<double>& ll_rte, const std::vector<double>& ll_de,
                                    KlDirection direction = KlDirection::rte_de) {
  if (ll_rte.size() != ll_de.size() || ll_rte.empty()) throw std::invalid_argument("KL needs paired, non-empty arrays");
  const auto& lp = direction == KlDirection::rte_de ? ll_rte : ll_de;  // first argument
  const auto& lq = direction == KlDirection::rte_de ? ll_de : ll_rte;
  const double s = std::max(detail::max_of(lp), detail::max_of(lq));
  const auto n = static_cast<Eigen::Index>(lp.size());
  Eigen::MatrixXd x(n, 3);  // a = w (lp - lq), b = w, c = exp(lq - s)
  for (Eigen::Index i = 0; i < n; ++i) {
    const double w = std::exp(lp[static_cast<std::size_t>(i)] - s);
    x(i, 0) = w * (lp[static_cast<std::size_t>(i)] - lq[static_cast<std::size_t>(i)]);
    x(i, 1) = w;
    x(i, 2) = std::exp(lq[static_cast<std::size_t>(i)] - s);
  }
  Eigen::VectorXd m;
  Eigen::MatrixXd cov;
  detail::mean_and_cov(x, m, cov);
  DivergenceResult r;
  r.estimate.value = m[0] / m[1] + std::log(m[2]) - std::log(m[1]);
  const Eigen::Vector3d grad(1.0 / m[1], -m[0] / (m[1] * m[1]) - 1.0 / m[1], 1.0 / m[2]);
  r.estimate.standard_error = detail::delta_se(grad, cov);
  r.ess = effective_sample_size(lp);
  if (r.ess < 10.0) r.warnings.push_back("KL: effective sample size " + std::to_string(r.ess) + " < 10");
  return r;
}

/// Hellinger distance with d^2 = 1 - mean(sqrt(L_R L_D)) / sqrt(Z_R Z_D), i.e.
/// half the squared L2 distance of the root densities under the prior.
inline DivergenceResult estimate_hellinger(const std::vector<double>& ll_rte, const std::vector<double>& ll_de) {
  if (ll_rte.size() != ll_de.size() || ll_rte.empty())
    throw std::invalid_argument("Hellinger needs paired, non-empty arrays");
  const double s = std::max(detail::max_of(ll_rte), detail::max_of(ll_de));
  const auto n = static_cast<Eigen::Index>(ll_rte.size());
  Eigen::MatrixXd x(n, 3);  // e = sqrt(w_R w_D), b = w_R, c = w_D
  for (Eigen::Index i = 0; i < n; ++i) {
    const double lr = ll_rte[static_cast<std::size_t>(i)] - s;
    const double ld = ll_de[static_cast<std::size_t>(i)] - s;
    x(i, 0) = std::exp(0.5 * (lr + ld));
    x(i, 1) = std::exp(lr);
    x(i, 2) = std::exp(ld);
  }
  Eigen::VectorXd m;
  Eigen::MatrixXd cov;
  detail::mean_and_cov(x, m, cov);
  const double root = std::sqrt(m[1] * m[2]);
  double d2 = 1.0 - m[0] / root;
  const Eigen::Vector3d grad(-1.0 / root, 0.5 * m[0] / (root * m[1]), 0.5 * m[0] / (root * m[2]));
  const double se2 = detail::delta_se(grad, cov);
  DivergenceResult r;
  if (d2 < 0.0) {
    if (d2 < -1e-12) r.warnings.push_back("Hellinger: negative squared estimate clamped to 0");
    d2 = 0.0;
  }
  d2 = std::min(d2, 1.0);
  r.estimate.value = std::sqrt(d2);
  // delta method through the square root; at d = 0 report the squared-scale error
  r.estimate.standard_error = r.estimate.value > 0.0 ? se2 / (2.0 * r.estimate.value) : std::sqrt(se2);
  r.ess = std::min(effective_sample_size(ll_rte), effective_sample_size(ll_de));
  return r;
}

/// Estimate of sqrt(KL) - d_Hell with a joint delta-method standard error
/// (both estimators share the same draws, so their errors are correlated).
inline Estimate hellinger_kl_margin(const std::vector<double>& ll_rte, const std::vector<double>& ll_de,
                                    KlDirection direction = KlDirection::rte_de) {
  if (ll_rte.size() != ll_de.size() || ll_rte.empty()) throw std::invalid_argument("margin needs paired arrays");
  const auto& lp = direction == KlDirection::rte_de ? ll_rte : ll_de;
  const auto& lq = direction == KlDirection::rte_de ? ll_de : ll_rte;
  const double s = std::max(detail::max_of(lp), detail::max_of(lq));
  const auto n = static_cast<Eigen::Index>(lp.size());
  Eigen::MatrixXd x(n, 4);  // a = wp (lp - lq), b = wp, c = wq, e = sqrt(wp wq)
  for (Eigen::Index i = 0; i < n; ++i) {
    const double a = lp[static_cast<std::size_t>(i)] - s;
    const double b = lq[static_cast<std::size_t>(i)] - s;
    x(i, 0) = std::exp(a) * (a - b);
    x(i, 1) = std::exp(a);
    x(i, 2) = std::exp(b);
    x(i, 3) = std::exp(0.5 * (a + b));
  }
  Eigen::VectorXd m;
  Eigen::MatrixXd cov;
  detail::mean_and_cov(x, m, cov);
  const double kl = std::max(m[0] / m[1] + std::log(m[2]) - std::log(m[1]), 0.0);
  const double root = std::sqrt(m[1] * m[2]);
  const double d2 = std::clamp(1.0 - m[3] / root, 0.0, 1.0);
  const double sk = std::sqrt(kl);
  const double d = std::sqrt(d2);
  // gradients of sqrt(KL) and d with respect to (a, b, c, e)
  Eigen::Vector4d gk(1.0 / m[1], -m[0] / (m[1] * m[1]) - 1.0 / m[1], 1.0 / m[2], 0.0);
  Eigen::Vector4d gd(0.0, 0.5 * m[3] / (root * m[1]), 0.5 * m[3] / (root * m[2]), -1.0 / root);
  constexpr double tiny = 1e-300;
  gk /= 2.0 * std::max(sk, tiny);
  gd /= 2.0 * std::max(d, tiny);
  return {sk - d, detail::delta_se(gk - gd, cov)};
}

/// pCN chain on coefficient space. `loglik(theta)` is only called on admissible states.
struct PcnResult {
  std::vector<CoefficientVector> chain;
  std::vector<double> log_likelihoods;
  double acceptance_rate = 0.0;
  std::vector<std::string> warnings;
};

template <class LogLik>
PcnResult pcn_sampler(const PriorSpec& spec, const SpatialGrid& grid, LogLik&& loglik, double beta, int steps,
                      std::uint64_t seed, std::optional<CoefficientVector> init = std::nullopt) {
  spec.validate();
  if (!(beta >= 0.0 && beta <= 1.0)) throw std::invalid_argument("pCN step beta must lie in [0, 1]");
  if (steps < 1) throw std::invalid_argument("pCN chain length must be >= 1");
  Rng rng = make_stream(seed, 0);
  CoefficientVector theta = init ? *init : sample_prior(spec, grid, rng);
  if (!medium_from_coefficients(spec, theta, grid).admissible)
    throw std::invalid_argument("pCN initial state is not admissible");
  double ll = loglik(theta);
  const double keep = std::sqrt(1.0 - beta * beta);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  PcnResult out;
  out.chain.reserve(static_cast<std::size_t>(steps));
  int accepted = 0;
  for (int t = 0; t < steps; ++t) {
    const CoefficientVector proposal = keep * theta + beta * sample_gaussian_coefficients(spec, rng);
    const double u = unif(rng);
    if (medium_from_coefficients(spec, proposal, grid).admissible) {
      const double llp = loglik(proposal);
      if (std::log(u) < llp - ll) {
        theta = proposal;
        ll = llp;
        ++accepted;
      }
    }
    out.chain.push_back(theta);
    out.log_likelihoods.push_back(ll);
  }
  out.acceptance_rate = static_cast<double>(accepted) / steps;
  if (out.acceptance_rate < 0.01)
    out.warnings.push_back("pCN acceptance rate " + std::to_string(out.acceptance_rate) + " < 1%; reduce beta");
  return out;
}

}  // namespace optomo
