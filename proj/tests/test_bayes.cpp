#include "optomo/bayes.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace optomo;

namespace {

struct Synthetic {
  std::vector<double> ll_r, ll_d;
};

// theta ~ N(0, 1); l_R = 0 and l_D = theta - 1/2 give posteriors N(0,1) and N(1,1):
// KL = 1/2 in both directions and Bhattacharyya coefficient e^{-1/8}.
Synthetic synthetic(std::size_t n, std::uint64_t seed) {
  Rng rng = make_stream(seed, 0);
  Synthetic s;
  for (std::size_t i = 0; i < n; ++i) {
    s.ll_r.push_back(0.0);
    s.ll_d.push_back(standard_normal(rng) - 0.5);
  }
  return s;
}

}  // namespace

TEST(Calibration, KlOfShiftedGaussians) {
  const auto s = synthetic(10000, 42);
  for (KlDirection dir : {KlDirection::rte_de, KlDirection::de_rte}) {
    const auto r = estimate_kl(s.ll_r, s.ll_d, dir);
    EXPECT_GT(r.estimate.standard_error, 0.0);
    EXPECT_LT(std::abs(r.estimate.value - 0.5), 3 * r.estimate.standard_error);
  }
}

TEST(Calibration, HellingerOfShiftedGaussians) {
  const auto s = synthetic(10000, 43);
  const auto r = estimate_hellinger(s.ll_r, s.ll_d);
  const double d2 = r.estimate.value * r.estimate.value;
  const double se2 = 2 * r.estimate.value * r.estimate.standard_error;
  EXPECT_LT(std::abs(d2 - (1 - std::exp(-0.125))), 3 * se2);
  const Estimate margin = hellinger_kl_margin(s.ll_r, s.ll_d);
  EXPECT_NEAR(margin.value, std::sqrt(0.5) - std::sqrt(1 - std::exp(-0.125)), 4 * margin.standard_error + 1e-3);
}

TEST(Calibration, StandardErrorsShrinkLikeRootN) {
  const auto a = estimate_kl(synthetic(2000, 1).ll_r, synthetic(2000, 1).ll_d);
  const auto b = estimate_kl(synthetic(32000, 1).ll_r, synthetic(32000, 1).ll_d);
  EXPECT_NEAR(a.estimate.standard_error / b.estimate.standard_error, 4.0, 0.8);
}

TEST(Estimators, IdenticalLikelihoodsGiveZero) {
  const auto s = synthetic(500, 5);
  const auto kl = estimate_kl(s.ll_d, s.ll_d);
  EXPECT_NEAR(kl.estimate.value, 0.0, 1e-12);
  const auto h = estimate_hellinger(s.ll_d, s.ll_d);
  EXPECT_NEAR(h.estimate.value, 0.0, 1e-6);
  EXPECT_TRUE(h.warnings.empty());
}

TEST(Estimators, InvariantToCommonShiftAndRejectsUnpaired) {
  auto s = synthetic(1000, 9);
  const double kl = estimate_kl(s.ll_r, s.ll_d).estimate.value;
  for (auto& l : s.ll_r) l -= 800.0;
  for (auto& l : s.ll_d) l -= 800.0;
  EXPECT_NEAR(estimate_kl(s.ll_r, s.ll_d).estimate.value, kl, 1e-10);
  s.ll_r.pop_back();
  EXPECT_THROW(estimate_kl(s.ll_r, s.ll_d), std::invalid_argument);
  EXPECT_THROW(estimate_hellinger(s.ll_r, s.ll_d), std::invalid_argument);
}

TEST(Estimators, EvidenceAndEss) {
  const auto s = synthetic(20000, 12);
  const Evidences ev = estimate_evidences(s.ll_r, s.ll_d);
  EXPECT_NEAR(ev.z_rte.value, 1.0, 1e-12);
  EXPECT_NEAR(ev.z_de.value, 1.0, 3 * ev.z_de.standard_error);  // E[e^{theta - 1/2}] = 1
  EXPECT_NEAR(ev.ess_rte, 20000.0, 1e-6);
  EXPECT_NEAR(ev.ess_de / 20000.0, std::exp(-1.0), 0.05);  // Kish ESS of lognormal weights
  std::vector<double> spike(100, -1000.0);
  spike[0] = 0.0;
  EXPECT_NEAR(effective_sample_size(spike), 1.0, 1e-12);
  EXPECT_FALSE(estimate_evidences(spike, spike).warnings.empty());
}

TEST(Pcn, SamplesConjugateGaussianPosterior) {
  const SpatialGrid g(Geometry::slab, 8);
  PriorSpec spec;
  spec.basis_size = 1;
  spec.amplitude = 0.3;
  const double y = 0.4, s = 0.2;
  auto ll = [&](const CoefficientVector& t) { return -0.5 * (t[0] - y) * (t[0] - y) / (s * s); };
  const PcnResult r = pcn_sampler(spec, g, ll, 0.5, 40000, 17);
  const double v = 1.0 / (1.0 / 0.09 + 1.0 / (s * s)), m = v * y / (s * s);
  double mean = 0, m2 = 0;
  for (std::size_t i = 2000; i < r.chain.size(); ++i) {
    mean += r.chain[i][0];
    m2 += r.chain[i][0] * r.chain[i][0];
  }
  const double n = static_cast<double>(r.chain.size() - 2000);
  mean /= n;
  EXPECT_NEAR(mean, m, 0.02);
  EXPECT_NEAR(m2 / n - mean * mean, v, 0.1 * v);
  EXPECT_GT(r.acceptance_rate, 0.2);
  EXPECT_TRUE(r.warnings.empty());
  EXPECT_THROW(pcn_sampler(spec, g, ll, 1.5, 10, 1), std::invalid_argument);
}

TEST(Pcn, BetaOneIsIndependenceSamplerAndWarnsWhenStuck) {
  const SpatialGrid g(Geometry::slab, 8);
  PriorSpec spec;
  spec.basis_size = 1;
  auto sharp = [](const CoefficientVector& t) { return -0.5 * (t[0] - 0.1) * (t[0] - 0.1) / 1e-14; };
  const PcnResult r = pcn_sampler(spec, g, sharp, 1.0, 3000, 3);
  EXPECT_LT(r.acceptance_rate, 0.01);
  EXPECT_FALSE(r.warnings.empty());
}

class ForwardModels : public ::testing::Test {
 protected:
  SpatialGrid grid{Geometry::slab, 128};
  AngularQuadrature quad = build_quadrature(Geometry::slab, 8);
  PriorSpec prior;
  MeasurementSetup setup{{0, 128}, {traces::x(), traces::one_minus_x(), traces::x_squared()}, 0.05};
  InverseProblem problem{prior, setup, grid, quad, {}};
};

TEST_F(ForwardModels, DataProvenanceAndNoiseDeterminism) {
  const CoefficientVector truth = Eigen::Vector3d(0.2, 0.05, -0.02);
  const DataVector a = generate_data(problem, truth, Model::de, 0.1, 0.05, 99);
  const DataVector b = generate_data(problem, truth, Model::de, 0.1, 0.05, 99);
  const DataVector c = generate_data(problem, truth, Model::de, 0.1, 0.05, 100);
  EXPECT_EQ(a.values, b.values);
  EXPECT_NE(a.values, c.values);
  EXPECT_EQ(a.provenance.model, Model::de);
  EXPECT_EQ(a.provenance.noise_seed, 99u);
  EXPECT_TRUE(std::isnan(a.provenance.epsilon));
  const Eigen::MatrixXd clean = forward_map(Model::de, medium_from_coefficients(prior, truth, grid), 0.1, problem).values;
  EXPECT_LT((a.values - clean - noise_realization(99, 0.05, 2, 3)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_NEAR(log_likelihood(Model::de, truth, clean, 0.1, problem), 0.0, 1e-12);
}

TEST_F(ForwardModels, LikelihoodsAreThreadCountIndependent) {
  const auto thetas = draw_prior_samples(prior, grid, 12, 5);
  const DataVector d = generate_data(problem, thetas[0], Model::rte, 0.2, 0.05, 1);
  const auto one = evaluate_log_likelihoods(Model::rte, thetas, d.values, 0.2, problem, 1);
  const auto many = evaluate_log_likelihoods(Model::rte, thetas, d.values, 0.2, problem, 4);
  EXPECT_EQ(one, many);
  EXPECT_EQ(draw_prior_samples(prior, grid, 12, 5)[7], thetas[7]);
}

TEST(Models, StringRoundTrip) {
  EXPECT_EQ(model_from_string("RTE"), Model::rte);
  EXPECT_EQ(to_string(Model::de), "DE");
  EXPECT_THROW(model_from_string("heat"), std::invalid_argument);
}
