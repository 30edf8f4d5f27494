#include "optomo/asymptotics.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace optomo;

TEST(Expansion, SlabQuadraticDensityTerms) {
  // sigma = 1, rho = x^2: f1 = -2 mu x, f2 = 2 mu^2 - 2/3
  const SpatialGrid g(Geometry::slab, 16);
  const AngularQuadrature q = build_quadrature(Geometry::slab, 8);
  const Medium m = constant_medium(g, 1.0);
  const ScalarField rho = sample(g, [](const Vec2& p) { return p[0] * p[0]; });
  const ExpansionTerms t = expansion_terms_from_density(m, rho, g, q);
  for (std::size_t k = 0; k < g.node_count(); ++k)
    for (std::size_t v = 0; v < q.size(); ++v) {
      const double mu = q.directions[v][0], x = g.position(k)[0];
      EXPECT_NEAR(t.f1(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(k)), -2 * mu * x, 1e-11);
      EXPECT_NEAR(t.f2(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(k)), 2 * mu * mu - 2.0 / 3.0, 1e-9);
    }
}

TEST(Expansion, SecondOrderTermHasZeroMean) {
  const SpatialGrid g(Geometry::square, 24);
  const AngularQuadrature q = build_quadrature(Geometry::square, 16);
  const Medium m = medium_from_log_field(g, sample(g, [](const Vec2& p) { return 0.3 * std::cos(M_PI * p[0]); }), 10);
  const ExpansionTerms t = expansion_terms(m, traces::y(), g, q);
  const Eigen::Map<const Eigen::VectorXd> w(q.weights.data(), 16);
  EXPECT_LT((w.transpose() * t.f2).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((w.transpose() * t.f1).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Expansion, InconsistentDensityIsRejected) {
  const SpatialGrid g(Geometry::slab, 32);
  const AngularQuadrature q = build_quadrature(Geometry::slab, 8);
  const Medium m = constant_medium(g, 1.0);
  // rho = x^2 is not a diffusion solution for sigma = 1
  const ScalarField rho = sample(g, [](const Vec2& p) { return p[0] * p[0]; });
  const ExpansionTerms t = expansion_terms_from_density(m, rho, g, q);
  EXPECT_GT(t.bracket_mean, 0.5);
  EXPECT_THROW(expansion_terms_from_density(m, rho, g, q, true, 1e-6), InconsistentDensity);
}

TEST(Expansion, SaddleExactSolutionOnSquare) {
  // sigma = 1, rho = x^2 - y^2: f = rho - eps v.grad rho + 2 eps^2 cos(2 theta) is exact,
  // so with that kinetic data the remaining error is discretisation error, O(h).
  const double eps = 0.1;
  const AngularQuadrature q = build_quadrature(Geometry::square, 16);
  double prev = 0.0;
  for (int n : {32, 64}) {
    const SpatialGrid g(Geometry::square, n);
    const Medium m = constant_medium(g, 1.0);
    const ExpansionTerms t = expansion_terms(m, traces::saddle(), g, q);
    for (std::size_t v = 0; v < q.size(); ++v) {
      const double c = q.directions[v][0] * q.directions[v][0] - q.directions[v][1] * q.directions[v][1];
      EXPECT_NEAR(t.f2(static_cast<Eigen::Index>(v), 0), 2.0 * c, 1e-9);
    }
    KineticBoundaryData bc = lift_boundary(m, eps, traces::saddle(), 1, g, q);
    for (std::size_t b = 0; b < g.boundary().size(); ++b)
      for (std::size_t v = 0; v < q.size(); ++v)
        if (is_incoming(g, g.boundary()[b].node, q.directions[v])) {
          const double c = q.directions[v][0] * q.directions[v][0] - q.directions[v][1] * q.directions[v][1];
          bc.values(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(b)) += 2 * eps * eps * c;
        }
    const AngularFlux f = solve_rte(m, eps, bc, g, q);
    double e = 0.0;
    for (std::size_t k = 0; k < g.node_count(); ++k)
      for (std::size_t v = 0; v < q.size(); ++v) {
        const double c = q.directions[v][0] * q.directions[v][0] - q.directions[v][1] * q.directions[v][1];
        const double exact = t.rho[static_cast<Eigen::Index>(k)] + eps * t.f1(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(k)) + 2 * eps * eps * c;
        e = std::max(e, std::abs(f(k, v) - exact));
      }
    if (prev > 0.0) EXPECT_LT(e, 0.65 * prev);
    prev = e;
  }
  EXPECT_LT(prev, 0.02);
}

TEST(Residuals, ZeroForExactExpansion) {
  const SpatialGrid g(Geometry::slab, 16);
  const AngularQuadrature q = build_quadrature(Geometry::slab, 8);
  const Medium m = constant_medium(g, 1.0);
  const ExpansionTerms t = expansion_terms(m, traces::x(), g, q);
  const AngularFlux f = solve_rte(m, 0.2, lift_boundary(m, 0.2, traces::x(), 1, g, q), g, q);
  const Residuals r = residual_norms(f, t, 0.2);
  double mu_max = 0.0;
  for (const auto& v : q.directions) mu_max = std::max(mu_max, std::abs(v[0]));
  EXPECT_NEAR(r.r0, 0.2 * mu_max, 1e-8);
  EXPECT_LT(r.r1, 1e-9);
}

TEST(FitRate, RecoversPowerLaw) {
  std::vector<RatePoint> p;
  for (double e : reference_epsilons()) p.push_back({e, 3.0 * e * e});
  const RateStudy s = fit_rate(p, "m");
  EXPECT_NEAR(s.slope, 2.0, 1e-12);
  EXPECT_NEAR(s.intercept, std::log(3.0), 1e-12);
  EXPECT_NEAR(s.r2, 1.0, 1e-12);
  EXPECT_EQ(s.n_points, 7);
  EXPECT_EQ(s.excluded, 0);
}

TEST(FitRate, ExcludesNonPositiveAndNeedsFourPoints) {
  std::vector<RatePoint> p{{0.4, 0.4}, {0.2, 0.0}, {0.1, 0.1}, {0.05, 0.05}, {0.025, 0.025}};
  const RateStudy s = fit_rate(p);
  EXPECT_EQ(s.excluded, 1);
  EXPECT_EQ(s.n_points, 4);
  EXPECT_NEAR(s.slope, 1.0, 1e-12);
  p[0].value = -1.0;
  EXPECT_THROW(fit_rate(p), std::invalid_argument);
}

TEST(ForwardGap, VanishesForSymmetricConstantMedium) {
  const SpatialGrid g(Geometry::slab, 64);
  const AngularQuadrature q = build_quadrature(Geometry::slab, 8);
  const MeasurementSetup s{{0, 64}, {traces::x(), traces::one_minus_x()}, 0.05};
  EXPECT_LT(forward_gap(constant_medium(g, 1.0), 0.2, s, g, q), 1e-8);
  const Medium m = medium_from_log_field(g, sample(g, [](const Vec2& p) { return 0.3 * p[0]; }), 10);
  EXPECT_GT(forward_gap(m, 0.2, s, g, q), 1e-4);
}
