#include "optomo/transport.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace optomo;

namespace {

SolverOptions tight() {
  SolverOptions o;
  o.tolerance = 1e-14;
  return o;
}

Medium wavy(const SpatialGrid& g) {
  return medium_from_log_field(g, sample(g, [](const Vec2& p) { return 0.4 * std::sin(3 * p[0] + 1) + 0.2 * p[1]; }), 10.0);
}

}  // namespace

TEST(TransportOracle, SlabDiamondDifferenceMatchesDenseSolve) {
  const SpatialGrid g(Geometry::slab, 24);
  const AngularQuadrature q = build_quadrature(Geometry::slab, 8);
  const Medium m = wavy(g);
  for (double eps : {1.0, 0.2, 0.05}) {
    const auto bc = lift_boundary(m, eps, traces::x_squared(), 1, g, q);
    const AngularFlux f = solve_rte(m, eps, bc, g, q, tight());
    EXPECT_LT((f.values - oracle::dense_slab(m, eps, bc, g, q)).cwiseAbs().maxCoeff(), 1e-10) << eps;
  }
}

TEST(TransportOracle, SquareUpwindMatchesDenseSolve) {
  const SpatialGrid g(Geometry::square, 8);
  const AngularQuadrature q = build_quadrature(Geometry::square, 8);
  const Medium m = wavy(g);
  for (double eps : {1.0, 0.1}) {
    const auto bc = lift_boundary(m, eps, traces::saddle(), 1, g, q);
    const AngularFlux f = solve_rte(m, eps, bc, g, q, tight());
    EXPECT_LT((f.values - oracle::dense_square(m, eps, bc, g, q)).cwiseAbs().maxCoeff(), 1e-10) << eps;
  }
}

TEST(Transport, ConstantDataGivesConstantSolution) {
  for (Geometry geo : {Geometry::slab, Geometry::square}) {
    const SpatialGrid g(geo, 16);
    const AngularQuadrature q = build_quadrature(geo, 8);
    const Medium m = wavy(g);
    const AngularFlux f = solve_rte(m, 0.3, lift_boundary(m, 0.3, traces::constant(2.5), 1, g, q), g, q);
    EXPECT_LT((f.values.array() - 2.5).abs().maxCoeff(), 1e-9);
    for (const auto& b : g.boundary()) EXPECT_NEAR(albedo_measurement(f, b.node, g, q), 0.0, 1e-7);
  }
}

TEST(Transport, LinearDensityWithCompatibleLiftIsExact) {
  // sigma = 1, rho = x: f = x - eps v_x solves the transport equation and both schemes
  for (Geometry geo : {Geometry::slab, Geometry::square}) {
    const SpatialGrid g(geo, 12);
    const AngularQuadrature q = build_quadrature(geo, 8);
    const Medium m = constant_medium(g, 1.0);
    const double eps = 0.25;
    const AngularFlux f = solve_rte(m, eps, lift_boundary(m, eps, traces::x(), 1, g, q), g, q, tight());
    for (std::size_t k = 0; k < g.node_count(); ++k)
      for (std::size_t v = 0; v < q.size(); ++v)
        EXPECT_NEAR(f(k, v), g.position(k)[0] - eps * q.directions[v][0], 1e-10);
    if (geo == Geometry::slab) {
      // albedo of the exact solution equals sigma^-1 d rho / dn = +-1
      EXPECT_NEAR(albedo_measurement(f, 12, g, q), 1.0, 1e-9);
      EXPECT_NEAR(albedo_measurement(f, 0, g, q), -1.0, 1e-9);
    }
  }
}

TEST(Transport, SourceIterationAgreesWithGmres) {
  const SpatialGrid g(Geometry::slab, 32);
  const AngularQuadrature q = build_quadrature(Geometry::slab, 8);
  const Medium m = wavy(g);
  const auto bc = lift_boundary(m, 0.8, traces::x(), 0, g, q);
  SolverOptions plain = tight();
  plain.accelerate = false;
  plain.tolerance = 1e-13;
  const AngularFlux a = solve_rte(m, 0.8, bc, g, q, tight());
  const AngularFlux b = solve_rte(m, 0.8, bc, g, q, plain);
  EXPECT_LT((a.values - b.values).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT(a.transcript.iterations, b.transcript.iterations);
}

TEST(Transport, AdjointIsSpatialMirrorOnSymmetricSlab) {
  const SpatialGrid g(Geometry::slab, 20);
  const AngularQuadrature q = build_quadrature(Geometry::slab, 8);
  const Medium m = constant_medium(g, 1.0);
  const double eps = 0.3;
  KineticBoundaryData in{Eigen::MatrixXd::Zero(8, 2)};
  for (std::size_t v = 0; v < 8; ++v)
    if (q.directions[v][0] > 0) in.values(static_cast<Eigen::Index>(v), 0) = 1.0;
  const AngularFlux fwd = solve_rte(m, eps, in, g, q, tight());
  const AngularFlux adj = solve_rte_adjoint(m, eps, adjoint_delta_data(g, q, 20), g, q, tight());
  for (int i = 0; i <= 20; ++i)
    for (std::size_t v = 0; v < 8; ++v) EXPECT_NEAR(adj(static_cast<std::size_t>(i), v), fwd(static_cast<std::size_t>(20 - i), v), 1e-11);
}

TEST(Transport, IncomingAndOutgoingSetsPartitionNonCornerBoundary) {
  const SpatialGrid g(Geometry::square, 8);
  const AngularQuadrature q = build_quadrature(Geometry::square, 16);
  for (const auto& b : g.boundary()) {
    const bool corner = std::abs(b.normal[0]) > 0 && std::abs(b.normal[1]) > 0;
    for (const auto& v : q.directions) {
      if (!corner) {
        EXPECT_EQ(is_incoming(g, b.node, v), dot(v, b.normal) < 0);
        EXPECT_NE(is_incoming(g, b.node, v), is_outgoing(g, b.node, v));
      }
    }
  }
}

TEST(Transport, RejectsBadInputs) {
  const SpatialGrid g(Geometry::slab, 8);
  const AngularQuadrature q = build_quadrature(Geometry::slab, 4);
  const Medium m = constant_medium(g, 1.0);
  const auto bc = lift_boundary(m, 0.5, traces::x(), 1, g, q);
  EXPECT_THROW(solve_rte(m, 0.0, bc, g, q), std::invalid_argument);
  EXPECT_THROW(solve_rte(m, 1.5, bc, g, q), std::invalid_argument);
  EXPECT_THROW(solve_rte(constant_medium(g, 50.0), 0.5, bc, g, q), std::invalid_argument);
  KineticBoundaryData bad{Eigen::MatrixXd::Zero(3, 2)};
  EXPECT_THROW(solve_rte(m, 0.5, bad, g, q), std::invalid_argument);
}

TEST(Transport, NonConvergenceReportsDiagnostics) {
  const SpatialGrid g(Geometry::slab, 64);
  const AngularQuadrature q = build_quadrature(Geometry::slab, 8);
  const Medium m = constant_medium(g, 1.0);
  SolverOptions o;
  o.accelerate = false;
  o.max_iterations = 2;
  try {
    (void)solve_rte(m, 0.05, lift_boundary(m, 0.05, traces::x(), 1, g, q), g, q, o);
    FAIL() << "expected SolverFailure";
  } catch (const SolverFailure& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("eps=0.05"), std::string::npos);
    EXPECT_NE(msg.find("iterations=2"), std::string::npos);
  }
}
