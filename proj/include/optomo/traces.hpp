#pragma once

// Closed-form Dirichlet traces xi(x) with analytic gradients. The gradient feeds
// the first-order compatible kinetic lift.

#include "optomo/discretization.hpp"

#include <functional>
#include <stdexcept>
#include <string>

namespace optomo {

struct Trace {
  std::string name;
  std::function<double(const Vec2&)> value;
  std::function<Vec2(const Vec2&)> gradient;
};

namespace traces {

inline Trace constant(double c) {
  return {"const:" + std::to_string(c), [c](const Vec2&) { return c; }, [](const Vec2&) { return Vec2{0.0, 0.0}; }};
}
inline Trace x() {
  return {"x", [](const Vec2& p) { return p[0]; }, [](const Vec2&) { return Vec2{1.0, 0.0}; }};
}
inline Trace one_minus_x() {
  return {"1-x", [](const Vec2& p) { return 1.0 - p[0]; }, [](const Vec2&) { return Vec2{-1.0, 0.0}; }};
}
inline Trace y() {
  return {"y", [](const Vec2& p) { return p[1]; }, [](const Vec2&) { return Vec2{0.0, 1.0}; }};
}
inline Trace x_squared() {
  return {"x^2", [](const Vec2& p) { return p[0] * p[0]; }, [](const Vec2& p) { return Vec2{2.0 * p[0], 0.0}; }};
}
/// Harmonic quadratic on the square.
inline Trace saddle() {
  return {"x^2-y^2", [](const Vec2& p) { return p[0] * p[0] - p[1] * p[1]; },
          [](const Vec2& p) { return Vec2{2.0 * p[0], -2.0 * p[1]}; }};
}
inline Trace xy() {
  return {"xy", [](const Vec2& p) { return p[0] * p[1]; }, [](const Vec2& p) { return Vec2{p[1], p[0]}; }};
}

/// Parses the trace names used in experiment configs ("x", "1-x", "x^2", "y",
/// "x^2-y^2", "xy", "const:<c>").
inline Trace from_name(const std::string& name) {
  if (name == "x") return x();
  if (name == "1-x") return one_minus_x();
  if (name == "y") return y();
  if (name == "x^2") return x_squared();
  if (name == "x^2-y^2") return saddle();
  if (name == "xy") return xy();
  if (name.rfind("const:", 0) == 0) {
    Trace t = constant(std::stod(name.substr(6)));
    t.name = name;
    return t;
  }
  throw std::invalid_argument("unknown trace '" + name + "'");
}

}  // namespace traces

inline ScalarField boundary_values(const SpatialGrid& grid, const Trace& trace) {
  ScalarField out(static_cast<Eigen::Index>(grid.boundary().size()));
  for (std::size_t b = 0; b < grid.boundary().size(); ++b)
    out[static_cast<Eigen::Index>(b)] = trace.value(grid.boundary()[b].position);
  return out;
}

}  // namespace optomo
