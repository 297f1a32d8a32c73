/**
 * @file models.hpp
 * @brief Conditionally linear Gaussian model flavors and the built-in benchmark systems.
 *
 * Time convention: t runs 1..T. Hierarchical dynamics(t, u_t) returns the
 * (f, A, F) that map z_{t-1} to z_t; mixed dynamics(t, u_t) returns the blocks
 * that map (u_t, z_t) to (u_{t+1}, z_{t+1}). Measurement callbacks take the
 * current linearization point z_lin, which exact CLG models ignore.
 */
#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rbps/gauss.hpp"
#include "rbps/random.hpp"

namespace rbps {

/// y = h + C z + e, e ~ N(0, R).
struct LinearMeasurement {
  Vector h;
  Matrix C;
  Matrix R;
};

/// z_next = f + A z + F v, v ~ N(0, I).
struct LinearDynamics {
  Vector f;
  Matrix A;
  Matrix F;
};

/// Row blocks of the mixed model: [u'; z'] = [g; f] + [B; A] z + [G; F] v.
struct MixedBlocks {
  Vector g;
  Matrix B;
  Matrix G;
  Vector f;
  Matrix A;
  Matrix F;
};

using MeasurementFn = std::function<LinearMeasurement(int t, const Vector& u, const Vector& z_lin)>;

struct InitialU {
  std::function<Vector(Rng&)> sample;
  std::function<double(const Vector&)> logpdf;
};

InitialU gaussian_initial_u(const MomentGaussian<>& prior);

struct HierarchicalModel {
  int n_u = 0, n_z = 0, n_v = 0, n_y = 0;
  std::function<LinearDynamics(int t, const Vector& u)> dynamics;
  MeasurementFn measurement;
  std::function<Vector(int t, const Vector& u, Rng&)> sample_transition;
  std::function<double(int t, const Vector& u_next, const Vector& u)> transition_logpdf;
  InitialU initial_u;
  MomentGaussian<> initial_z;
  // True when measurement() depends on z_lin (approximate Rao-Blackwellization).
  bool linearized_measurement = false;
};

struct MixedModel {
  int n_u = 0, n_z = 0, n_v = 0, n_y = 0;
  std::function<MixedBlocks(int t, const Vector& u, const Vector& z_lin)> dynamics;
  MeasurementFn measurement;
  InitialU initial_u;
  MomentGaussian<> initial_z;
  bool linearized_dynamics = false;
  bool linearized_measurement = false;
};

/// Jacobians at zero noise: d map / d z and d map / d noise, plus the map value.
struct MapLinearization {
  Vector value;
  Matrix jac_z;
  Matrix jac_noise;
};

/// x_{t+1} = dynamics(t, u, z, v), y_t = measurement(t, u, z, e), v, e standard normal.
struct GeneralModel {
  int n_u = 0, n_z = 0, n_v = 0, n_e = 0, n_y = 0;
  std::function<Vector(int t, const Vector& u, const Vector& z, const Vector& v)> dynamics;
  std::function<Vector(int t, const Vector& u, const Vector& z, const Vector& e)> measurement;
  // Optional analytic linearizations; finite differences are used when absent.
  std::function<MapLinearization(int t, const Vector& u, const Vector& z)> dynamics_jacobian;
  std::function<MapLinearization(int t, const Vector& u, const Vector& z)> measurement_jacobian;
  InitialU initial_u;
  MomentGaussian<> initial_z;
};

/// Convenience constructors from per-matrix callbacks of (t, u).
struct MixedCallbacks {
  std::function<Vector(int, const Vector&)> g, f, h;
  std::function<Matrix(int, const Vector&)> B, G, A, F, C, R;
};
MixedModel make_mixed_model(int n_u, int n_z, int n_v, int n_y, MixedCallbacks cb, InitialU initial_u,
                            MomentGaussian<> initial_z);
MeasurementFn clg_measurement(std::function<Vector(int, const Vector&)> h, std::function<Matrix(int, const Vector&)> c,
                              std::function<Matrix(int, const Vector&)> r);

struct Trajectory {
  std::vector<Vector> u;
  std::vector<Vector> z;
  std::vector<Vector> y;
  std::uint64_t seed = 0;

  int length() const { return static_cast<int>(y.size()); }
};

/// Violations found by probing the callbacks; empty when the model is consistent.
std::vector<std::string> validate(const HierarchicalModel& model, std::uint64_t seed = 0);
std::vector<std::string> validate(const MixedModel& model, std::uint64_t seed = 0);
void require_valid(const HierarchicalModel& model);
void require_valid(const MixedModel& model);

Trajectory simulate(const HierarchicalModel& model, int T, std::uint64_t seed);
Trajectory simulate(const MixedModel& model, int T, std::uint64_t seed);
Trajectory simulate(const GeneralModel& model, int T, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Benchmark 1: nonlinear time series with a time-varying parameter.

/// theta_t = 25 + c' z_t with c = [0, 0.04, 0.044, 0.008].
Vector theta_coefficients();
double theta_of(const Vector& z);
Matrix theta_transition_matrix();
MixedModel builtin_theta_model();

// ---------------------------------------------------------------------------
// Benchmark 2: constant turn-rate tracking with range/bearing observations.

struct TurnParams {
  double cauchy_scale = 0.03;  // rad/s
  double sigma_z = 10.0;       // m (white acceleration intensity scale)
  double sigma_b = 0.03490658503988659;  // pi / 90 rad
  double sigma_r = 100.0;      // m
  double dt = 1.0;             // s
  double u0_var = 0.01;
  Vector z0_mean = Vector::Zero(0);  // defaults to the maneuver start state
  Vector z0_sd = (Vector(4) << 100.0, 100.0, 10.0, 10.0).finished();
};

/// Coordinated-turn transition (state: px, py, vx, vy) and acceleration-noise input matrix.
LinearDynamics constant_turn_dynamics(double turn_rate, double dt, double sigma_z);
double cauchy_logpdf(double x, double scale);

struct TurnModel {
  HierarchicalModel dynamics;  // measurement left unset; see approx::linearize_measurement
  GeneralModel measurement;    // bearing/range map; dynamics map uses a Cauchy transform of v
  TurnParams params;
};
TurnModel builtin_turn_model(TurnParams params = {});

struct ManeuverSegment {
  int steps;
  double turn_rate;
};
std::vector<ManeuverSegment> default_maneuver();
Vector maneuver_start_state();
/// Deterministic truth path (u = turn rate, z = state) for the given segments, truncated/extended to T.
Trajectory maneuver_truth(const std::vector<ManeuverSegment>& segments, const Vector& z1, double dt, int T);
/// Truth from the maneuver generator plus simulated range/bearing observations.
Trajectory simulate_turn_benchmark(const TurnModel& model, int T, std::uint64_t seed);

}  // namespace rbps
