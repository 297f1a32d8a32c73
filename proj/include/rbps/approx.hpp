/**
 * @file approx.hpp
 * @brief Approximate Rao-Blackwellization: per-step CLG blocks synthesized from a
 *        general nonlinear model by a Gaussian approximation around an artificial prior.
 */
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "rbps/backward.hpp"
#include "rbps/gauss.hpp"
#include "rbps/models.hpp"
#include "rbps/rbpf.hpp"

namespace rbps {

struct ArtificialPrior {
  Vector mu;
  Matrix sigma;
};

/// Joint Gaussian approximation of (map(z, v), z) for z ~ prior, v ~ N(0, I).
struct JointGaussian {
  Vector c;           // output mean
  Matrix sigma_out;   // output covariance
  Matrix sigma_cross; // Cov(output, z), rows = output
};

using NoiseMap = std::function<Vector(const Vector& z, const Vector& noise)>;
/// Optional analytic linearization at (z, 0).
using LinearizationHook = std::function<MapLinearization(const Vector& z)>;

class GaussianScheme {
 public:
  virtual ~GaussianScheme() = default;
  virtual JointGaussian joint(const NoiseMap& map, const ArtificialPrior& prior, int noise_dim,
                              const LinearizationHook& hook = {}) const = 0;
};

/// First-order Taylor expansion at (mu, 0).
class Taylor1Scheme final : public GaussianScheme {
 public:
  JointGaussian joint(const NoiseMap& map, const ArtificialPrior& prior, int noise_dim,
                      const LinearizationHook& hook = {}) const override;
};

/// Central differences with step 1e-6 (1 + |x_i|); throws NonFiniteJacobian.
MapLinearization finite_difference_jacobian(const NoiseMap& map, const Vector& mu, int noise_dim);

JointGaussian taylor1_joint(const NoiseMap& map, const Vector& mu, const Matrix& sigma, int noise_dim);

/// Mixed-model blocks of the dynamics of a general model at (t, u) around the prior.
MixedBlocks approx_dynamics(const GeneralModel& gmodel, int t, const Vector& u, const ArtificialPrior& prior,
                            const GaussianScheme& scheme);
/// (h, C, R) of the measurement map at (t, u) around the prior.
LinearMeasurement approx_measurement(const GeneralModel& gmodel, int t, const Vector& u, const ArtificialPrior& prior,
                                     const GaussianScheme& scheme);

enum class LinearizationPolicy { FilterMean };

/// Hierarchical model whose measurement blocks come from approx_measurement at the supplied point.
HierarchicalModel linearize_measurement(const HierarchicalModel& dynamics, const GeneralModel& gmodel,
                                        std::shared_ptr<const GaussianScheme> scheme = nullptr);
/// Mixed model whose dynamics and measurement blocks are synthesized from the general model.
MixedModel approximate_mixed_model(const GeneralModel& gmodel, std::shared_ptr<const GaussianScheme> scheme = nullptr);

/// Wraps a mixed CLG model as a general model (with analytic linearization hooks when requested).
GeneralModel wrap_as_general(const MixedModel& model, bool analytic_hooks = true);

struct SmootherRun {
  FilterOutput filter;
  std::vector<BackwardTrajectory> trajectories;
};

struct ApproxRunOptions {
  int N = 100;
  int M = 100;
  RbpfOptions rbpf;
  BackwardOptions backward;
  LinearizationPolicy policy = LinearizationPolicy::FilterMean;
  bool smooth = true;
};

/// Exact hierarchical u-dynamics with an approximated measurement model.
SmootherRun approx_rbpf_rbps_run(const HierarchicalModel& dynamics, const GeneralModel& gmodel,
                                 const std::vector<Vector>& y, const ApproxRunOptions& opts, std::uint64_t seed);
/// Fully approximated mixed model.
SmootherRun approx_rbpf_rbps_run(const GeneralModel& gmodel, const std::vector<Vector>& y,
                                 const ApproxRunOptions& opts, std::uint64_t seed);

}  // namespace rbps
