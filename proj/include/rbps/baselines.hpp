/**
 * @file baselines.hpp
 * @brief Comparison smoothers: constrained RTS, FFBS, Rao-Blackwellized Kitagawa
 *        smoother (RBFS) and Rao-Blackwellized joint backward simulation (RB-FFJBS).
 */
#pragma once

#include <cstdint>
#include <vector>

#include "rbps/backward.hpp"
#include "rbps/gauss.hpp"
#include "rbps/models.hpp"
#include "rbps/rbpf.hpp"

namespace rbps {

/// One smoothed trajectory: u-path and per-time linear-state marginals.
/// FFBS stores its sampled z as a zero-covariance marginal.
struct SmoothedPath {
  std::vector<Vector> u;
  std::vector<MomentGaussian<>> z;
  std::vector<int> index;  // forward particle index at each t (-1 when not applicable)
};

/// Exact smoother marginals p(z_t | u_{1:T}, y_{1:T}) by a Kalman filter plus RTS pass.
std::vector<MomentGaussian<>> constrained_rts(const HierarchicalModel& model, const std::vector<Vector>& u_path,
                                              const std::vector<Vector>& y);
std::vector<MomentGaussian<>> constrained_rts(const MixedModel& model, const std::vector<Vector>& u_path,
                                              const std::vector<Vector>& y);

/// Bootstrap PF over the joint state plus backward simulation with the joint transition density.
/// Requires a positive definite joint process noise covariance.
std::vector<SmoothedPath> ffbs_run(const MixedModel& model, const std::vector<Vector>& y, const RbpfOptions& opts,
                                   int M, std::uint64_t seed);
std::vector<SmoothedPath> ffbs_run(const HierarchicalModel& model, const std::vector<Vector>& y,
                                   const RbpfOptions& opts, int M, std::uint64_t seed);

/// M ancestral paths drawn from the final RBPF weights, each refined by constrained RTS.
std::vector<SmoothedPath> rbfs_run(const FilterOutput& filter, const HierarchicalModel& model,
                                   const std::vector<Vector>& y, int M, std::uint64_t seed);
std::vector<SmoothedPath> rbfs_run(const FilterOutput& filter, const MixedModel& model, const std::vector<Vector>& y,
                                   int M, std::uint64_t seed);

/// Joint (u, z) backward simulation with z sampled, followed by constrained RTS along each u-path.
std::vector<SmoothedPath> rbffjbs_run(const FilterOutput& filter, const HierarchicalModel& model,
                                      const std::vector<Vector>& y, int M, std::uint64_t seed);
std::vector<SmoothedPath> rbffjbs_run(const FilterOutput& filter, const MixedModel& model,
                                      const std::vector<Vector>& y, int M, std::uint64_t seed);

/// Smoothed paths from backward trajectories that already carry smoothed marginals.
std::vector<SmoothedPath> to_paths(const std::vector<BackwardTrajectory>& trajs);

}  // namespace rbps
