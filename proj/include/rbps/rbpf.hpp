/**
 * @file rbpf.hpp
 * @brief Bootstrap Rao-Blackwellized particle filter with full history storage.
 *
 * Indices are 0-based throughout: particle i at time index k (public time k + 1).
 * ancestors[k][i] is the index at k - 1 that particle i was propagated from.
 */
#pragma once

#include <cstdint>
#include <vector>

#include "rbps/gauss.hpp"
#include "rbps/models.hpp"

namespace rbps {

enum class ResamplePolicy { Adaptive, Always, Never };

struct RbpfOptions {
  int N = 100;
  ResamplePolicy resample = ResamplePolicy::Adaptive;
  double ess_fraction = 0.5;  // adaptive trigger: ESS < ess_fraction * N
};

struct FilterOutput {
  bool mixed = false;
  int T = 0, N = 0, n_u = 0, n_z = 0, n_y = 0;
  std::uint64_t seed = 0;

  std::vector<std::vector<Vector>> particles;              // [k][i] u_t^i
  std::vector<std::vector<double>> weights;                // normalized w_t^i, before any resampling at t
  std::vector<std::vector<int>> ancestors;                 // [k][i], -1 at k = 0
  std::vector<std::vector<MomentGaussian<>>> filtered;     // z_{t|t}^i
  std::vector<double> ess;
  std::vector<char> resampled;  // resampled[k]: resampling preceded the propagation into k
  double log_marginal = 0.0;    // log p^(y_{1:T})

  // Backward-pass caches, keyed by (k, i).
  std::vector<std::vector<LinearMeasurement>> meas;  // measurement blocks at the filtered mean
  std::vector<std::vector<Vector>> meas_lin;         // linearization point of meas (empty for exact models)
  std::vector<std::vector<Vector>> forward_lin;      // point used by the forward update (empty for exact models)
  std::vector<std::vector<MixedBlocks>> blocks;      // mixed only, k = 0..T-2
  std::vector<char> shared_noise;                    // mixed: F, G bitwise equal across particles at k

  int length() const { return T; }
};

FilterOutput rbpf_run(const HierarchicalModel& model, const std::vector<Vector>& y, const RbpfOptions& opts,
                      std::uint64_t seed);
FilterOutput rbpf_run(const MixedModel& model, const std::vector<Vector>& y, const RbpfOptions& opts,
                      std::uint64_t seed);

/// Index chain of particle i at time index k back to time index 0.
std::vector<int> ancestral_indices(const FilterOutput& out, int k, int i);
/// u-values of that chain, ordered by time.
std::vector<Vector> ancestral_path(const FilterOutput& out, int k, int i);

}  // namespace rbps
