/**
 * @file backward.hpp
 * @brief Backward information filter conditional on a sampled u-path, Rao-Blackwellized
 *        backward simulation, linear-state smoothing and MCMC backward rejuvenation.
 *
 * The backward potential at time t represents p(y_{t+1:T}, u_{t+1:T} | z_t, u_t) up to
 * factors that do not depend on (u_t, z_t), as exp(log_z - 0.5 (z' Omega z - 2 lambda' z)).
 */
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "rbps/gauss.hpp"
#include "rbps/models.hpp"
#include "rbps/rbpf.hpp"

namespace rbps {

// ---------------------------------------------------------------------------
// Plain information form

/// Omega^ = C' R^-1 C, lambda^ = C' R^-1 (y - h).
InfoPotential<> bwd_init(const LinearMeasurement& meas, const Vector& y);
InfoPotential<> bwd_meas_update(const InfoPotential<>& pred, const LinearMeasurement& meas, const Vector& y);

/// Hierarchical prediction with (f, A, F) evaluated at u_{t+1}; log_z is left at 0 since the
/// u_t-dependent factor is the transition density, added per particle by the caller.
InfoPotential<> bwd_predict_hier(const LinearDynamics& d, const InfoPotential<>& upd);

/**
 * Per-particle quantities of the decorrelated mixed dynamics that do not depend on the
 * backward message; built once per (t, i) and reused by every backward trajectory.
 */
struct MixedPrecomp {
  Matrix lq;       // chol(Q)
  double log_det_q = 0.0;
  Vector g, f;
  Matrix bw;       // L_Q^-1 B
  Matrix k_gain;   // F G' L_Q^-T, so f_bar = f + k_gain L_Q^-1 (u_next - g)
  Matrix a_bar;    // A - F G' Q^-1 B
  Matrix gamma;    // F Pi
};
MixedPrecomp mixed_precompute(const MixedBlocks& b);

/// Mixed prediction for one particle: sets omega, lambda and log_z of p(u_{t+1}, ... | z_t, u_t).
InfoPotential<> bwd_predict_mixed(const MixedBlocks& b, const Vector& u_next, const InfoPotential<>& upd);
InfoPotential<> bwd_predict_mixed(const MixedPrecomp& pc, const Vector& u_next, const InfoPotential<>& upd);

/// Orthogonal projection Pi = I - G' Q^-1 G.
Matrix decorrelation_projection(const Matrix& G);

// ---------------------------------------------------------------------------
// Square-root information form

SqrtInfoPotential<> sqrt_bwd_init(const LinearMeasurement& meas, const Vector& y);
SqrtInfoPotential<> sqrt_bwd_meas_update(const SqrtInfoPotential<>& pred, const LinearMeasurement& meas,
                                         const Vector& y);
SqrtInfoPotential<> sqrt_bwd_predict_hier(const LinearDynamics& d, const SqrtInfoPotential<>& upd);
SqrtInfoPotential<> sqrt_bwd_predict_mixed(const MixedBlocks& b, const Vector& u_next,
                                           const SqrtInfoPotential<>& upd);
SqrtInfoPotential<> sqrt_bwd_predict_mixed(const MixedPrecomp& pc, const Vector& u_next,
                                           const SqrtInfoPotential<>& upd);

// ---------------------------------------------------------------------------
// Backward weights

/// log( |Lambda|^-1/2 exp(-eta / 2) ), the Gaussian integral of the potential against the filter moment.
double bwd_log_factor(const MomentGaussian<>& filt, const InfoPotential<>& pot);
double bwd_log_factor(const MomentGaussian<>& filt, const SqrtInfoPotential<>& pot);

/**
 * Normalized backward weights w_t^i Z_t^i |Lambda_t^i|^-1/2 exp(-eta_t^i / 2).
 * pots holds either one shared potential or one per particle; log_z may be empty.
 */
std::vector<double> bwd_weights(std::span<const double> w, std::span<const MomentGaussian<>> filt,
                                std::span<const double> log_z, std::span<const InfoPotential<>> pots);

// ---------------------------------------------------------------------------
// Backward simulation

struct BackwardTrajectory {
  std::vector<Vector> u;
  std::vector<int> index;                   // forward particle index at each t, -1 when off the particle support
  std::vector<InfoPotential<>> predicted;   // (Omega_t, lambda_t); flat at T
  std::vector<LinearMeasurement> meas;      // measurement block used at each t
  std::vector<MixedBlocks> blocks;          // mixed only: dynamics blocks at t = 1..T-1
  std::vector<MomentGaussian<>> smoothed;   // filled by smooth_linear
  std::vector<std::vector<double>> weights; // normalized backward weights per t (optional)

  int length() const { return static_cast<int>(u.size()); }
};

struct BackwardOptions {
  bool sqrt = false;
  bool record_weights = false;
};

std::vector<BackwardTrajectory> backward_simulate(const FilterOutput& filter, const HierarchicalModel& model,
                                                  const std::vector<Vector>& y, int M, const BackwardOptions& opts,
                                                  std::uint64_t seed);
std::vector<BackwardTrajectory> backward_simulate(const FilterOutput& filter, const MixedModel& model,
                                                  const std::vector<Vector>& y, int M, const BackwardOptions& opts,
                                                  std::uint64_t seed);

/// Fresh conditional KF along the trajectory's u-path, fused with its stored backward messages.
std::vector<MomentGaussian<>> smooth_linear(const HierarchicalModel& model, BackwardTrajectory& traj,
                                            const std::vector<Vector>& y);
std::vector<MomentGaussian<>> smooth_linear(const MixedModel& model, BackwardTrajectory& traj,
                                            const std::vector<Vector>& y);

// ---------------------------------------------------------------------------
// MCMC backward simulation

/// Chain state at time index k: the prefix particle at k - 1 (-1 when k = 0) and the value u_k.
struct McmcCandidate {
  int prefix = -1;
  Vector u;
};

struct McmcContext {
  const FilterOutput* filter = nullptr;
  int k = 0;
  const Vector* u_next = nullptr;            // u_{k+1} on the trajectory
  const InfoPotential<>* next_potential = nullptr;  // updated backward message at k + 1
};

/// Independence proposal over (prefix, u_k).
struct BackwardProposal {
  std::function<McmcCandidate(const McmcContext&, Rng&)> sample;
  std::function<double(const McmcContext&, const McmcCandidate&)> log_density;
};

/// Prefix weights w~_{k-1}; defaults to the forward filter weights.
using PrefixWeightsFn = std::function<std::vector<double>(const FilterOutput&, int k_prefix)>;

/// sum_i w~^i q(u | prefix i) with q the model's own transition (default proposal).
BackwardProposal bootstrap_proposal(const HierarchicalModel& model, const FilterOutput& filter,
                                    PrefixWeightsFn w_tilde = {});
BackwardProposal bootstrap_proposal(const MixedModel& model, const FilterOutput& filter,
                                    PrefixWeightsFn w_tilde = {});

/// Unnormalized log target of the chain at time index k.
double mcmc_log_target(const FilterOutput& filter, const HierarchicalModel& model, const std::vector<Vector>& y,
                       const McmcContext& ctx, const McmcCandidate& cand);
double mcmc_log_target(const FilterOutput& filter, const MixedModel& model, const std::vector<Vector>& y,
                       const McmcContext& ctx, const McmcCandidate& cand);

struct McmcOptions {
  int R = 10;
  bool sqrt = false;
};

struct McmcStats {
  long proposed = 0;
  long accepted = 0;
};

std::vector<BackwardTrajectory> mcmc_backward_simulate(const FilterOutput& filter, const HierarchicalModel& model,
                                                       const std::vector<Vector>& y, int M, const McmcOptions& opts,
                                                       const std::optional<BackwardProposal>& proposal,
                                                       std::uint64_t seed, McmcStats* stats = nullptr);
std::vector<BackwardTrajectory> mcmc_backward_simulate(const FilterOutput& filter, const MixedModel& model,
                                                       const std::vector<Vector>& y, int M, const McmcOptions& opts,
                                                       const std::optional<BackwardProposal>& proposal,
                                                       std::uint64_t seed, McmcStats* stats = nullptr);

}  // namespace rbps
