/**
 * @file kalman.hpp
 * @brief Square-root conditional Kalman filter steps and resampling utilities.
 */
#pragma once

#include <span>
#include <vector>

#include "rbps/gauss.hpp"
#include "rbps/models.hpp"
#include "rbps/random.hpp"

namespace rbps {

struct KfUpdate {
  MomentGaussian<> moment;
  double log_lik = 0.0;
};

/// Condition on y = h + C z + e, e ~ N(0, R_sqrt R_sqrt^T), via the QR array form.
KfUpdate kf_meas_update(const MomentGaussian<>& prior, const Vector& h, const Matrix& C, const Matrix& R_sqrt,
                        const Vector& y);

/// P+ = A P A^T + F F^T, mean+ = f + A mean.
MomentGaussian<> kf_time_update_hier(const MomentGaussian<>& moment, const Vector& f, const Matrix& A, const Matrix& F);
inline MomentGaussian<> kf_time_update_hier(const MomentGaussian<>& moment, const LinearDynamics& d) {
  return kf_time_update_hier(moment, d.f, d.A, d.F);
}

/**
 * Condition z_t on the realized u_next = g + B z + G v, then propagate through the
 * decorrelated dynamics. Returns p(z_{t+1} | u_{1:t+1}, y_{1:t}). When u_log_lik is
 * non-null it receives log N(u_next; g + B mean, B P B^T + Q).
 */
MomentGaussian<> kf_time_update_mixed(const MomentGaussian<>& moment, const Vector& u_next, const MixedBlocks& b,
                                      double* u_log_lik = nullptr);

/// Predictive law of u_{t+1} under the mixed model: N(g + B mean, B P B^T + Q).
MomentGaussian<> mixed_u_predictive(const MomentGaussian<>& moment, const MixedBlocks& b);

/// Lower Cholesky factor of a PD matrix; throws `code` otherwise.
Matrix chol_pd(const Matrix& m, Errc code, const char* what);

/// Systematic resampling with a single uniform draw; returns N 0-based indices.
std::vector<int> systematic_resample(std::span<const double> weights, Rng& rng);
std::vector<int> systematic_resample(std::span<const double> weights, int n, double u0);

/// 1 / sum w_i^2.
double ess(std::span<const double> weights);

/// Cumulative sums for repeated categorical draws, and a binary-search draw from them.
std::vector<double> cumulative(std::span<const double> weights);
int draw_from_cdf(std::span<const double> cdf, double u);

}  // namespace rbps
