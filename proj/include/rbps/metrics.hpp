/**
 * @file metrics.hpp
 * @brief Smoother evaluation: time-averaged RMSE, path diversity, posterior log-density of the truth.
 */
#pragma once

#include <functional>
#include <vector>

#include "rbps/baselines.hpp"
#include "rbps/gauss.hpp"

namespace rbps {

/// sqrt( (1/T) sum_t |est_t - truth_t|^2 ).
double rmse(const std::vector<Vector>& estimates, const std::vector<Vector>& truth);
double rmse(const std::vector<double>& estimates, const std::vector<double>& truth);

/// Number of distinct u_t across the trajectories, per t.
std::vector<int> unique_particles(const std::vector<SmoothedPath>& paths);

/// log (1/M) sum_j N(z_true_t; m_t^j, P_t^j), per t. Zero-covariance components contribute only
/// when they hit the truth exactly.
std::vector<double> posterior_logdensity(const std::vector<SmoothedPath>& paths, const std::vector<Vector>& z_true);

/// Posterior means over the trajectories.
std::vector<Vector> mean_u(const std::vector<SmoothedPath>& paths);
std::vector<Vector> mean_z(const std::vector<SmoothedPath>& paths);

struct MetricSeries {
  double rmse_u = 0.0;
  double rmse_second = 0.0;  // theta for the theta model, full z otherwise
  std::vector<int> unique;
  std::vector<double> log_density;
};

/// `second_of` maps a z estimate to the second error quantity (empty: use z itself).
MetricSeries evaluate(const std::vector<SmoothedPath>& paths, const Trajectory& truth,
                      const std::function<Vector(const Vector&)>& second_of = {}, bool with_density = true);

}  // namespace rbps
