#include "rbps/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace rbps {

double rmse(const std::vector<Vector>& estimates, const std::vector<Vector>& truth) {
  if (estimates.size() != truth.size() || truth.empty())
    throw Error(Errc::DimensionMismatch, "rmse: series lengths differ or are empty");
  double s = 0.0;
  for (std::size_t t = 0; t < truth.size(); ++t) {
    detail::require(estimates[t].size() == truth[t].size(), "rmse: component size mismatch");
    s += (estimates[t] - truth[t]).squaredNorm();
  }
  return std::sqrt(s / double(truth.size()));
}

double rmse(const std::vector<double>& estimates, const std::vector<double>& truth) {
  if (estimates.size() != truth.size() || truth.empty())
    throw Error(Errc::DimensionMismatch, "rmse: series lengths differ or are empty");
  double s = 0.0;
  for (std::size_t t = 0; t < truth.size(); ++t) s += (estimates[t] - truth[t]) * (estimates[t] - truth[t]);
  return std::sqrt(s / double(truth.size()));
}

namespace {

struct VecLess {
  bool operator()(const Vector& a, const Vector& b) const {
    return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
  }
};

std::size_t path_length(const std::vector<SmoothedPath>& paths) {
  if (paths.empty()) throw Error(Errc::DimensionMismatch, "metrics: no trajectories");
  const std::size_t T = paths.front().u.size();
  for (const auto& p : paths)
    detail::require(p.u.size() == T, "metrics: trajectories of differing length");
  return T;
}

}  // namespace

std::vector<int> unique_particles(const std::vector<SmoothedPath>& paths) {
  const std::size_t T = path_length(paths);
  std::vector<int> out(T);
  for (std::size_t t = 0; t < T; ++t) {
    std::set<Vector, VecLess> seen;
    for (const auto& p : paths) seen.insert(p.u[t]);
    out[t] = static_cast<int>(seen.size());
  }
  return out;
}

std::vector<double> posterior_logdensity(const std::vector<SmoothedPath>& paths, const std::vector<Vector>& z_true) {
  const std::size_t T = path_length(paths);
  detail::require(z_true.size() == T, "posterior_logdensity: truth length");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> out(T), comp(paths.size());
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t j = 0; j < paths.size(); ++j) {
      const MomentGaussian<>& g = paths[j].z[t];
      if ((g.sqrt_cov.diagonal().array() > 0.0).all())
        comp[j] = log_mvn_pdf(z_true[t], g.mean, g.sqrt_cov);
      else
        comp[j] = (g.mean == z_true[t]) ? inf : -inf;
    }
    out[t] = log_sum_exp<double>(comp) - std::log(double(paths.size()));
  }
  return out;
}

std::vector<Vector> mean_u(const std::vector<SmoothedPath>& paths) {
  const std::size_t T = path_length(paths);
  std::vector<Vector> out(T);
  for (std::size_t t = 0; t < T; ++t) {
    out[t] = Vector::Zero(paths.front().u[t].size());
    for (const auto& p : paths) out[t] += p.u[t];
    out[t] /= double(paths.size());
  }
  return out;
}

std::vector<Vector> mean_z(const std::vector<SmoothedPath>& paths) {
  const std::size_t T = path_length(paths);
  std::vector<Vector> out(T);
  for (std::size_t t = 0; t < T; ++t) {
    out[t] = Vector::Zero(paths.front().z[t].mean.size());
    for (const auto& p : paths) out[t] += p.z[t].mean;
    out[t] /= double(paths.size());
  }
  return out;
}

MetricSeries evaluate(const std::vector<SmoothedPath>& paths, const Trajectory& truth,
                      const std::function<Vector(const Vector&)>& second_of, bool with_density) {
  MetricSeries m;
  m.rmse_u = rmse(mean_u(paths), truth.u);
  std::vector<Vector> est = mean_z(paths), ref = truth.z;
  if (second_of) {
    for (auto& e : est) e = second_of(e);
    for (auto& r : ref) r = second_of(r);
  }
  m.rmse_second = rmse(est, ref);
  m.unique = unique_particles(paths);
  if (with_density) m.log_density = posterior_logdensity(paths, truth.z);
  return m;
}

}  // namespace rbps
