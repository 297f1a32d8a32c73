#include "rbps/rbpf.hpp"

#include <cmath>
#include <numeric>

#include "rbps/kalman.hpp"
#include "rbps/random.hpp"

namespace rbps {

namespace {

void check_inputs(int n_y, const std::vector<Vector>& y, const RbpfOptions& opts) {
  if (opts.N < 1) throw Error(Errc::ConfigError, "rbpf_run: N must be >= 1");
  if (y.empty()) throw Error(Errc::ConfigError, "rbpf_run: empty measurement sequence");
  for (const auto& v : y)
    if (v.size() != n_y) throw Error(Errc::DimensionMismatch, "rbpf_run: measurement dimension");
}

void allocate(FilterOutput& out, int T, int N) {
  out.T = T;
  out.N = N;
  out.particles.assign(T, std::vector<Vector>(N));
  out.weights.assign(T, std::vector<double>(N));
  out.ancestors.assign(T, std::vector<int>(N, -1));
  out.filtered.assign(T, std::vector<MomentGaussian<>>(N));
  out.meas.assign(T, std::vector<LinearMeasurement>(N));
  out.meas_lin.assign(T, std::vector<Vector>(N));
  out.forward_lin.assign(T, std::vector<Vector>(N));
  out.ess.assign(T, 0.0);
  out.resampled.assign(T, 0);
}

// Measurement update with forward linearization at the predicted mean and a
// backward block re-linearized at the filtered mean.
double measure_and_store(FilterOutput& out, const MeasurementFn& measurement, bool linearized, int k, int i,
                         const Vector& u, const MomentGaussian<>& pred, const Vector& y) {
  const LinearMeasurement meas = measurement(k + 1, u, pred.mean);
  const Matrix r_sqrt = chol_pd(meas.R, Errc::RNotPD, "rbpf_run: R not PD");
  KfUpdate upd = kf_meas_update(pred, meas.h, meas.C, r_sqrt, y);
  if (linearized) {
    out.forward_lin[k][i] = pred.mean;
    out.meas_lin[k][i] = upd.moment.mean;
    out.meas[k][i] = measurement(k + 1, u, upd.moment.mean);
  } else {
    out.meas[k][i] = meas;
  }
  out.filtered[k][i] = std::move(upd.moment);
  return upd.log_lik;
}

// Normalizes log-weights into out.weights[k]; returns the log of their sum.
double finish_step(FilterOutput& out, int k, const std::vector<double>& logw) {
  out.weights[k] = normalize_log_weights<double>(logw);
  out.ess[k] = ess(out.weights[k]);
  return log_sum_exp<double>(logw);
}

// Parent indices for step k and the log of their pre-likelihood weights.
std::vector<int> choose_parents(FilterOutput& out, const RbpfOptions& opts, int k, std::uint64_t seed,
                                std::vector<double>& base) {
  const int N = out.N;
  const auto& w = out.weights[k - 1];
  bool resample = opts.resample == ResamplePolicy::Always ||
                  (opts.resample == ResamplePolicy::Adaptive && out.ess[k - 1] < opts.ess_fraction * N);
  std::vector<int> idx(N);
  base.assign(N, 0.0);
  if (resample) {
    Rng rng = make_stream(seed, StreamTag::Resample, static_cast<std::uint64_t>(k));
    idx = systematic_resample(w, rng);
    for (auto& b : base) b = -std::log(double(N));
  } else {
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 0; i < N; ++i) base[i] = std::log(w[i]);
  }
  out.resampled[k] = resample ? 1 : 0;
  for (int i = 0; i < N; ++i) out.ancestors[k][i] = idx[i];
  return idx;
}

bool same_bits(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
}

}  // namespace

FilterOutput rbpf_run(const HierarchicalModel& model, const std::vector<Vector>& y, const RbpfOptions& opts,
                      std::uint64_t seed) {
  require_valid(model);
  check_inputs(model.n_y, y, opts);
  const int T = static_cast<int>(y.size());
  const int N = opts.N;
  FilterOutput out;
  out.mixed = false;
  out.n_u = model.n_u;
  out.n_z = model.n_z;
  out.n_y = model.n_y;
  out.seed = seed;
  allocate(out, T, N);

  std::vector<double> logw(N);
  for (int i = 0; i < N; ++i) {
    Rng rng = make_stream(seed, StreamTag::Propagate, 0, static_cast<std::uint64_t>(i));
    out.particles[0][i] = model.initial_u.sample(rng);
    logw[i] = measure_and_store(out, model.measurement, model.linearized_measurement, 0, i, out.particles[0][i],
                                model.initial_z, y[0]);
  }
  out.log_marginal = finish_step(out, 0, logw) - std::log(double(N));

  std::vector<double> base;
  for (int k = 1; k < T; ++k) {
    const std::vector<int> idx = choose_parents(out, opts, k, seed, base);
    for (int i = 0; i < N; ++i) {
      const int a = idx[i];
      Rng rng = make_stream(seed, StreamTag::Propagate, static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(i));
      Vector u = model.sample_transition(k, out.particles[k - 1][a], rng);
      const LinearDynamics d = model.dynamics(k + 1, u);
      const MomentGaussian<> pred = kf_time_update_hier(out.filtered[k - 1][a], d);
      logw[i] = base[i] + measure_and_store(out, model.measurement, model.linearized_measurement, k, i, u, pred, y[k]);
      out.particles[k][i] = std::move(u);
    }
    out.log_marginal += finish_step(out, k, logw);
  }
  return out;
}

FilterOutput rbpf_run(const MixedModel& model, const std::vector<Vector>& y, const RbpfOptions& opts,
                      std::uint64_t seed) {
  require_valid(model);
  check_inputs(model.n_y, y, opts);
  const int T = static_cast<int>(y.size());
  const int N = opts.N;
  FilterOutput out;
  out.mixed = true;
  out.n_u = model.n_u;
  out.n_z = model.n_z;
  out.n_y = model.n_y;
  out.seed = seed;
  allocate(out, T, N);
  out.blocks.assign(T > 1 ? T - 1 : 0, std::vector<MixedBlocks>(N));
  out.shared_noise.assign(T > 1 ? T - 1 : 0, 0);

  // Dynamics blocks at (k, i), linearized at the filtered mean when the model asks for it.
  auto build_blocks = [&](int k) {
    for (int i = 0; i < N; ++i) out.blocks[k][i] = model.dynamics(k + 1, out.particles[k][i], out.filtered[k][i].mean);
    bool shared = true;
    for (int i = 1; i < N && shared; ++i)
      shared = same_bits(out.blocks[k][i].F, out.blocks[k][0].F) && same_bits(out.blocks[k][i].G, out.blocks[k][0].G);
    out.shared_noise[k] = shared ? 1 : 0;
  };

  std::vector<double> logw(N);
  for (int i = 0; i < N; ++i) {
    Rng rng = make_stream(seed, StreamTag::Propagate, 0, static_cast<std::uint64_t>(i));
    out.particles[0][i] = model.initial_u.sample(rng);
    logw[i] = measure_and_store(out, model.measurement, model.linearized_measurement, 0, i, out.particles[0][i],
                                model.initial_z, y[0]);
  }
  out.log_marginal = finish_step(out, 0, logw) - std::log(double(N));

  std::vector<double> base;
  for (int k = 1; k < T; ++k) {
    build_blocks(k - 1);
    const std::vector<int> idx = choose_parents(out, opts, k, seed, base);
    for (int i = 0; i < N; ++i) {
      const int a = idx[i];
      Rng rng = make_stream(seed, StreamTag::Propagate, static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(i));
      const MixedBlocks& b = out.blocks[k - 1][a];
      const MomentGaussian<>& parent = out.filtered[k - 1][a];
      Vector u = sample(mixed_u_predictive(parent, b), rng);
      const MomentGaussian<> pred = kf_time_update_mixed(parent, u, b);
      logw[i] = base[i] + measure_and_store(out, model.measurement, model.linearized_measurement, k, i, u, pred, y[k]);
      out.particles[k][i] = std::move(u);
    }
    out.log_marginal += finish_step(out, k, logw);
  }
  return out;
}

std::vector<int> ancestral_indices(const FilterOutput& out, int k, int i) {
  std::vector<int> idx(static_cast<std::size_t>(k + 1));
  for (int s = k; s >= 0; --s) {
    idx[s] = i;
    if (s > 0) i = out.ancestors[s][i];
  }
  return idx;
}

std::vector<Vector> ancestral_path(const FilterOutput& out, int k, int i) {
  const auto idx = ancestral_indices(out, k, i);
  std::vector<Vector> path;
  path.reserve(idx.size());
  for (std::size_t s = 0; s < idx.size(); ++s) path.push_back(out.particles[s][idx[s]]);
  return path;
}

}  // namespace rbps
