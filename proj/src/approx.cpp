#include "rbps/approx.hpp"

#include <cmath>

#include "rbps/kalman.hpp"

namespace rbps {

namespace {

void require_finite(const MapLinearization& lin) {
  if (!lin.value.allFinite() || !lin.jac_z.allFinite() || !lin.jac_noise.allFinite())
    throw Error(Errc::NonFiniteJacobian, "linearization produced non-finite values");
}

Eigen::LLT<Matrix> prior_llt(const ArtificialPrior& prior) {
  Eigen::LLT<Matrix> llt(symmetrize(prior.sigma));
  if (llt.info() != Eigen::Success || !(llt.matrixLLT().diagonal().array() > 0.0).all())
    throw Error(Errc::SigmaSingular, "artificial prior covariance not PD");
  return llt;
}

ArtificialPrior unit_prior(const Vector& mu) { return {mu, Matrix::Identity(mu.size(), mu.size())}; }

std::shared_ptr<const GaussianScheme> default_scheme(std::shared_ptr<const GaussianScheme> s) {
  return s ? s : std::make_shared<Taylor1Scheme>();
}

}  // namespace

MapLinearization finite_difference_jacobian(const NoiseMap& map, const Vector& mu, int noise_dim) {
  const Vector v0 = Vector::Zero(noise_dim);
  MapLinearization lin;
  lin.value = map(mu, v0);
  const Eigen::Index n_out = lin.value.size();
  lin.jac_z.resize(n_out, mu.size());
  lin.jac_noise.resize(n_out, noise_dim);
  auto column = [&](const Vector& x, Eigen::Index i, bool noise) {
    const double h = 1e-6 * (1.0 + std::abs(x(i)));
    Vector xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    const double span = xp(i) - xm(i);  // exact representable step
    const Vector fp = noise ? map(mu, xp) : map(xp, v0);
    const Vector fm = noise ? map(mu, xm) : map(xm, v0);
    return Vector((fp - fm) / span);
  };
  for (Eigen::Index i = 0; i < mu.size(); ++i) lin.jac_z.col(i) = column(mu, i, false);
  for (Eigen::Index i = 0; i < noise_dim; ++i) lin.jac_noise.col(i) = column(v0, i, true);
  require_finite(lin);
  return lin;
}

JointGaussian Taylor1Scheme::joint(const NoiseMap& map, const ArtificialPrior& prior, int noise_dim,
                                   const LinearizationHook& hook) const {
  detail::require(prior.sigma.rows() == prior.mu.size() && prior.sigma.cols() == prior.mu.size(),
                  "taylor1: prior dimension mismatch");
  MapLinearization lin = hook ? hook(prior.mu) : finite_difference_jacobian(map, prior.mu, noise_dim);
  require_finite(lin);
  JointGaussian j;
  j.c = lin.value;
  j.sigma_cross = lin.jac_z * prior.sigma;
  j.sigma_out = symmetrize(j.sigma_cross * lin.jac_z.transpose() + lin.jac_noise * lin.jac_noise.transpose());
  return j;
}

JointGaussian taylor1_joint(const NoiseMap& map, const Vector& mu, const Matrix& sigma, int noise_dim) {
  return Taylor1Scheme().joint(map, {mu, sigma}, noise_dim);
}

MixedBlocks approx_dynamics(const GeneralModel& gm, int t, const Vector& u, const ArtificialPrior& prior,
                            const GaussianScheme& scheme) {
  const Eigen::LLT<Matrix> llt = prior_llt(prior);
  NoiseMap map = [&](const Vector& z, const Vector& v) { return gm.dynamics(t, u, z, v); };
  LinearizationHook hook;
  if (gm.dynamics_jacobian) hook = [&](const Vector& z) { return gm.dynamics_jacobian(t, u, z); };
  const JointGaussian j = scheme.joint(map, prior, gm.n_v, hook);
  const Eigen::Index nx = gm.n_u + gm.n_z;
  detail::require(j.c.size() == nx, "approx_dynamics: dynamics output size");

  const Matrix ax = llt.solve(j.sigma_cross.transpose()).transpose();
  const Vector fx = j.c - ax * prior.mu;
  const Matrix qx = symmetrize(j.sigma_out - ax * j.sigma_cross.transpose());
  const Matrix lx = chol_psd(qx);

  MixedBlocks b;
  b.g = fx.head(gm.n_u);
  b.f = fx.tail(gm.n_z);
  b.B = ax.topRows(gm.n_u);
  b.A = ax.bottomRows(gm.n_z);
  b.G = lx.topRows(gm.n_u);
  b.F = lx.bottomRows(gm.n_z);
  return b;
}

LinearMeasurement approx_measurement(const GeneralModel& gm, int t, const Vector& u, const ArtificialPrior& prior,
                                     const GaussianScheme& scheme) {
  const Eigen::LLT<Matrix> llt = prior_llt(prior);
  NoiseMap map = [&](const Vector& z, const Vector& e) { return gm.measurement(t, u, z, e); };
  LinearizationHook hook;
  if (gm.measurement_jacobian) hook = [&](const Vector& z) { return gm.measurement_jacobian(t, u, z); };
  const JointGaussian j = scheme.joint(map, prior, gm.n_e, hook);

  LinearMeasurement m;
  m.C = llt.solve(j.sigma_cross.transpose()).transpose();
  m.h = j.c - m.C * prior.mu;
  m.R = symmetrize(j.sigma_out - m.C * j.sigma_cross.transpose());
  Eigen::LLT<Matrix> r_llt(m.R);
  if (r_llt.info() != Eigen::Success || !(r_llt.matrixLLT().diagonal().array() > 0.0).all())
    throw Error(Errc::RDegenerate, "approx_measurement: synthesized R not PD");
  return m;
}

HierarchicalModel linearize_measurement(const HierarchicalModel& dynamics, const GeneralModel& gm,
                                        std::shared_ptr<const GaussianScheme> scheme) {
  scheme = default_scheme(std::move(scheme));
  HierarchicalModel m = dynamics;
  m.n_y = gm.n_y;
  m.measurement = [gm, scheme](int t, const Vector& u, const Vector& z_lin) {
    return approx_measurement(gm, t, u, unit_prior(z_lin), *scheme);
  };
  m.linearized_measurement = true;
  return m;
}

MixedModel approximate_mixed_model(const GeneralModel& gm, std::shared_ptr<const GaussianScheme> scheme) {
  scheme = default_scheme(std::move(scheme));
  MixedModel m;
  m.n_u = gm.n_u;
  m.n_z = gm.n_z;
  m.n_v = gm.n_u + gm.n_z;
  m.n_y = gm.n_y;
  m.dynamics = [gm, scheme](int t, const Vector& u, const Vector& z_lin) {
    return approx_dynamics(gm, t, u, unit_prior(z_lin), *scheme);
  };
  m.measurement = [gm, scheme](int t, const Vector& u, const Vector& z_lin) {
    return approx_measurement(gm, t, u, unit_prior(z_lin), *scheme);
  };
  m.initial_u = gm.initial_u;
  m.initial_z = gm.initial_z;
  m.linearized_dynamics = true;
  m.linearized_measurement = true;
  return m;
}

GeneralModel wrap_as_general(const MixedModel& model, bool analytic_hooks) {
  GeneralModel g;
  g.n_u = model.n_u;
  g.n_z = model.n_z;
  g.n_v = model.n_v;
  g.n_e = model.n_y;
  g.n_y = model.n_y;
  g.dynamics = [model](int t, const Vector& u, const Vector& z, const Vector& v) {
    const MixedBlocks b = model.dynamics(t, u, z);
    Vector x(b.g.size() + b.f.size());
    x << b.g + b.B * z + b.G * v, b.f + b.A * z + b.F * v;
    return x;
  };
  g.measurement = [model](int t, const Vector& u, const Vector& z, const Vector& e) {
    const LinearMeasurement m = model.measurement(t, u, z);
    return Vector(m.h + m.C * z + chol_psd(m.R) * e);
  };
  if (analytic_hooks) {
    g.dynamics_jacobian = [model](int t, const Vector& u, const Vector& z) {
      const MixedBlocks b = model.dynamics(t, u, z);
      MapLinearization lin;
      lin.value.resize(b.g.size() + b.f.size());
      lin.value << b.g + b.B * z, b.f + b.A * z;
      lin.jac_z.resize(lin.value.size(), z.size());
      lin.jac_z << b.B, b.A;
      lin.jac_noise.resize(lin.value.size(), b.G.cols());
      lin.jac_noise << b.G, b.F;
      return lin;
    };
    g.measurement_jacobian = [model](int t, const Vector& u, const Vector& z) {
      const LinearMeasurement m = model.measurement(t, u, z);
      return MapLinearization{m.h + m.C * z, m.C, chol_psd(m.R)};
    };
  }
  g.initial_u = model.initial_u;
  g.initial_z = model.initial_z;
  return g;
}

namespace {

template <typename Model>
SmootherRun run_pipeline(const Model& model, const std::vector<Vector>& y, const ApproxRunOptions& opts,
                         std::uint64_t seed) {
  RbpfOptions ro = opts.rbpf;
  ro.N = opts.N;
  SmootherRun run;
  run.filter = rbpf_run(model, y, ro, seed);
  run.trajectories = backward_simulate(run.filter, model, y, opts.M, opts.backward, seed);
  if (opts.smooth)
    for (auto& tr : run.trajectories) smooth_linear(model, tr, y);
  return run;
}

}  // namespace

SmootherRun approx_rbpf_rbps_run(const HierarchicalModel& dynamics, const GeneralModel& gmodel,
                                 const std::vector<Vector>& y, const ApproxRunOptions& opts, std::uint64_t seed) {
  return run_pipeline(linearize_measurement(dynamics, gmodel), y, opts, seed);
}

SmootherRun approx_rbpf_rbps_run(const GeneralModel& gmodel, const std::vector<Vector>& y,
                                 const ApproxRunOptions& opts, std::uint64_t seed) {
  return run_pipeline(approximate_mixed_model(gmodel), y, opts, seed);
}

}  // namespace rbps
