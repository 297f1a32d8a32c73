#include "rbps/backward.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <type_traits>
#include <numbers>

#include "rbps/kalman.hpp"
#include "rbps/random.hpp"

namespace rbps {

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

struct Whitened {
  Matrix c;  // R^-1/2 C
  Vector r;  // R^-1/2 (y - h)
};

Whitened whiten(const LinearMeasurement& meas, const Vector& y) {
  detail::require(meas.h.size() == y.size() && meas.C.rows() == y.size() && meas.R.rows() == y.size(),
                  "backward measurement: dimension mismatch");
  const Matrix lr = chol_pd(meas.R, Errc::RNotPD, "backward measurement: R not PD");
  const auto tri = lr.triangularView<Eigen::Lower>();
  return {tri.solve(meas.C), tri.solve(y - meas.h)};
}

double log_det_from_llt(const Eigen::LLT<Matrix>& llt) {
  double s = 0.0;
  const auto& l = llt.matrixLLT();
  for (Eigen::Index i = 0; i < l.rows(); ++i) s += std::log(l(i, i));
  return 2.0 * s;
}

// Quantities shared by every particle whose noise input gamma is the same:
// S = Omega^ gamma, M = gamma' S + I, W = Omega^ - S M^-1 S'.
struct NoiseStep {
  Matrix s;
  Eigen::LLT<Matrix> llt;
  Matrix w;
  double log_det_m = 0.0;
};

NoiseStep make_noise_step(const Matrix& gamma, const InfoPotential<>& upd) {
  NoiseStep ns;
  ns.s.noalias() = upd.omega * gamma;
  Matrix m = gamma.transpose() * ns.s;
  m.diagonal().array() += 1.0;
  ns.llt.compute(symmetrize(m));
  ns.log_det_m = log_det_from_llt(ns.llt);
  ns.w = upd.omega - ns.s * ns.llt.solve(ns.s.transpose());
  return ns;
}

// lambda and log Z of the mixed prediction; omega is handled by the caller.
double mixed_lambda(const MixedPrecomp& pc, const NoiseStep& ns, const Vector& u_next, const InfoPotential<>& upd,
                    Vector& lambda) {
  const Vector r = pc.lq.triangularView<Eigen::Lower>().solve(u_next - pc.g);
  const Vector f_bar = pc.f + pc.k_gain * r;
  const Vector omega_f = upd.omega * f_bar;
  const Vector eps = upd.lambda - omega_f;
  const Vector a = pc.gamma.transpose() * eps;
  const Vector m_inv_a = ns.llt.solve(a);
  lambda = pc.a_bar.transpose() * (eps - ns.s * m_inv_a);
  lambda.noalias() += pc.bw.transpose() * r;
  const double tau = r.squaredNorm() + f_bar.dot(omega_f) - 2.0 * upd.lambda.dot(f_bar) - a.dot(m_inv_a);
  return -0.5 * pc.log_det_q - 0.5 * ns.log_det_m - 0.5 * tau - 0.5 * double(r.size()) * kLog2Pi;
}

Matrix mixed_omega(const MixedPrecomp& pc, const NoiseStep& ns) {
  Matrix omega = pc.a_bar.transpose() * ns.w * pc.a_bar;
  omega.noalias() += pc.bw.transpose() * pc.bw;
  return symmetrize(omega);
}

InfoPotential<> mixed_step(const MixedPrecomp& pc, const NoiseStep& ns, const Vector& u_next,
                           const InfoPotential<>& upd) {
  InfoPotential<> out;
  out.log_z = mixed_lambda(pc, ns, u_next, upd, out.lambda);
  out.omega = mixed_omega(pc, ns);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Plain form

InfoPotential<> bwd_init(const LinearMeasurement& meas, const Vector& y) {
  const Whitened wh = whiten(meas, y);
  return {symmetrize(wh.c.transpose() * wh.c), wh.c.transpose() * wh.r, 0.0};
}

InfoPotential<> bwd_meas_update(const InfoPotential<>& pred, const LinearMeasurement& meas, const Vector& y) {
  detail::require(meas.C.cols() == pred.dim(), "bwd_meas_update: dimension mismatch");
  const Whitened wh = whiten(meas, y);
  InfoPotential<> out;
  out.omega = symmetrize(pred.omega + wh.c.transpose() * wh.c);
  out.lambda = pred.lambda + wh.c.transpose() * wh.r;
  out.log_z = pred.log_z;
  return out;
}

InfoPotential<> bwd_predict_hier(const LinearDynamics& d, const InfoPotential<>& upd) {
  detail::require(d.A.rows() == upd.dim() && d.F.rows() == upd.dim() && d.f.size() == upd.dim(),
                  "bwd_predict_hier: dimension mismatch");
  const NoiseStep ns = make_noise_step(d.F, upd);
  const Vector eps = upd.lambda - upd.omega * d.f;
  InfoPotential<> out;
  out.omega = symmetrize(d.A.transpose() * ns.w * d.A);
  out.lambda = d.A.transpose() * (eps - ns.s * ns.llt.solve(d.F.transpose() * eps));
  out.log_z = 0.0;
  return out;
}

Matrix decorrelation_projection(const Matrix& G) {
  const Matrix lq = chol_pd(G * G.transpose(), Errc::QNotPD, "decorrelation_projection: Q not PD");
  const Matrix gw = lq.triangularView<Eigen::Lower>().solve(G);
  Matrix pi = -gw.transpose() * gw;
  pi.diagonal().array() += 1.0;
  return pi;
}

MixedPrecomp mixed_precompute(const MixedBlocks& b) {
  MixedPrecomp pc;
  pc.lq = chol_pd(b.G * b.G.transpose(), Errc::QNotPD, "bwd_predict_mixed: Q = G G' not PD");
  pc.log_det_q = 2.0 * pc.lq.diagonal().array().log().sum();
  const auto tri = pc.lq.triangularView<Eigen::Lower>();
  const Matrix gw = tri.solve(b.G);
  pc.g = b.g;
  pc.f = b.f;
  pc.bw = tri.solve(b.B);
  pc.k_gain = b.F * gw.transpose();
  pc.a_bar = b.A - pc.k_gain * pc.bw;
  Matrix pi = -gw.transpose() * gw;
  pi.diagonal().array() += 1.0;
  pc.gamma = b.F * pi;
  return pc;
}

InfoPotential<> bwd_predict_mixed(const MixedPrecomp& pc, const Vector& u_next, const InfoPotential<>& upd) {
  detail::require(pc.a_bar.rows() == upd.dim() && u_next.size() == pc.g.size(), "bwd_predict_mixed: dimension mismatch");
  return mixed_step(pc, make_noise_step(pc.gamma, upd), u_next, upd);
}

InfoPotential<> bwd_predict_mixed(const MixedBlocks& b, const Vector& u_next, const InfoPotential<>& upd) {
  return bwd_predict_mixed(mixed_precompute(b), u_next, upd);
}

// ---------------------------------------------------------------------------
// Square-root form

SqrtInfoPotential<> sqrt_bwd_init(const LinearMeasurement& meas, const Vector& y) {
  const Whitened wh = whiten(meas, y);
  return {qr_upper(wh.c).transpose(), wh.c.transpose() * wh.r, 0.0};
}

SqrtInfoPotential<> sqrt_bwd_meas_update(const SqrtInfoPotential<>& pred, const LinearMeasurement& meas,
                                         const Vector& y) {
  detail::require(meas.C.cols() == pred.dim(), "sqrt_bwd_meas_update: dimension mismatch");
  const Whitened wh = whiten(meas, y);
  SqrtInfoPotential<> out;
  out.sqrt_omega = stacked_sqrt(pred.sqrt_omega.transpose(), wh.c);
  out.lambda = pred.lambda + wh.c.transpose() * wh.r;
  out.log_z = pred.log_z;
  return out;
}

SqrtInfoPotential<> sqrt_bwd_predict_hier(const LinearDynamics& d, const SqrtInfoPotential<>& upd) {
  const Eigen::Index nz = upd.dim();
  const Eigen::Index nv = d.F.cols();
  detail::require(d.A.rows() == nz && d.F.rows() == nz && d.f.size() == nz, "sqrt_bwd_predict_hier: dimension mismatch");
  const Matrix lt = upd.sqrt_omega.transpose();
  Matrix x = Matrix::Zero(nv + nz, nv + nz);
  x.topLeftCorner(nv, nv).setIdentity();
  x.bottomLeftCorner(nz, nv) = lt * d.F;
  x.bottomRightCorner(nz, nz) = lt * d.A;
  const Matrix u = qr_upper(x);
  const Matrix r1 = u.topLeftCorner(nv, nv);
  const Vector eps = upd.lambda - upd.sqrt_omega * (lt * d.f);
  SqrtInfoPotential<> out;
  out.sqrt_omega = u.bottomRightCorner(nz, nz).transpose();
  const Vector x1 = r1.transpose().triangularView<Eigen::Lower>().solve(d.F.transpose() * eps);
  out.lambda = d.A.transpose() * eps - u.topRightCorner(nv, nz).transpose() * x1;
  out.log_z = 0.0;
  return out;
}

SqrtInfoPotential<> sqrt_bwd_predict_mixed(const MixedPrecomp& pc, const Vector& u_next,
                                           const SqrtInfoPotential<>& upd) {
  const Eigen::Index nz = upd.dim();
  const Eigen::Index nv = pc.gamma.cols();
  const Eigen::Index nu = pc.g.size();
  detail::require(pc.a_bar.rows() == nz && u_next.size() == nu, "sqrt_bwd_predict_mixed: dimension mismatch");
  const Matrix lt = upd.sqrt_omega.transpose();
  Matrix x = Matrix::Zero(nv + nz + nu, nv + nz);
  x.topLeftCorner(nv, nv).setIdentity();
  x.block(nv, 0, nz, nv) = lt * pc.gamma;
  x.block(nv, nv, nz, nz) = lt * pc.a_bar;
  x.bottomRightCorner(nu, nz) = pc.bw;
  const Matrix u = qr_upper(x);
  const Matrix r1 = u.topLeftCorner(nv, nv);

  const Vector r = pc.lq.triangularView<Eigen::Lower>().solve(u_next - pc.g);
  const Vector f_bar = pc.f + pc.k_gain * r;
  const Vector lt_f = lt * f_bar;
  const Vector eps = upd.lambda - upd.sqrt_omega * lt_f;
  const Vector w = r1.transpose().triangularView<Eigen::Lower>().solve(pc.gamma.transpose() * eps);

  SqrtInfoPotential<> out;
  out.sqrt_omega = u.block(nv, nv, nz, nz).transpose();
  out.lambda = pc.a_bar.transpose() * eps - u.topRightCorner(nv, nz).transpose() * w + pc.bw.transpose() * r;
  double log_det_m = 0.0;
  for (Eigen::Index i = 0; i < nv; ++i) log_det_m += 2.0 * std::log(r1(i, i));
  const double tau = r.squaredNorm() + lt_f.squaredNorm() - 2.0 * upd.lambda.dot(f_bar) - w.squaredNorm();
  out.log_z = -0.5 * pc.log_det_q - 0.5 * log_det_m - 0.5 * tau - 0.5 * double(nu) * kLog2Pi;
  return out;
}

SqrtInfoPotential<> sqrt_bwd_predict_mixed(const MixedBlocks& b, const Vector& u_next,
                                           const SqrtInfoPotential<>& upd) {
  return sqrt_bwd_predict_mixed(mixed_precompute(b), u_next, upd);
}

// ---------------------------------------------------------------------------
// Weights

double bwd_log_factor(const MomentGaussian<>& filt, const InfoPotential<>& pot) {
  const Matrix& gamma = filt.sqrt_cov;
  const Vector omega_m = pot.omega * filt.mean;
  Matrix lam = gamma.transpose() * pot.omega * gamma;
  lam.diagonal().array() += 1.0;
  Eigen::LLT<Matrix> llt(symmetrize(lam));
  const Vector v = llt.matrixL().solve(gamma.transpose() * (pot.lambda - omega_m));
  const double eta = filt.mean.dot(omega_m) - 2.0 * pot.lambda.dot(filt.mean) - v.squaredNorm();
  return -0.5 * log_det_from_llt(llt) - 0.5 * eta;
}

double bwd_log_factor(const MomentGaussian<>& filt, const SqrtInfoPotential<>& pot) {
  const Eigen::Index n = filt.dim();
  const Matrix lt = pot.sqrt_omega.transpose();
  Matrix x(2 * n, n);
  x.topRows(n).setIdentity();
  x.bottomRows(n) = lt * filt.sqrt_cov;
  const Matrix u = qr_upper(x);  // u' u = Lambda
  const Vector lt_m = lt * filt.mean;
  const Vector resid = pot.lambda - pot.sqrt_omega * lt_m;
  const Vector v = u.transpose().triangularView<Eigen::Lower>().solve(filt.sqrt_cov.transpose() * resid);
  double log_det = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) log_det += 2.0 * std::log(u(i, i));
  const double eta = lt_m.squaredNorm() - 2.0 * pot.lambda.dot(filt.mean) - v.squaredNorm();
  return -0.5 * log_det - 0.5 * eta;
}

std::vector<double> bwd_weights(std::span<const double> w, std::span<const MomentGaussian<>> filt,
                                std::span<const double> log_z, std::span<const InfoPotential<>> pots) {
  const std::size_t n = w.size();
  detail::require(filt.size() == n && (log_z.empty() || log_z.size() == n) && (pots.size() == 1 || pots.size() == n),
                  "bwd_weights: size mismatch");
  std::vector<double> lw(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(w[i] > 0.0)) {
      lw[i] = -std::numeric_limits<double>::infinity();
      continue;
    }
    const InfoPotential<>& p = pots.size() == 1 ? pots[0] : pots[i];
    lw[i] = std::log(w[i]) + (log_z.empty() ? 0.0 : log_z[i]) + bwd_log_factor(filt[i], p);
  }
  return normalize_log_weights<double>(lw);
}

// ---------------------------------------------------------------------------
// Backward simulation

namespace {

template <bool Sqrt>
struct Ops;

template <>
struct Ops<false> {
  using Pot = InfoPotential<>;
  static Pot init(const LinearMeasurement& m, const Vector& y) { return bwd_init(m, y); }
  static Pot update(const Pot& p, const LinearMeasurement& m, const Vector& y) { return bwd_meas_update(p, m, y); }
  static Pot predict_hier(const LinearDynamics& d, const Pot& p) { return bwd_predict_hier(d, p); }
  static Pot predict_mixed(const MixedPrecomp& pc, const Vector& u, const Pot& p) { return bwd_predict_mixed(pc, u, p); }
  static InfoPotential<> plain(const Pot& p) { return p; }
};

template <>
struct Ops<true> {
  using Pot = SqrtInfoPotential<>;
  static Pot init(const LinearMeasurement& m, const Vector& y) { return sqrt_bwd_init(m, y); }
  static Pot update(const Pot& p, const LinearMeasurement& m, const Vector& y) { return sqrt_bwd_meas_update(p, m, y); }
  static Pot predict_hier(const LinearDynamics& d, const Pot& p) { return sqrt_bwd_predict_hier(d, p); }
  static Pot predict_mixed(const MixedPrecomp& pc, const Vector& u, const Pot& p) {
    return sqrt_bwd_predict_mixed(pc, u, p);
  }
  static InfoPotential<> plain(const Pot& p) { return {symmetrize(p.omega()), p.lambda, p.log_z}; }
};

void check_filter(const FilterOutput& filter, const std::vector<Vector>& y, int M, bool mixed) {
  if (M < 1) throw Error(Errc::ConfigError, "backward simulation: M must be >= 1");
  if (filter.T < 1 || static_cast<int>(y.size()) != filter.T)
    throw Error(Errc::DimensionMismatch, "backward simulation: filter length does not match measurements");
  if (filter.mixed != mixed) throw Error(Errc::ModelInvalid, "backward simulation: model flavor differs from the filter");
}

void start_trajectory(BackwardTrajectory& traj, int T, bool mixed, bool record) {
  traj.u.assign(T, Vector());
  traj.index.assign(T, -1);
  traj.predicted.assign(T, InfoPotential<>());
  traj.meas.assign(T, LinearMeasurement());
  if (mixed) traj.blocks.assign(T > 1 ? T - 1 : 0, MixedBlocks());
  if (record) traj.weights.assign(T, {});
}

std::vector<std::vector<MixedPrecomp>> precompute_all(const FilterOutput& filter) {
  std::vector<std::vector<MixedPrecomp>> pc(filter.blocks.size());
  for (std::size_t k = 0; k < filter.blocks.size(); ++k) {
    pc[k].resize(filter.blocks[k].size());
    for (std::size_t i = 0; i < filter.blocks[k].size(); ++i) pc[k][i] = mixed_precompute(filter.blocks[k][i]);
  }
  return pc;
}

template <bool Sqrt, typename SuffixFn>
std::vector<BackwardTrajectory> backward_core(const FilterOutput& filter, const std::vector<Vector>& y, int M,
                                              const BackwardOptions& opts, std::uint64_t seed, SuffixFn&& suffix) {
  using O = Ops<Sqrt>;
  const int T = filter.T;
  const int N = filter.N;
  const std::vector<double> cdf_T = cumulative(filter.weights[T - 1]);
  std::vector<BackwardTrajectory> out(static_cast<std::size_t>(M));
  std::vector<double> lw(N);
  for (int j = 0; j < M; ++j) {
    BackwardTrajectory& traj = out[j];
    start_trajectory(traj, T, filter.mixed, opts.record_weights);
    Rng rng = make_stream(seed, StreamTag::Backward, static_cast<std::uint64_t>(j));
    int J = draw_from_cdf(cdf_T, uniform01(rng));
    traj.u[T - 1] = filter.particles[T - 1][J];
    traj.index[T - 1] = J;
    traj.predicted[T - 1] = InfoPotential<>::flat(filter.n_z);
    traj.meas[T - 1] = filter.meas[T - 1][J];
    if (opts.record_weights) traj.weights[T - 1] = filter.weights[T - 1];
    typename O::Pot upd = O::init(traj.meas[T - 1], y[T - 1]);
    for (int k = T - 2; k >= 0; --k) {
      // suffix fills lw with log w + log Z + log factor and returns the potential of the chosen index.
      auto chosen = suffix(k, traj.u[k + 1], upd, lw);
      const std::vector<double> wb = normalize_log_weights<double>(lw);
      const std::vector<double> cdf = cumulative(wb);
      J = draw_from_cdf(cdf, uniform01(rng));
      traj.u[k] = filter.particles[k][J];
      traj.index[k] = J;
      typename O::Pot pot = chosen(J);
      traj.predicted[k] = O::plain(pot);
      traj.meas[k] = filter.meas[k][J];
      if (filter.mixed) traj.blocks[k] = filter.blocks[k][J];
      if (opts.record_weights) traj.weights[k] = wb;
      upd = O::update(pot, traj.meas[k], y[k]);
    }
  }
  return out;
}

template <bool Sqrt>
std::vector<BackwardTrajectory> backward_hier(const FilterOutput& filter, const HierarchicalModel& model,
                                              const std::vector<Vector>& y, int M, const BackwardOptions& opts,
                                              std::uint64_t seed) {
  using O = Ops<Sqrt>;
  using Pot = typename O::Pot;
  const int N = filter.N;
  auto suffix = [&](int k, const Vector& u_next, const Pot& upd, std::vector<double>& lw) {
    auto pot = std::make_shared<Pot>(O::predict_hier(model.dynamics(k + 2, u_next), upd));
    for (int i = 0; i < N; ++i) {
      const double w = filter.weights[k][i];
      if (!(w > 0.0)) {
        lw[i] = -std::numeric_limits<double>::infinity();
        continue;
      }
      lw[i] = std::log(w) + model.transition_logpdf(k + 1, u_next, filter.particles[k][i]) +
              bwd_log_factor(filter.filtered[k][i], *pot);
    }
    return [pot](int) { return *pot; };
  };
  return backward_core<Sqrt>(filter, y, M, opts, seed, suffix);
}

bool same_precomp(const MixedPrecomp& a, const MixedPrecomp& b) {
  return a.lq == b.lq && a.k_gain == b.k_gain && a.a_bar == b.a_bar && a.gamma == b.gamma;
}

// Per time index: do all particles share the decorrelated dynamics (bw aside), and the filter covariance?
struct SharedStructure {
  std::vector<char> dyn, cov;
};

SharedStructure shared_structure(const FilterOutput& filter, const std::vector<std::vector<MixedPrecomp>>& pcs) {
  SharedStructure ss;
  ss.dyn.assign(pcs.size(), 0);
  ss.cov.assign(filter.T, 0);
  for (std::size_t k = 0; k < pcs.size(); ++k) {
    bool same = filter.shared_noise[k] != 0;
    for (std::size_t i = 1; same && i < pcs[k].size(); ++i) same = same_precomp(pcs[k][0], pcs[k][i]);
    ss.dyn[k] = same;
  }
  for (int k = 0; k < filter.T; ++k) {
    bool same = true;
    for (int i = 1; same && i < filter.N; ++i) same = filter.filtered[k][i].sqrt_cov == filter.filtered[k][0].sqrt_cov;
    ss.cov[k] = same;
  }
  return ss;
}

// Allocation-free variants for the per-particle loop.
struct MixedWorkspace {
  Vector r, f_bar, omega_f, eps, a, m_inv_a, resid, omega_m, v;
  Matrix omega, og, lam;
  Eigen::LLT<Matrix> llt;
};

double mixed_lambda_ws(const MixedPrecomp& pc, const NoiseStep& ns, const Vector& u_next, const InfoPotential<>& upd,
                       MixedWorkspace& ws, Vector& lambda) {
  ws.r = u_next - pc.g;
  pc.lq.triangularView<Eigen::Lower>().solveInPlace(ws.r);
  ws.f_bar = pc.f;
  ws.f_bar.noalias() += pc.k_gain * ws.r;
  ws.omega_f.noalias() = upd.omega * ws.f_bar;
  ws.eps = upd.lambda - ws.omega_f;
  ws.a.noalias() = pc.gamma.transpose() * ws.eps;
  ws.m_inv_a = ws.a;
  ns.llt.solveInPlace(ws.m_inv_a);
  ws.resid = ws.eps;
  ws.resid.noalias() -= ns.s * ws.m_inv_a;
  lambda.noalias() = pc.a_bar.transpose() * ws.resid;
  lambda.noalias() += pc.bw.transpose() * ws.r;
  const double tau = ws.r.squaredNorm() + ws.f_bar.dot(ws.omega_f) - 2.0 * upd.lambda.dot(ws.f_bar) -
                     ws.a.dot(ws.m_inv_a);
  return -0.5 * pc.log_det_q - 0.5 * ns.log_det_m - 0.5 * tau - 0.5 * double(ws.r.size()) * kLog2Pi;
}

// Same value as bwd_log_factor(filt, {omega, lambda}).
double log_factor_ws(const MomentGaussian<>& filt, const Matrix& omega, const Vector& lambda, MixedWorkspace& ws) {
  const Matrix& gamma = filt.sqrt_cov;
  ws.omega_m.noalias() = omega * filt.mean;
  ws.og.noalias() = omega * gamma;
  ws.lam.noalias() = gamma.transpose() * ws.og;
  ws.lam.diagonal().array() += 1.0;
  ws.llt.compute(ws.lam);
  ws.resid = lambda - ws.omega_m;
  ws.v.noalias() = gamma.transpose() * ws.resid;
  ws.llt.matrixL().solveInPlace(ws.v);
  const double eta = filt.mean.dot(ws.omega_m) - 2.0 * lambda.dot(filt.mean) - ws.v.squaredNorm();
  return -0.5 * log_det_from_llt(ws.llt) - 0.5 * eta;
}

template <bool Sqrt>
std::vector<BackwardTrajectory> backward_mixed(const FilterOutput& filter, const std::vector<Vector>& y, int M,
                                               const BackwardOptions& opts, std::uint64_t seed) {
  using O = Ops<Sqrt>;
  using Pot = typename O::Pot;
  const int N = filter.N;
  const auto pcs = precompute_all(filter);
  const SharedStructure ss = shared_structure(filter, pcs);
  const double neg_inf = -std::numeric_limits<double>::infinity();
  auto suffix = [&](int k, const Vector& u_next, const Pot& upd, std::vector<double>& lw) {
    if constexpr (!Sqrt) {
      if (ss.dyn[k]) {
        // a_bar' W a_bar is common to all particles; Omega adds bw' bw per particle.
        const NoiseStep ns = make_noise_step(pcs[k][0].gamma, upd);
        Matrix base = pcs[k][0].a_bar.transpose() * ns.w * pcs[k][0].a_bar;
        base = symmetrize(base);
        bool bw_shared = true;
        for (int i = 1; bw_shared && i < N; ++i) bw_shared = pcs[k][i].bw == pcs[k][0].bw;
        Matrix omega = base;
        if (bw_shared) omega = mixed_omega(pcs[k][0], ns);
        const bool lam_shared = bw_shared && ss.cov[k];
        Eigen::LLT<Matrix> lam_llt;
        double lam_logdet = 0.0;
        const Matrix& gam0 = filter.filtered[k][0].sqrt_cov;
        if (lam_shared) {
          Matrix lam = gam0.transpose() * omega * gam0;
          lam.diagonal().array() += 1.0;
          lam_llt.compute(symmetrize(lam));
          lam_logdet = log_det_from_llt(lam_llt);
        }
        Vector lambda(filter.n_z);
        MixedWorkspace ws;
        for (int i = 0; i < N; ++i) {
          const double w = filter.weights[k][i];
          if (!(w > 0.0)) {
            lw[i] = neg_inf;
            continue;
          }
          const double log_z = mixed_lambda_ws(pcs[k][i], ns, u_next, upd, ws, lambda);
          double factor;
          if (lam_shared) {
            const Vector& m = filter.filtered[k][i].mean;
            ws.omega_m.noalias() = omega * m;
            ws.resid = lambda - ws.omega_m;
            ws.v.noalias() = gam0.transpose() * ws.resid;
            lam_llt.matrixL().solveInPlace(ws.v);
            const double eta = m.dot(ws.omega_m) - 2.0 * lambda.dot(m) - ws.v.squaredNorm();
            factor = -0.5 * lam_logdet - 0.5 * eta;
          } else {
            if (!bw_shared) {
              omega = base;
              omega.noalias() += pcs[k][i].bw.transpose() * pcs[k][i].bw;
            }
            factor = log_factor_ws(filter.filtered[k][i], omega, lambda, ws);
          }
          lw[i] = std::log(w) + log_z + factor;
        }
        return std::function<Pot(int)>([&pcs, k, u_next, upd](int J) { return O::predict_mixed(pcs[k][J], u_next, upd); });
      }
    }
    std::optional<NoiseStep> shared;
    if constexpr (!Sqrt) {
      if (filter.shared_noise[k]) shared.emplace(make_noise_step(pcs[k][0].gamma, upd));
    }
    for (int i = 0; i < N; ++i) {
      const double w = filter.weights[k][i];
      if (!(w > 0.0)) {
        lw[i] = neg_inf;
        continue;
      }
      Pot p;
      if constexpr (!Sqrt) {
        p = shared ? mixed_step(pcs[k][i], *shared, u_next, upd) : O::predict_mixed(pcs[k][i], u_next, upd);
      } else {
        p = O::predict_mixed(pcs[k][i], u_next, upd);
      }
      lw[i] = std::log(w) + p.log_z + bwd_log_factor(filter.filtered[k][i], p);
    }
    return std::function<Pot(int)>([&pcs, k, u_next, upd](int J) { return O::predict_mixed(pcs[k][J], u_next, upd); });
  };
  return backward_core<Sqrt>(filter, y, M, opts, seed, suffix);
}

}  // namespace

std::vector<BackwardTrajectory> backward_simulate(const FilterOutput& filter, const HierarchicalModel& model,
                                                  const std::vector<Vector>& y, int M, const BackwardOptions& opts,
                                                  std::uint64_t seed) {
  check_filter(filter, y, M, false);
  return opts.sqrt ? backward_hier<true>(filter, model, y, M, opts, seed)
                   : backward_hier<false>(filter, model, y, M, opts, seed);
}

std::vector<BackwardTrajectory> backward_simulate(const FilterOutput& filter, const MixedModel&,
                                                  const std::vector<Vector>& y, int M, const BackwardOptions& opts,
                                                  std::uint64_t seed) {
  check_filter(filter, y, M, true);
  return opts.sqrt ? backward_mixed<true>(filter, y, M, opts, seed) : backward_mixed<false>(filter, y, M, opts, seed);
}

// ---------------------------------------------------------------------------
// Linear-state smoothing

namespace {

MomentGaussian<> measure(const MomentGaussian<>& pred, const LinearMeasurement& meas, const Vector& y) {
  return kf_meas_update(pred, meas.h, meas.C, chol_pd(meas.R, Errc::RNotPD, "smooth_linear: R not PD"), y).moment;
}

void check_traj(const BackwardTrajectory& traj, const std::vector<Vector>& y, bool mixed) {
  const std::size_t T = y.size();
  if (traj.u.size() != T || traj.meas.size() != T || traj.predicted.size() != T ||
      (mixed && traj.blocks.size() + 1 != T))
    throw Error(Errc::DimensionMismatch, "smooth_linear: trajectory incomplete");
}

}  // namespace

std::vector<MomentGaussian<>> smooth_linear(const HierarchicalModel& model, BackwardTrajectory& traj,
                                            const std::vector<Vector>& y) {
  check_traj(traj, y, false);
  const int T = static_cast<int>(y.size());
  traj.smoothed.assign(T, MomentGaussian<>());
  MomentGaussian<> filt = model.initial_z;
  for (int k = 0; k < T; ++k) {
    if (k > 0) filt = kf_time_update_hier(filt, model.dynamics(k + 1, traj.u[k]));
    filt = measure(filt, traj.meas[k], y[k]);
    traj.smoothed[k] = fuse_info(filt, traj.predicted[k]);
  }
  return traj.smoothed;
}

std::vector<MomentGaussian<>> smooth_linear(const MixedModel& model, BackwardTrajectory& traj,
                                            const std::vector<Vector>& y) {
  check_traj(traj, y, true);
  const int T = static_cast<int>(y.size());
  traj.smoothed.assign(T, MomentGaussian<>());
  MomentGaussian<> filt = model.initial_z;
  for (int k = 0; k < T; ++k) {
    if (k > 0) filt = kf_time_update_mixed(filt, traj.u[k], traj.blocks[k - 1]);
    filt = measure(filt, traj.meas[k], y[k]);
    traj.smoothed[k] = fuse_info(filt, traj.predicted[k]);
  }
  return traj.smoothed;
}

// ---------------------------------------------------------------------------
// MCMC backward simulation

namespace {

std::vector<std::vector<double>> prefix_cdfs(const FilterOutput& filter, const PrefixWeightsFn& w_tilde) {
  std::vector<std::vector<double>> out(filter.T);
  for (int k = 0; k < filter.T; ++k) out[k] = cumulative(w_tilde ? w_tilde(filter, k) : filter.weights[k]);
  return out;
}

double log_prefix_weight(const std::vector<double>& cdf, int i) {
  const double w = (i == 0 ? cdf[0] : cdf[i] - cdf[i - 1]) / cdf.back();
  return w > 0.0 ? std::log(w) : -std::numeric_limits<double>::infinity();
}

// Everything the chain needs about a candidate (prefix, u_k).
template <typename Pot>
struct Eval {
  double log_target = -std::numeric_limits<double>::infinity();
  LinearMeasurement meas;
  MixedBlocks blocks;
  Pot pot;
};

struct CandidateFilter {
  double log_prefix = 0.0;  // log w_{k-1}^i + log p(u_k | prefix, y_{1:k-1})
  MomentGaussian<> filt;
  double log_lik = 0.0;
  LinearMeasurement meas;
};

CandidateFilter candidate_filter(const FilterOutput& filter, const MeasurementFn& measurement, bool linearized,
                                 const InitialU& initial_u, const MomentGaussian<>& initial_z, int k,
                                 const McmcCandidate& c, const Vector& y_k,
                                 const std::function<MomentGaussian<>(const MomentGaussian<>&, double&)>& step) {
  CandidateFilter cf;
  MomentGaussian<> pred;
  if (k == 0) {
    cf.log_prefix = initial_u.logpdf(c.u);
    pred = initial_z;
  } else {
    const double w = filter.weights[k - 1][c.prefix];
    cf.log_prefix = w > 0.0 ? std::log(w) : -std::numeric_limits<double>::infinity();
    double log_pu = 0.0;
    pred = step(filter.filtered[k - 1][c.prefix], log_pu);
    cf.log_prefix += log_pu;
  }
  const LinearMeasurement meas = measurement(k + 1, c.u, pred.mean);
  KfUpdate upd = kf_meas_update(pred, meas.h, meas.C, chol_pd(meas.R, Errc::RNotPD, "mcmc: R not PD"), y_k);
  cf.log_lik = upd.log_lik;
  cf.meas = linearized ? measurement(k + 1, c.u, upd.moment.mean) : meas;
  cf.filt = std::move(upd.moment);
  return cf;
}

template <bool Sqrt>
Eval<typename Ops<Sqrt>::Pot> eval_hier(const FilterOutput& filter, const HierarchicalModel& model,
                                        const std::vector<Vector>& y, int k, const Vector& u_next,
                                        const typename Ops<Sqrt>::Pot& shared_pot, const McmcCandidate& c) {
  auto step = [&](const MomentGaussian<>& parent, double& log_pu) {
    log_pu = model.transition_logpdf(k, c.u, filter.particles[k - 1][c.prefix]);
    return kf_time_update_hier(parent, model.dynamics(k + 1, c.u));
  };
  const CandidateFilter cf = candidate_filter(filter, model.measurement, model.linearized_measurement, model.initial_u,
                                              model.initial_z, k, c, y[k], step);
  Eval<typename Ops<Sqrt>::Pot> ev;
  ev.meas = cf.meas;
  ev.pot = shared_pot;
  ev.log_target = cf.log_prefix + cf.log_lik + model.transition_logpdf(k + 1, u_next, c.u) +
                  bwd_log_factor(cf.filt, shared_pot);
  return ev;
}

template <bool Sqrt>
Eval<typename Ops<Sqrt>::Pot> eval_mixed(const FilterOutput& filter, const MixedModel& model,
                                         const std::vector<Vector>& y, int k, const Vector& u_next,
                                         const typename Ops<Sqrt>::Pot& upd_next, const McmcCandidate& c) {
  auto step = [&](const MomentGaussian<>& parent, double& log_pu) {
    return kf_time_update_mixed(parent, c.u, filter.blocks[k - 1][c.prefix], &log_pu);
  };
  const CandidateFilter cf = candidate_filter(filter, model.measurement, model.linearized_measurement, model.initial_u,
                                              model.initial_z, k, c, y[k], step);
  Eval<typename Ops<Sqrt>::Pot> ev;
  ev.meas = cf.meas;
  ev.blocks = model.dynamics(k + 1, c.u, cf.filt.mean);
  ev.pot = Ops<Sqrt>::predict_mixed(mixed_precompute(ev.blocks), u_next, upd_next);
  ev.log_target = cf.log_prefix + cf.log_lik + ev.pot.log_z + bwd_log_factor(cf.filt, ev.pot);
  return ev;
}

template <bool Sqrt, typename Model>
std::vector<BackwardTrajectory> mcmc_core(const FilterOutput& filter, const Model& model, const std::vector<Vector>& y,
                                          int M, const McmcOptions& opts, const BackwardProposal& q,
                                          std::uint64_t seed, McmcStats* stats) {
  using O = Ops<Sqrt>;
  using Pot = typename O::Pot;
  constexpr bool kMixed = std::is_same_v<Model, MixedModel>;
  const int T = filter.T;
  const std::vector<double> cdf_T = cumulative(filter.weights[T - 1]);
  std::vector<BackwardTrajectory> out(static_cast<std::size_t>(M));
  McmcStats local;
  for (int j = 0; j < M; ++j) {
    BackwardTrajectory& traj = out[j];
    start_trajectory(traj, T, kMixed, false);
    Rng rng = make_stream(seed, StreamTag::Mcmc, static_cast<std::uint64_t>(j));
    int particle = draw_from_cdf(cdf_T, uniform01(rng));
    traj.u[T - 1] = filter.particles[T - 1][particle];
    traj.index[T - 1] = particle;
    traj.predicted[T - 1] = InfoPotential<>::flat(filter.n_z);
    traj.meas[T - 1] = filter.meas[T - 1][particle];
    Pot upd = O::init(traj.meas[T - 1], y[T - 1]);

    for (int k = T - 2; k >= 0; --k) {
      const Vector& u_next = traj.u[k + 1];
      const InfoPotential<> upd_plain = O::plain(upd);
      const McmcContext ctx{&filter, k, &u_next, &upd_plain};
      Pot shared_pot{};
      if constexpr (!kMixed) shared_pot = O::predict_hier(model.dynamics(k + 2, u_next), upd);
      auto eval = [&](const McmcCandidate& c) {
        if constexpr (kMixed)
          return eval_mixed<Sqrt>(filter, model, y, k, u_next, upd, c);
        else
          return eval_hier<Sqrt>(filter, model, y, k, u_next, shared_pot, c);
      };

      // Start from the particle block the current state descends from.
      McmcCandidate cur{k > 0 ? filter.ancestors[k][particle] : -1, filter.particles[k][particle]};
      int cur_index = particle;
      auto ev = eval(cur);
      double cur_q = q.log_density(ctx, cur);
      for (int r = 0; r < opts.R; ++r) {
        McmcCandidate prop = q.sample(ctx, rng);
        auto ev_prop = eval(prop);
        const double prop_q = q.log_density(ctx, prop);
        const double log_alpha = (ev_prop.log_target - prop_q) - (ev.log_target - cur_q);
        ++local.proposed;
        if (std::isfinite(ev_prop.log_target) && std::log(uniform01(rng)) < log_alpha) {
          ++local.accepted;
          cur = std::move(prop);
          ev = std::move(ev_prop);
          cur_q = prop_q;
          cur_index = -1;
        }
      }
      traj.u[k] = cur.u;
      traj.index[k] = cur_index;
      traj.predicted[k] = O::plain(ev.pot);
      traj.meas[k] = ev.meas;
      if constexpr (kMixed) traj.blocks[k] = ev.blocks;
      upd = O::update(ev.pot, ev.meas, y[k]);
      particle = cur.prefix;
    }
  }
  if (stats) {
    stats->proposed += local.proposed;
    stats->accepted += local.accepted;
  }
  return out;
}

}  // namespace

BackwardProposal bootstrap_proposal(const HierarchicalModel& model, const FilterOutput& filter,
                                    PrefixWeightsFn w_tilde) {
  auto cdfs = std::make_shared<std::vector<std::vector<double>>>(prefix_cdfs(filter, w_tilde));
  BackwardProposal q;
  q.sample = [model, cdfs](const McmcContext& ctx, Rng& rng) {
    McmcCandidate c;
    if (ctx.k == 0) {
      c.u = model.initial_u.sample(rng);
      return c;
    }
    c.prefix = draw_from_cdf((*cdfs)[ctx.k - 1], uniform01(rng));
    c.u = model.sample_transition(ctx.k, ctx.filter->particles[ctx.k - 1][c.prefix], rng);
    return c;
  };
  q.log_density = [model, cdfs](const McmcContext& ctx, const McmcCandidate& c) {
    if (ctx.k == 0) return model.initial_u.logpdf(c.u);
    return log_prefix_weight((*cdfs)[ctx.k - 1], c.prefix) +
           model.transition_logpdf(ctx.k, c.u, ctx.filter->particles[ctx.k - 1][c.prefix]);
  };
  return q;
}

BackwardProposal bootstrap_proposal(const MixedModel& model, const FilterOutput& filter, PrefixWeightsFn w_tilde) {
  auto cdfs = std::make_shared<std::vector<std::vector<double>>>(prefix_cdfs(filter, w_tilde));
  BackwardProposal q;
  q.sample = [model, cdfs](const McmcContext& ctx, Rng& rng) {
    McmcCandidate c;
    if (ctx.k == 0) {
      c.u = model.initial_u.sample(rng);
      return c;
    }
    c.prefix = draw_from_cdf((*cdfs)[ctx.k - 1], uniform01(rng));
    const FilterOutput& f = *ctx.filter;
    c.u = sample(mixed_u_predictive(f.filtered[ctx.k - 1][c.prefix], f.blocks[ctx.k - 1][c.prefix]), rng);
    return c;
  };
  q.log_density = [model, cdfs](const McmcContext& ctx, const McmcCandidate& c) {
    if (ctx.k == 0) return model.initial_u.logpdf(c.u);
    const FilterOutput& f = *ctx.filter;
    const MomentGaussian<> pu = mixed_u_predictive(f.filtered[ctx.k - 1][c.prefix], f.blocks[ctx.k - 1][c.prefix]);
    return log_prefix_weight((*cdfs)[ctx.k - 1], c.prefix) + log_mvn_pdf(c.u, pu.mean, pu.sqrt_cov);
  };
  return q;
}

double mcmc_log_target(const FilterOutput& filter, const HierarchicalModel& model, const std::vector<Vector>& y,
                       const McmcContext& ctx, const McmcCandidate& cand) {
  const InfoPotential<> pot = bwd_predict_hier(model.dynamics(ctx.k + 2, *ctx.u_next), *ctx.next_potential);
  return eval_hier<false>(filter, model, y, ctx.k, *ctx.u_next, pot, cand).log_target;
}

double mcmc_log_target(const FilterOutput& filter, const MixedModel& model, const std::vector<Vector>& y,
                       const McmcContext& ctx, const McmcCandidate& cand) {
  return eval_mixed<false>(filter, model, y, ctx.k, *ctx.u_next, *ctx.next_potential, cand).log_target;
}

std::vector<BackwardTrajectory> mcmc_backward_simulate(const FilterOutput& filter, const HierarchicalModel& model,
                                                       const std::vector<Vector>& y, int M, const McmcOptions& opts,
                                                       const std::optional<BackwardProposal>& proposal,
                                                       std::uint64_t seed, McmcStats* stats) {
  check_filter(filter, y, M, false);
  if (opts.R < 0) throw Error(Errc::ConfigError, "mcmc_backward_simulate: R must be >= 0");
  const BackwardProposal q = proposal ? *proposal : bootstrap_proposal(model, filter);
  return opts.sqrt ? mcmc_core<true>(filter, model, y, M, opts, q, seed, stats)
                   : mcmc_core<false>(filter, model, y, M, opts, q, seed, stats);
}

std::vector<BackwardTrajectory> mcmc_backward_simulate(const FilterOutput& filter, const MixedModel& model,
                                                       const std::vector<Vector>& y, int M, const McmcOptions& opts,
                                                       const std::optional<BackwardProposal>& proposal,
                                                       std::uint64_t seed, McmcStats* stats) {
  check_filter(filter, y, M, true);
  if (opts.R < 0) throw Error(Errc::ConfigError, "mcmc_backward_simulate: R must be >= 0");
  const BackwardProposal q = proposal ? *proposal : bootstrap_proposal(model, filter);
  return opts.sqrt ? mcmc_core<true>(filter, model, y, M, opts, q, seed, stats)
                   : mcmc_core<false>(filter, model, y, M, opts, q, seed, stats);
}

}  // namespace rbps
