#include "rbps/baselines.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "rbps/kalman.hpp"
#include "rbps/random.hpp"

namespace rbps {

// ---------------------------------------------------------------------------
// Constrained RTS, written in plain covariance form.

namespace {

struct Moments {
  Vector m;
  Matrix P;
};

Matrix solve_psd(const Matrix& s, const Matrix& rhs) {
  Eigen::LLT<Matrix> llt(s);
  if (llt.info() == Eigen::Success && (llt.matrixLLT().diagonal().array() > 0.0).all()) return llt.solve(rhs);
  return s.completeOrthogonalDecomposition().solve(rhs);
}

// Joseph-form update for y = h + C z + e, e ~ N(0, R).
Moments cov_update(const Moments& p, const Vector& h, const Matrix& C, const Matrix& R, const Vector& y) {
  const Matrix s = symmetrize(C * p.P * C.transpose() + R);
  const Matrix k = solve_psd(s, C * p.P).transpose();
  const Matrix ikc = Matrix::Identity(p.P.rows(), p.P.rows()) - k * C;
  return {p.m + k * (y - h - C * p.m), symmetrize(ikc * p.P * ikc.transpose() + k * R * k.transpose())};
}

struct RtsLink {
  Moments cond;   // moment of z_k used by the gain (after conditioning on u_{k+1} for mixed)
  Matrix trans;   // z_k -> z_{k+1} transition
  Moments pred;   // predicted moment of z_{k+1}
};

std::vector<MomentGaussian<>> rts_backward(std::vector<Moments> filt, const std::vector<RtsLink>& links) {
  const int T = static_cast<int>(filt.size());
  std::vector<MomentGaussian<>> out(T);
  Moments sm = filt[T - 1];
  out[T - 1] = {sm.m, chol_psd(sm.P)};
  for (int k = T - 2; k >= 0; --k) {
    const RtsLink& l = links[k];
    const Matrix g = solve_psd(l.pred.P, l.trans * l.cond.P).transpose();
    Moments s;
    s.m = l.cond.m + g * (sm.m - l.pred.m);
    s.P = symmetrize(l.cond.P + g * (sm.P - l.pred.P) * g.transpose());
    out[k] = {s.m, chol_psd(s.P)};
    sm = std::move(s);
  }
  return out;
}

void check_path(const std::vector<Vector>& u_path, const std::vector<Vector>& y) {
  if (u_path.empty() || u_path.size() != y.size())
    throw Error(Errc::DimensionMismatch, "constrained_rts: u-path and measurement lengths differ");
}

}  // namespace

std::vector<MomentGaussian<>> constrained_rts(const HierarchicalModel& model, const std::vector<Vector>& u_path,
                                              const std::vector<Vector>& y) {
  check_path(u_path, y);
  const int T = static_cast<int>(y.size());
  std::vector<Moments> filt(T);
  std::vector<RtsLink> links(T > 0 ? T - 1 : 0);
  Moments pred{model.initial_z.mean, model.initial_z.cov()};
  for (int k = 0; k < T; ++k) {
    if (k > 0) {
      const LinearDynamics d = model.dynamics(k + 1, u_path[k]);
      pred = {d.f + d.A * filt[k - 1].m, symmetrize(d.A * filt[k - 1].P * d.A.transpose() + d.F * d.F.transpose())};
      links[k - 1] = {filt[k - 1], d.A, pred};
    }
    const LinearMeasurement meas = model.measurement(k + 1, u_path[k], pred.m);
    filt[k] = cov_update(pred, meas.h, meas.C, meas.R, y[k]);
  }
  return rts_backward(std::move(filt), links);
}

std::vector<MomentGaussian<>> constrained_rts(const MixedModel& model, const std::vector<Vector>& u_path,
                                              const std::vector<Vector>& y) {
  check_path(u_path, y);
  const int T = static_cast<int>(y.size());
  std::vector<Moments> filt(T);
  std::vector<RtsLink> links(T > 0 ? T - 1 : 0);
  Moments pred{model.initial_z.mean, model.initial_z.cov()};
  for (int k = 0; k < T; ++k) {
    if (k > 0) {
      const MixedBlocks b = model.dynamics(k, u_path[k - 1], filt[k - 1].m);
      const Matrix q = b.G * b.G.transpose();
      const Moments cond = cov_update(filt[k - 1], b.g, b.B, q, u_path[k]);
      const Matrix fg = b.F * b.G.transpose();
      const Matrix kq = solve_psd(q, fg.transpose()).transpose();  // F G' Q^-1
      const Matrix a_bar = b.A - kq * b.B;
      const Vector f_bar = b.f + kq * (u_path[k] - b.g);
      const Matrix noise = symmetrize(b.F * b.F.transpose() - kq * fg.transpose());
      pred = {f_bar + a_bar * cond.m, symmetrize(a_bar * cond.P * a_bar.transpose() + noise)};
      links[k - 1] = {cond, a_bar, pred};
    }
    const LinearMeasurement meas = model.measurement(k + 1, u_path[k], pred.m);
    filt[k] = cov_update(pred, meas.h, meas.C, meas.R, y[k]);
  }
  return rts_backward(std::move(filt), links);
}

// ---------------------------------------------------------------------------
// FFBS

namespace {

struct JointParticles {
  int T = 0, N = 0;
  std::vector<std::vector<Vector>> u, z;
  std::vector<std::vector<double>> w;
};

void joint_allocate(JointParticles& jp, int T, int N) {
  jp.T = T;
  jp.N = N;
  jp.u.assign(T, std::vector<Vector>(N));
  jp.z.assign(T, std::vector<Vector>(N));
  jp.w.assign(T, std::vector<double>(N));
}

double meas_loglik(const MeasurementFn& measurement, int t, const Vector& u, const Vector& z, const Vector& y) {
  const LinearMeasurement m = measurement(t, u, z);
  return log_mvn_pdf(y, Vector(m.h + m.C * z), chol_pd(m.R, Errc::RNotPD, "ffbs: R not PD"));
}

std::vector<int> joint_parents(const JointParticles& jp, const RbpfOptions& opts, int k, std::uint64_t seed,
                               std::vector<double>& base) {
  const int N = jp.N;
  const auto& w = jp.w[k - 1];
  const bool resample = opts.resample == ResamplePolicy::Always ||
                        (opts.resample == ResamplePolicy::Adaptive && ess(w) < opts.ess_fraction * N);
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
  return idx;
}

template <typename LogTrans>
std::vector<SmoothedPath> joint_backward(const JointParticles& jp, int M, std::uint64_t seed, LogTrans&& log_trans) {
  const int T = jp.T;
  const int N = jp.N;
  const auto cdf_T = cumulative(jp.w[T - 1]);
  std::vector<SmoothedPath> out(M);
  std::vector<double> lw(N);
  for (int j = 0; j < M; ++j) {
    Rng rng = make_stream(seed, StreamTag::Backward, static_cast<std::uint64_t>(j));
    SmoothedPath& p = out[j];
    p.u.resize(T);
    p.z.resize(T);
    p.index.resize(T);
    int J = draw_from_cdf(cdf_T, uniform01(rng));
    auto set = [&](int k) {
      p.u[k] = jp.u[k][J];
      p.z[k] = {jp.z[k][J], Matrix::Zero(jp.z[k][J].size(), jp.z[k][J].size())};
      p.index[k] = J;
    };
    set(T - 1);
    for (int k = T - 2; k >= 0; --k) {
      log_trans(k, p.u[k + 1], p.z[k + 1].mean, lw);
      const auto wb = normalize_log_weights<double>(lw);
      J = draw_from_cdf(cumulative(wb), uniform01(rng));
      set(k);
    }
  }
  return out;
}

}  // namespace

std::vector<SmoothedPath> ffbs_run(const MixedModel& model, const std::vector<Vector>& y, const RbpfOptions& opts,
                                   int M, std::uint64_t seed) {
  require_valid(model);
  if (opts.N < 1 || M < 1) throw Error(Errc::ConfigError, "ffbs_run: N and M must be >= 1");
  const int T = static_cast<int>(y.size());
  const int N = opts.N;
  JointParticles jp;
  joint_allocate(jp, T, N);
  std::vector<std::vector<MixedBlocks>> blocks(T, std::vector<MixedBlocks>(N));
  std::vector<std::vector<Matrix>> noise_sqrt(T, std::vector<Matrix>(N));

  std::vector<double> logw(N), base;
  for (int i = 0; i < N; ++i) {
    Rng rng = make_stream(seed, StreamTag::Propagate, 0, static_cast<std::uint64_t>(i));
    jp.u[0][i] = model.initial_u.sample(rng);
    jp.z[0][i] = sample(model.initial_z, rng);
    logw[i] = meas_loglik(model.measurement, 1, jp.u[0][i], jp.z[0][i], y[0]);
  }
  jp.w[0] = normalize_log_weights<double>(logw);
  for (int k = 1; k < T; ++k) {
    for (int i = 0; i < N; ++i) {
      blocks[k - 1][i] = model.dynamics(k, jp.u[k - 1][i], jp.z[k - 1][i]);
      const MixedBlocks& b = blocks[k - 1][i];
      Matrix noise(b.G.rows() + b.F.rows(), b.G.cols());
      noise << b.G, b.F;
      if (i > 0 && (noise.array() == (Matrix(blocks[k - 1][0].G.rows() + blocks[k - 1][0].F.rows(), noise.cols())
                                          << blocks[k - 1][0].G, blocks[k - 1][0].F)
                                             .finished()
                                             .array())
                       .all()) {
        noise_sqrt[k - 1][i] = noise_sqrt[k - 1][0];
      } else {
        noise_sqrt[k - 1][i] =
            chol_pd(noise * noise.transpose(), Errc::ModelInvalid, "ffbs: joint process noise covariance not PD");
      }
    }
    const std::vector<int> idx = joint_parents(jp, opts, k, seed, base);
    for (int i = 0; i < N; ++i) {
      const int a = idx[i];
      Rng rng = make_stream(seed, StreamTag::Propagate, static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(i));
      const MixedBlocks& b = blocks[k - 1][a];
      const Vector& z = jp.z[k - 1][a];
      const Vector v = standard_normal_vector(b.G.cols(), rng);
      jp.u[k][i] = b.g + b.B * z + b.G * v;
      jp.z[k][i] = b.f + b.A * z + b.F * v;
      logw[i] = base[i] + meas_loglik(model.measurement, k + 1, jp.u[k][i], jp.z[k][i], y[k]);
    }
    jp.w[k] = normalize_log_weights<double>(logw);
  }

  const Eigen::Index nu = model.n_u;
  auto log_trans = [&](int k, const Vector& u_next, const Vector& z_next, std::vector<double>& lw) {
    Vector x(nu + z_next.size());
    x << u_next, z_next;
    for (int i = 0; i < N; ++i) {
      if (!(jp.w[k][i] > 0.0)) {
        lw[i] = -std::numeric_limits<double>::infinity();
        continue;
      }
      const MixedBlocks& b = blocks[k][i];
      const Vector& z = jp.z[k][i];
      Vector mean(x.size());
      mean << b.g + b.B * z, b.f + b.A * z;
      lw[i] = std::log(jp.w[k][i]) + log_mvn_pdf(x, mean, noise_sqrt[k][i]);
    }
  };
  return joint_backward(jp, M, seed, log_trans);
}

std::vector<SmoothedPath> ffbs_run(const HierarchicalModel& model, const std::vector<Vector>& y,
                                   const RbpfOptions& opts, int M, std::uint64_t seed) {
  require_valid(model);
  if (model.linearized_measurement)
    throw Error(Errc::ModelInvalid, "ffbs_run: needs an exact measurement model");
  if (opts.N < 1 || M < 1) throw Error(Errc::ConfigError, "ffbs_run: N and M must be >= 1");
  const int T = static_cast<int>(y.size());
  const int N = opts.N;
  JointParticles jp;
  joint_allocate(jp, T, N);

  std::vector<double> logw(N), base;
  for (int i = 0; i < N; ++i) {
    Rng rng = make_stream(seed, StreamTag::Propagate, 0, static_cast<std::uint64_t>(i));
    jp.u[0][i] = model.initial_u.sample(rng);
    jp.z[0][i] = sample(model.initial_z, rng);
    logw[i] = meas_loglik(model.measurement, 1, jp.u[0][i], jp.z[0][i], y[0]);
  }
  jp.w[0] = normalize_log_weights<double>(logw);
  for (int k = 1; k < T; ++k) {
    const std::vector<int> idx = joint_parents(jp, opts, k, seed, base);
    for (int i = 0; i < N; ++i) {
      const int a = idx[i];
      Rng rng = make_stream(seed, StreamTag::Propagate, static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(i));
      jp.u[k][i] = model.sample_transition(k, jp.u[k - 1][a], rng);
      const LinearDynamics d = model.dynamics(k + 1, jp.u[k][i]);
      jp.z[k][i] = d.f + d.A * jp.z[k - 1][a] + d.F * standard_normal_vector(d.F.cols(), rng);
      logw[i] = base[i] + meas_loglik(model.measurement, k + 1, jp.u[k][i], jp.z[k][i], y[k]);
    }
    jp.w[k] = normalize_log_weights<double>(logw);
  }

  auto log_trans = [&](int k, const Vector& u_next, const Vector& z_next, std::vector<double>& lw) {
    const LinearDynamics d = model.dynamics(k + 2, u_next);
    const Matrix lf = chol_pd(d.F * d.F.transpose(), Errc::ModelInvalid,
                              "ffbs: state process noise F F' is rank deficient; FFBS needs a full-rank joint noise");
    for (int i = 0; i < N; ++i) {
      if (!(jp.w[k][i] > 0.0)) {
        lw[i] = -std::numeric_limits<double>::infinity();
        continue;
      }
      lw[i] = std::log(jp.w[k][i]) + model.transition_logpdf(k + 1, u_next, jp.u[k][i]) +
              log_mvn_pdf(z_next, Vector(d.f + d.A * jp.z[k][i]), lf);
    }
  };
  return joint_backward(jp, M, seed, log_trans);
}

// ---------------------------------------------------------------------------
// RBFS

namespace {

template <typename Model>
std::vector<SmoothedPath> rbfs_impl(const FilterOutput& filter, const Model& model, const std::vector<Vector>& y,
                                    int M, std::uint64_t seed) {
  if (M < 1) throw Error(Errc::ConfigError, "rbfs_run: M must be >= 1");
  const int T = filter.T;
  Rng rng = make_stream(seed, StreamTag::Backward, 0x4b17);
  const std::vector<int> finals = systematic_resample(filter.weights[T - 1], M, uniform01(rng));
  std::map<int, SmoothedPath> cache;
  std::vector<SmoothedPath> out;
  out.reserve(M);
  for (int J : finals) {
    auto it = cache.find(J);
    if (it == cache.end()) {
      SmoothedPath p;
      p.index = ancestral_indices(filter, T - 1, J);
      p.u = ancestral_path(filter, T - 1, J);
      p.z = constrained_rts(model, p.u, y);
      it = cache.emplace(J, std::move(p)).first;
    }
    out.push_back(it->second);
  }
  return out;
}

}  // namespace

std::vector<SmoothedPath> rbfs_run(const FilterOutput& filter, const HierarchicalModel& model,
                                   const std::vector<Vector>& y, int M, std::uint64_t seed) {
  return rbfs_impl(filter, model, y, M, seed);
}

std::vector<SmoothedPath> rbfs_run(const FilterOutput& filter, const MixedModel& model, const std::vector<Vector>& y,
                                   int M, std::uint64_t seed) {
  return rbfs_impl(filter, model, y, M, seed);
}

// ---------------------------------------------------------------------------
// RB-FFJBS

namespace {

// Weight and conditional for one particle: z_{t+1}-observation x = c + H z_t + noise, noise factor lv.
struct JointLink {
  Vector c;
  Matrix H;
  Matrix lv;  // lower factor of the joint noise covariance (may be singular)
};

double link_loglik(const MomentGaussian<>& filt, const JointLink& l, const Vector& x) {
  const Vector mean = l.c + l.H * filt.mean;
  const Matrix s_sqrt = stacked_sqrt(filt.sqrt_cov.transpose() * l.H.transpose(), l.lv.transpose());
  return log_mvn_pdf(x, mean, s_sqrt);
}

// log_term(k, i, u_next, x): log p(u_next, z_next | particle i) with z_t marginalized.
template <typename Model, typename LinkFn, typename LogTerm>
std::vector<SmoothedPath> rbffjbs_impl(const FilterOutput& filter, const Model& model, const std::vector<Vector>& y,
                                       int M, std::uint64_t seed, LinkFn&& link, LogTerm&& log_term) {
  if (M < 1) throw Error(Errc::ConfigError, "rbffjbs_run: M must be >= 1");
  const int T = filter.T;
  const int N = filter.N;
  const auto cdf_T = cumulative(filter.weights[T - 1]);
  std::vector<SmoothedPath> out(M);
  std::vector<double> lw(N);
  for (int j = 0; j < M; ++j) {
    Rng rng = make_stream(seed, StreamTag::Backward, static_cast<std::uint64_t>(j));
    SmoothedPath& p = out[j];
    p.u.resize(T);
    p.index.resize(T);
    int J = draw_from_cdf(cdf_T, uniform01(rng));
    p.u[T - 1] = filter.particles[T - 1][J];
    p.index[T - 1] = J;
    Vector z_next = sample(filter.filtered[T - 1][J], rng);
    for (int k = T - 2; k >= 0; --k) {
      const Vector& u_next = p.u[k + 1];
      for (int i = 0; i < N; ++i) {
        if (!(filter.weights[k][i] > 0.0)) {
          lw[i] = -std::numeric_limits<double>::infinity();
          continue;
        }
        lw[i] = std::log(filter.weights[k][i]) + log_term(k, i, u_next, z_next);
      }
      const auto wb = normalize_log_weights<double>(lw);
      J = draw_from_cdf(cumulative(wb), uniform01(rng));
      p.u[k] = filter.particles[k][J];
      p.index[k] = J;
      const JointLink l = link(k, J, u_next);
      Vector x(l.c.size());
      if (l.c.size() == z_next.size())
        x = z_next;
      else
        x << u_next, z_next;
      const KfUpdate cond = kf_meas_update(filter.filtered[k][J], l.c, l.H, l.lv, x);
      z_next = sample(cond.moment, rng);
    }
    p.z = constrained_rts(model, p.u, y);
  }
  return out;
}

}  // namespace

std::vector<SmoothedPath> rbffjbs_run(const FilterOutput& filter, const HierarchicalModel& model,
                                      const std::vector<Vector>& y, int M, std::uint64_t seed) {
  if (filter.mixed) throw Error(Errc::ModelInvalid, "rbffjbs_run: filter flavor differs from the model");
  // The z-link depends on u_{t+1} only; cache it per backward step.
  int cached_k = -1;
  const Vector* cached_u = nullptr;
  JointLink cached;
  auto link = [&](int k, int, const Vector& u_next) {
    if (k != cached_k || cached_u != &u_next) {
      const LinearDynamics d = model.dynamics(k + 2, u_next);
      cached = {d.f, d.A, qr_upper(d.F.transpose()).transpose()};
      cached_k = k;
      cached_u = &u_next;
    }
    return cached;
  };
  auto log_term = [&](int k, int i, const Vector& u_next, const Vector& z_next) {
    return model.transition_logpdf(k + 1, u_next, filter.particles[k][i]) +
           link_loglik(filter.filtered[k][i], link(k, i, u_next), z_next);
  };
  return rbffjbs_impl(filter, model, y, M, seed, link, log_term);
}

std::vector<SmoothedPath> rbffjbs_run(const FilterOutput& filter, const MixedModel& model,
                                      const std::vector<Vector>& y, int M, std::uint64_t seed) {
  if (!filter.mixed) throw Error(Errc::ModelInvalid, "rbffjbs_run: filter flavor differs from the model");
  // Per-(t, i) joint links [g; f], [B; A] and the factor of [G; F][G; F]'.
  std::vector<std::vector<JointLink>> links(filter.blocks.size());
  for (std::size_t k = 0; k < filter.blocks.size(); ++k) {
    links[k].resize(filter.blocks[k].size());
    for (std::size_t i = 0; i < filter.blocks[k].size(); ++i) {
      const MixedBlocks& b = filter.blocks[k][i];
      JointLink& l = links[k][i];
      l.c.resize(b.g.size() + b.f.size());
      l.c << b.g, b.f;
      l.H.resize(l.c.size(), b.A.cols());
      l.H << b.B, b.A;
      Matrix noise(l.c.size(), b.G.cols());
      noise << b.G, b.F;
      l.lv = qr_upper(noise.transpose()).transpose();
    }
  }
  // The predictive of (u_{t+1}, z_{t+1}) given particle i does not depend on the trajectory.
  std::vector<std::vector<MomentGaussian<>>> pred(links.size());
  for (std::size_t k = 0; k < links.size(); ++k) {
    pred[k].resize(links[k].size());
    for (std::size_t i = 0; i < links[k].size(); ++i) {
      const JointLink& l = links[k][i];
      const MomentGaussian<>& f = filter.filtered[k][i];
      const Matrix hg = l.H * f.sqrt_cov;
      Eigen::LLT<Matrix> llt(symmetrize(hg * hg.transpose() + l.lv * l.lv.transpose()));
      Matrix ls;
      if (llt.info() == Eigen::Success && (llt.matrixLLT().diagonal().array() > 0.0).all())
        ls = llt.matrixL();
      else
        ls = stacked_sqrt(hg.transpose(), l.lv.transpose());
      pred[k][i] = {l.c + l.H * f.mean, ls};
    }
  }
  auto link = [&](int k, int i, const Vector&) -> const JointLink& { return links[k][i]; };
  Vector x(filter.n_u + filter.n_z);
  auto log_term = [&](int k, int i, const Vector& u_next, const Vector& z_next) {
    x << u_next, z_next;
    return log_mvn_pdf(x, pred[k][i].mean, pred[k][i].sqrt_cov);
  };
  return rbffjbs_impl(filter, model, y, M, seed, link, log_term);
}

std::vector<SmoothedPath> to_paths(const std::vector<BackwardTrajectory>& trajs) {
  std::vector<SmoothedPath> out;
  out.reserve(trajs.size());
  for (const auto& t : trajs) out.push_back({t.u, t.smoothed, t.index});
  return out;
}

}  // namespace rbps
