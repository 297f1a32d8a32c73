#include "rbps/kalman.hpp"

#include <algorithm>
#include <cmath>

namespace rbps {

Matrix chol_pd(const Matrix& m, Errc code, const char* what) {
  Eigen::LLT<Matrix> llt(symmetrize(m));
  if (llt.info() != Eigen::Success) throw Error(code, what);
  Matrix l = llt.matrixL();
  if (!(l.diagonal().array() > 0.0).all()) throw Error(code, what);
  return l;
}

KfUpdate kf_meas_update(const MomentGaussian<>& prior, const Vector& h, const Matrix& C, const Matrix& R_sqrt,
                        const Vector& y) {
  const Eigen::Index nz = prior.dim();
  const Eigen::Index ny = y.size();
  detail::require(h.size() == ny && C.rows() == ny && C.cols() == nz && R_sqrt.rows() == ny && R_sqrt.cols() == ny,
                  "kf_meas_update: dimension mismatch");
  // Pre-array [[R^T/2, 0], [Gamma' C', Gamma']]; its triangular form holds S^1/2, the scaled gain and the new factor.
  Matrix pre = Matrix::Zero(ny + nz, ny + nz);
  pre.topLeftCorner(ny, ny) = R_sqrt.transpose();
  pre.bottomLeftCorner(nz, ny).noalias() = prior.sqrt_cov.transpose() * C.transpose();
  pre.bottomRightCorner(nz, nz) = prior.sqrt_cov.transpose();
  const Matrix post = qr_upper(pre);
  const Matrix s_sqrt = post.topLeftCorner(ny, ny).transpose();
  const double tiny = 1e-300;
  for (Eigen::Index i = 0; i < ny; ++i)
    if (!(s_sqrt(i, i) > tiny)) throw Error(Errc::SingularInnovation, "kf_meas_update: innovation factor singular");

  const Vector pred = h + C * prior.mean;
  const Vector w = s_sqrt.triangularView<Eigen::Lower>().solve(y - pred);
  KfUpdate out;
  out.moment.mean = prior.mean + post.topRightCorner(ny, nz).transpose() * w;
  out.moment.sqrt_cov = post.bottomRightCorner(nz, nz).transpose();
  double log_det_half = 0.0;
  for (Eigen::Index i = 0; i < ny; ++i) log_det_half += std::log(s_sqrt(i, i));
  out.log_lik = -0.5 * w.squaredNorm() - log_det_half - 0.5 * double(ny) * std::log(2.0 * std::numbers::pi);
  return out;
}

MomentGaussian<> kf_time_update_hier(const MomentGaussian<>& moment, const Vector& f, const Matrix& A,
                                     const Matrix& F) {
  const Eigen::Index nz = moment.dim();
  detail::require(f.size() == nz && A.rows() == nz && A.cols() == nz && F.rows() == nz,
                  "kf_time_update_hier: dimension mismatch");
  MomentGaussian<> out;
  out.mean = f + A * moment.mean;
  out.sqrt_cov = stacked_sqrt(moment.sqrt_cov.transpose() * A.transpose(), F.transpose());
  return out;
}

MomentGaussian<> mixed_u_predictive(const MomentGaussian<>& moment, const MixedBlocks& b) {
  MomentGaussian<> out;
  out.mean = b.g + b.B * moment.mean;
  out.sqrt_cov = stacked_sqrt(moment.sqrt_cov.transpose() * b.B.transpose(), b.G.transpose());
  return out;
}

MomentGaussian<> kf_time_update_mixed(const MomentGaussian<>& moment, const Vector& u_next, const MixedBlocks& b,
                                      double* u_log_lik) {
  const Eigen::Index nz = moment.dim();
  const Eigen::Index nu = u_next.size();
  detail::require(b.g.size() == nu && b.B.rows() == nu && b.B.cols() == nz && b.G.rows() == nu &&
                      b.f.size() == nz && b.A.rows() == nz && b.A.cols() == nz && b.F.rows() == nz &&
                      b.F.cols() == b.G.cols(),
                  "kf_time_update_mixed: dimension mismatch");
  const Matrix lq = chol_pd(b.G * b.G.transpose(), Errc::QNotPD, "kf_time_update_mixed: Q = G G' not PD");

  // u_next acts as a measurement of z_t.
  const KfUpdate cond = kf_meas_update(moment, b.g, b.B, lq, u_next);
  if (u_log_lik) *u_log_lik = cond.log_lik;

  // Decorrelated dynamics: K = F G' Q^-1, noise F Pi with Pi = I - G' Q^-1 G.
  const auto lq_tri = lq.triangularView<Eigen::Lower>();
  const Matrix gw = lq_tri.solve(b.G);
  const Matrix fgw = b.F * gw.transpose();
  const Vector r = lq_tri.solve(u_next - b.g);
  const Matrix bw = lq_tri.solve(b.B);
  Matrix pi = -gw.transpose() * gw;
  pi.diagonal().array() += 1.0;
  const Matrix a_bar = b.A - fgw * bw;

  MomentGaussian<> out;
  out.mean = b.f + fgw * r + a_bar * cond.moment.mean;
  out.sqrt_cov = stacked_sqrt(cond.moment.sqrt_cov.transpose() * a_bar.transpose(), (b.F * pi).transpose());
  return out;
}

std::vector<int> systematic_resample(std::span<const double> weights, int n, double u0) {
  double total = 0.0;
  for (double w : weights)
    if (std::isfinite(w) && w > 0.0) total += w;
  if (!(total > 0.0)) throw Error(Errc::DegenerateWeights, "systematic_resample: all weights zero or NaN");
  std::vector<int> idx(static_cast<std::size_t>(n));
  const int m = static_cast<int>(weights.size());
  double acc = 0.0;
  int j = 0;
  auto wj = [&](int k) { return (std::isfinite(weights[k]) && weights[k] > 0.0) ? weights[k] / total : 0.0; };
  acc = wj(0);
  for (int k = 0; k < n; ++k) {
    const double pos = (u0 + k) / n;
    while (pos >= acc && j < m - 1) {
      ++j;
      acc += wj(j);
    }
    idx[k] = j;
  }
  // Guard against a trailing zero-weight index chosen by round-off.
  for (int& i : idx)
    while (wj(i) == 0.0 && i > 0) --i;
  return idx;
}

std::vector<int> systematic_resample(std::span<const double> weights, Rng& rng) {
  return systematic_resample(weights, static_cast<int>(weights.size()), uniform01(rng));
}

double ess(std::span<const double> weights) {
  double s = 0.0, s2 = 0.0;
  for (double w : weights) {
    s += w;
    s2 += w * w;
  }
  return s * s / s2;
}

std::vector<double> cumulative(std::span<const double> weights) {
  std::vector<double> cdf(weights.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    cdf[i] = acc;
  }
  return cdf;
}

int draw_from_cdf(std::span<const double> cdf, double u) {
  const double target = u * cdf.back();
  auto it = std::upper_bound(cdf.begin(), cdf.end(), target);
  int k = static_cast<int>(it - cdf.begin());
  // upper_bound never lands on a zero-mass entry; clamp the u * total == total round-off case.
  if (k >= static_cast<int>(cdf.size())) {
    k = static_cast<int>(cdf.size()) - 1;
    while (k > 0 && cdf[k] == cdf[k - 1]) --k;
  }
  return k;
}

}  // namespace rbps
