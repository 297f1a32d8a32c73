/**
 * @file gauss.hpp
 * @brief Dense Gaussian primitives shared by the filters and smoothers.
 *
 * Everything here is header-only and templated on the scalar type. Covariances
 * are carried as lower-triangular square-root factors, information-form
 * potentials as (Omega, lambda, log_z). All routines are pure functions.
 */
#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "rbps/error.hpp"

namespace rbps {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;

/// Gaussian in moment form, N(mean, sqrt_cov * sqrt_cov^T), sqrt_cov lower-triangular.
template <typename Scalar = double>
struct MomentGaussian {
  VectorX<Scalar> mean;
  MatrixX<Scalar> sqrt_cov;

  Eigen::Index dim() const { return mean.size(); }
  MatrixX<Scalar> cov() const { return sqrt_cov * sqrt_cov.transpose(); }
};

/// Unnormalized Gaussian potential exp(log_z - 0.5 (z' Omega z - 2 lambda' z)).
template <typename Scalar = double>
struct InfoPotential {
  MatrixX<Scalar> omega;
  VectorX<Scalar> lambda;
  Scalar log_z = 0;

  static InfoPotential flat(Eigen::Index n) {
    return {MatrixX<Scalar>::Zero(n, n), VectorX<Scalar>::Zero(n), Scalar(0)};
  }
  Eigen::Index dim() const { return lambda.size(); }
};

/// Square-root information potential, Omega = sqrt_omega * sqrt_omega^T.
template <typename Scalar = double>
struct SqrtInfoPotential {
  MatrixX<Scalar> sqrt_omega;
  VectorX<Scalar> lambda;
  Scalar log_z = 0;

  static SqrtInfoPotential flat(Eigen::Index n) {
    return {MatrixX<Scalar>::Zero(n, n), VectorX<Scalar>::Zero(n), Scalar(0)};
  }
  Eigen::Index dim() const { return lambda.size(); }
  MatrixX<Scalar> omega() const { return sqrt_omega * sqrt_omega.transpose(); }
  InfoPotential<Scalar> plain() const { return {omega(), lambda, log_z}; }
};

namespace detail {

inline void require(bool ok, const char* what) {
  if (!ok) throw Error(Errc::DimensionMismatch, what);
}

template <typename Derived>
typename Derived::Scalar max_abs(const Eigen::MatrixBase<Derived>& m) {
  return m.size() == 0 ? typename Derived::Scalar(0) : m.cwiseAbs().maxCoeff();
}

}  // namespace detail

/// (M + M^T) / 2.
template <typename Derived>
MatrixX<typename Derived::Scalar> symmetrize(const Eigen::MatrixBase<Derived>& m) {
  return (m + m.transpose()) / typename Derived::Scalar(2);
}

/**
 * Upper-triangular R (n x n) with R^T R = A^T A and non-negative diagonal.
 *
 * Inputs with fewer rows than columns are zero-padded, so the result is always
 * square. Rank-deficient A produces zero rows in R.
 */
template <typename Derived>
MatrixX<typename Derived::Scalar> qr_upper(const Eigen::MatrixBase<Derived>& a) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index m = a.rows();
  const Eigen::Index n = a.cols();
  MatrixX<Scalar> r = MatrixX<Scalar>::Zero(n, n);
  if (n == 0) return r;
  if (m == 0) return r;
  Eigen::HouseholderQR<MatrixX<Scalar>> qr(a);
  const Eigen::Index k = std::min(m, n);
  r.topRows(k) = qr.matrixQR().topRows(k).template triangularView<Eigen::Upper>();
  for (Eigen::Index i = 0; i < k; ++i) {
    if (r(i, i) < Scalar(0)) r.row(i) *= Scalar(-1);
  }
  return r;
}

/// Lower-triangular L = qr_upper(stack(top, bottom))^T, so L L^T = top^T top + bottom^T bottom.
template <typename D1, typename D2>
MatrixX<typename D1::Scalar> stacked_sqrt(const Eigen::MatrixBase<D1>& top,
                                          const Eigen::MatrixBase<D2>& bottom) {
  using Scalar = typename D1::Scalar;
  detail::require(top.cols() == bottom.cols(), "stacked_sqrt: column mismatch");
  MatrixX<Scalar> s(top.rows() + bottom.rows(), top.cols());
  s << top, bottom;
  return qr_upper(s).transpose();
}

/**
 * Lower-triangular L with L L^T = M for symmetric positive semidefinite M.
 *
 * Positive definite input goes through a plain Cholesky factorization; singular
 * PSD input falls back to an eigen-decomposition followed by a QR re-triangularization.
 * Throws NotPSD when an eigenvalue is below -1e-8 * ||M||.
 */
template <typename Derived>
MatrixX<typename Derived::Scalar> chol_psd(const Eigen::MatrixBase<Derived>& m_in) {
  using Scalar = typename Derived::Scalar;
  detail::require(m_in.rows() == m_in.cols(), "chol_psd: matrix not square");
  const Eigen::Index n = m_in.rows();
  if (n == 0) return MatrixX<Scalar>(0, 0);
  const MatrixX<Scalar> m = symmetrize(m_in);
  const Scalar scale = detail::max_abs(m);
  if (!(std::isfinite(static_cast<double>(scale)))) throw Error(Errc::NotPSD, "chol_psd: non-finite entries");
  if (scale == Scalar(0)) return MatrixX<Scalar>::Zero(n, n);

  Eigen::LLT<MatrixX<Scalar>> llt(m);
  if (llt.info() == Eigen::Success) {
    MatrixX<Scalar> l = llt.matrixL();
    bool well_conditioned = true;
    for (Eigen::Index i = 0; i < n; ++i)
      if (!(l(i, i) > Scalar(1e-7) * std::sqrt(scale))) well_conditioned = false;
    if (well_conditioned) return l;
  }

  Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> eig(m);
  const Scalar norm = eig.eigenvalues().cwiseAbs().maxCoeff();
  if (eig.eigenvalues().minCoeff() < Scalar(-1e-8) * norm)
    throw Error(Errc::NotPSD, "chol_psd: negative eigenvalue " + std::to_string(double(eig.eigenvalues().minCoeff())));
  const VectorX<Scalar> root = eig.eigenvalues().cwiseMax(Scalar(0)).cwiseSqrt();
  const MatrixX<Scalar> b = eig.eigenvectors() * root.asDiagonal();
  return qr_upper(b.transpose()).transpose();
}

/**
 * log E[exp(-0.5 (z' Omega z - 2 lambda' z))] for z = c + Ax + Gamma xi, xi ~ N(0, I).
 *
 * Equals -0.5 log|M| - 0.5 gamma with M = Gamma' Omega Gamma + I; M >= I so the
 * Cholesky factorization always exists.
 */
template <typename Dc, typename Dx, typename Dg, typename Do, typename Dl>
typename Dc::Scalar lemma1_integrate(const Eigen::MatrixBase<Dc>& c, const Eigen::MatrixBase<Dx>& ax,
                                     const Eigen::MatrixBase<Dg>& gamma, const Eigen::MatrixBase<Do>& omega,
                                     const Eigen::MatrixBase<Dl>& lambda) {
  using Scalar = typename Dc::Scalar;
  const Eigen::Index n = c.size();
  detail::require(ax.size() == n && gamma.rows() == n && omega.rows() == n && omega.cols() == n &&
                      lambda.size() == n,
                  "lemma1_integrate: dimension mismatch");
  const VectorX<Scalar> mu = c + ax;
  const VectorX<Scalar> resid = lambda - omega * mu;
  const MatrixX<Scalar> og = omega * gamma;
  MatrixX<Scalar> big_m = gamma.transpose() * og;
  big_m.diagonal().array() += Scalar(1);
  Eigen::LLT<MatrixX<Scalar>> llt(symmetrize(big_m));
  const VectorX<Scalar> w = llt.matrixL().solve(gamma.transpose() * resid);
  Scalar log_det = 0;
  for (Eigen::Index i = 0; i < big_m.rows(); ++i) log_det += std::log(llt.matrixLLT()(i, i));
  log_det *= Scalar(2);
  const Scalar g = mu.dot(omega * mu) - Scalar(2) * lambda.dot(mu) - w.squaredNorm();
  return Scalar(-0.5) * log_det - Scalar(0.5) * g;
}

/**
 * Fuse a moment-form Gaussian with an information potential:
 * P~ = (P^-1 + Omega)^-1, m~ = P~ (P^-1 m + lambda).
 *
 * Evaluated as P~ = Gamma (Gamma' Omega Gamma + I)^-1 Gamma', which never inverts P.
 */
template <typename Scalar>
MomentGaussian<Scalar> fuse_info(const MomentGaussian<Scalar>& filter, const InfoPotential<Scalar>& info) {
  const Eigen::Index n = filter.dim();
  detail::require(info.dim() == n && info.omega.rows() == n && filter.sqrt_cov.rows() == n,
                  "fuse_info: dimension mismatch");
  const MatrixX<Scalar>& gamma = filter.sqrt_cov;
  MatrixX<Scalar> big_lambda = gamma.transpose() * info.omega * gamma;
  big_lambda.diagonal().array() += Scalar(1);
  Eigen::LLT<MatrixX<Scalar>> llt(symmetrize(big_lambda));
  if (llt.info() != Eigen::Success) throw Error(Errc::SingularCovariance, "fuse_info: Gamma' Omega Gamma + I not PD");
  // Gamma L^-T is a square root of P~.
  const MatrixX<Scalar> root = llt.matrixU().template solve<Eigen::OnTheRight>(gamma);
  MomentGaussian<Scalar> out;
  out.sqrt_cov = qr_upper(root.transpose()).transpose();
  const VectorX<Scalar> resid = info.lambda - info.omega * filter.mean;
  out.mean = filter.mean + root * (root.transpose() * resid);
  return out;
}

/// log N(x; mean, sqrt_cov sqrt_cov^T) for lower-triangular sqrt_cov with positive diagonal.
template <typename Dx, typename Dm, typename Ds>
typename Dx::Scalar log_mvn_pdf(const Eigen::MatrixBase<Dx>& x, const Eigen::MatrixBase<Dm>& mean,
                                const Eigen::MatrixBase<Ds>& sqrt_cov) {
  using Scalar = typename Dx::Scalar;
  const Eigen::Index n = x.size();
  detail::require(mean.size() == n && sqrt_cov.rows() == n && sqrt_cov.cols() == n,
                  "log_mvn_pdf: dimension mismatch");
  Scalar log_det_half = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(sqrt_cov(i, i) > Scalar(0))) throw Error(Errc::SingularCovariance, "log_mvn_pdf: non-positive diagonal");
    log_det_half += std::log(sqrt_cov(i, i));
  }
  const VectorX<Scalar> w = sqrt_cov.template triangularView<Eigen::Lower>().solve(x - mean);
  return Scalar(-0.5) * w.squaredNorm() - log_det_half -
         Scalar(0.5) * Scalar(n) * std::log(Scalar(2) * std::numbers::pi_v<Scalar>);
}

/// log(sum_i exp(v_i)) with max subtraction; -inf for empty or all -inf input.
template <typename Scalar>
Scalar log_sum_exp(std::span<const Scalar> values) {
  Scalar mx = -std::numeric_limits<Scalar>::infinity();
  for (Scalar v : values)
    if (v > mx) mx = v;
  if (!std::isfinite(static_cast<double>(mx))) return mx;
  Scalar s = 0;
  for (Scalar v : values) s += std::exp(v - mx);
  return mx + std::log(s);
}

/// Normalized weights from log-weights. Throws AllWeightsZero when no entry is finite.
template <typename Scalar>
std::vector<Scalar> normalize_log_weights(std::span<const Scalar> log_w) {
  Scalar mx = -std::numeric_limits<Scalar>::infinity();
  for (Scalar v : log_w) {
    if (std::isnan(static_cast<double>(v))) continue;
    if (v > mx) mx = v;
  }
  if (!std::isfinite(static_cast<double>(mx))) {
    std::string dump;
    for (std::size_t i = 0; i < log_w.size() && i < 16; ++i) dump += " " + std::to_string(double(log_w[i]));
    throw Error(Errc::AllWeightsZero, "all log-weights non-finite:" + dump);
  }
  std::vector<Scalar> w(log_w.size());
  Scalar s = 0;
  for (std::size_t i = 0; i < log_w.size(); ++i) {
    w[i] = std::isnan(static_cast<double>(log_w[i])) ? Scalar(0) : std::exp(log_w[i] - mx);
    s += w[i];
  }
  for (auto& v : w) v /= s;
  return w;
}

}  // namespace rbps
