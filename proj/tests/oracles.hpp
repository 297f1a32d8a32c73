// Independent reference computations for the test suites. Everything here is
// written in plain covariance form with explicit inverses, on purpose.
#pragma once

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <vector>

#include "rbps/models.hpp"
#include "rbps/rbpf.hpp"

namespace oracle {

using rbps::Matrix;
using rbps::Vector;

inline double log_normal(const Vector& x, const Vector& mean, const Matrix& cov) {
  const Eigen::Index n = x.size();
  const Vector d = x - mean;
  return -0.5 * d.dot(cov.inverse() * d) - 0.5 * std::log(cov.determinant()) -
         0.5 * double(n) * std::log(2.0 * std::numbers::pi);
}

struct Cov {
  Vector m;
  Matrix P;
};

inline Cov from(const rbps::MomentGaussian<>& g) { return {g.mean, g.sqrt_cov * g.sqrt_cov.transpose()}; }

// y = h + C z + e; returns the posterior and accumulates log N(y; h + C m, C P C' + R).
inline Cov measure(const Cov& p, const rbps::LinearMeasurement& m, const Vector& y, double* ll) {
  const Matrix S = m.C * p.P * m.C.transpose() + m.R;
  const Matrix K = p.P * m.C.transpose() * S.inverse();
  if (ll) *ll += log_normal(y, m.h + m.C * p.m, S);
  Cov out{p.m + K * (y - m.h - m.C * p.m), p.P - K * S * K.transpose()};
  out.P = 0.5 * (out.P + out.P.transpose());
  return out;
}

// Mixed step: condition the joint Gaussian of (u_next, z_next) given z ~ p on u_next.
inline Cov mixed_step(const Cov& p, const rbps::MixedBlocks& b, const Vector& u_next, double* ll) {
  const Matrix Suu = b.B * p.P * b.B.transpose() + b.G * b.G.transpose();
  const Matrix Szu = b.A * p.P * b.B.transpose() + b.F * b.G.transpose();
  const Matrix Szz = b.A * p.P * b.A.transpose() + b.F * b.F.transpose();
  const Vector mu = b.g + b.B * p.m;
  const Vector mz = b.f + b.A * p.m;
  if (ll) *ll += log_normal(u_next, mu, Suu);
  const Matrix K = Szu * Suu.inverse();
  Cov out{mz + K * (u_next - mu), Szz - K * Szu.transpose()};
  out.P = 0.5 * (out.P + out.P.transpose());
  return out;
}

inline Cov hier_step(const Cov& p, const rbps::LinearDynamics& d) {
  Cov out{d.f + d.A * p.m, d.A * p.P * d.A.transpose() + d.F * d.F.transpose()};
  out.P = 0.5 * (out.P + out.P.transpose());
  return out;
}

// Filtered moments along a fixed u-path (time indices 0..T-1).
inline std::vector<Cov> conditional_kf(const rbps::MixedModel& model, const std::vector<Vector>& u,
                                       const std::vector<Vector>& y) {
  std::vector<Cov> out;
  Cov c = from(model.initial_z);
  for (std::size_t k = 0; k < y.size(); ++k) {
    if (k > 0) c = mixed_step(out.back(), model.dynamics(int(k), u[k - 1], out.back().m), u[k], nullptr);
    c = measure(c, model.measurement(int(k) + 1, u[k], c.m), y[k], nullptr);
    out.push_back(c);
  }
  return out;
}

inline std::vector<Cov> conditional_kf(const rbps::HierarchicalModel& model, const std::vector<Vector>& u,
                                       const std::vector<Vector>& y) {
  std::vector<Cov> out;
  Cov c = from(model.initial_z);
  for (std::size_t k = 0; k < y.size(); ++k) {
    if (k > 0) c = hier_step(out.back(), model.dynamics(int(k) + 1, u[k]));
    c = measure(c, model.measurement(int(k) + 1, u[k], c.m), y[k], nullptr);
    out.push_back(c);
  }
  return out;
}

// log p(y_{k+1:T}, u_{k+1:T} | u_k, z_k ~ start) by running a conditional KF over the suffix.
inline double suffix_loglik(const rbps::MixedModel& model, const Cov& start, int k, const Vector& u_k,
                            const std::vector<Vector>& u, const std::vector<Vector>& y) {
  double ll = 0.0;
  Cov c = start;
  Vector prev = u_k;
  for (std::size_t s = std::size_t(k) + 1; s < y.size(); ++s) {
    c = mixed_step(c, model.dynamics(int(s), prev, c.m), u[s], &ll);
    c = measure(c, model.measurement(int(s) + 1, u[s], c.m), y[s], &ll);
    prev = u[s];
  }
  return ll;
}

inline double suffix_loglik(const rbps::HierarchicalModel& model, const Cov& start, int k, const Vector& u_k,
                            const std::vector<Vector>& u, const std::vector<Vector>& y) {
  double ll = 0.0;
  Cov c = start;
  Vector prev = u_k;
  for (std::size_t s = std::size_t(k) + 1; s < y.size(); ++s) {
    ll += model.transition_logpdf(int(s), u[s], prev);
    c = hier_step(c, model.dynamics(int(s) + 1, u[s]));
    c = measure(c, model.measurement(int(s) + 1, u[s], c.m), y[s], &ll);
    prev = u[s];
  }
  return ll;
}

// Exact normalized backward-simulation weights at time index k given the trajectory's u_{k+1:T}.
template <typename Model>
std::vector<double> backward_weights(const Model& model, const rbps::FilterOutput& f, int k,
                                     const std::vector<Vector>& u, const std::vector<Vector>& y) {
  std::vector<double> lw(f.N);
  double mx = -INFINITY;
  for (int i = 0; i < f.N; ++i) {
    lw[i] = f.weights[k][i] > 0 ? std::log(f.weights[k][i]) +
                                      suffix_loglik(model, from(f.filtered[k][i]), k, f.particles[k][i], u, y)
                                : -INFINITY;
    mx = std::max(mx, lw[i]);
  }
  double s = 0.0;
  for (double& v : lw) s += (v = std::exp(v - mx));
  for (double& v : lw) v /= s;
  return lw;
}

// Law of the full index sequence (i_0, ..., i_{T-1}) under exact backward simulation, by enumeration.
template <typename Model>
std::map<std::vector<int>, double> backward_law(const Model& model, const rbps::FilterOutput& f,
                                                const std::vector<Vector>& y) {
  std::map<std::vector<int>, double> law;
  const int T = f.T;
  std::vector<int> idx(T);
  std::vector<Vector> u(T);
  auto rec = [&](auto&& self, int k, double p) -> void {
    if (p == 0.0) return;
    if (k < 0) {
      law[idx] += p;
      return;
    }
    const std::vector<double> w = k == T - 1 ? f.weights[k] : backward_weights(model, f, k, u, y);
    for (int i = 0; i < f.N; ++i) {
      idx[k] = i;
      u[k] = f.particles[k][i];
      self(self, k - 1, p * w[i]);
    }
  };
  rec(rec, T - 1, 1.0);
  return law;
}

// Pearson chi-square p-value; cells with expected count below 5 are pooled.
inline double chi_square_pvalue(const std::map<std::vector<int>, long>& counts,
                                const std::map<std::vector<int>, double>& law, long n) {
  double stat = 0.0, pool_e = 0.0, pool_o = 0.0;
  int cells = 0;
  long seen = 0;
  for (const auto& [key, p] : law) {
    const auto it = counts.find(key);
    const double o = it == counts.end() ? 0.0 : static_cast<double>(it->second);
    seen += static_cast<long>(o);
    const double e = p * n;
    if (e < 5.0) {
      pool_e += e;
      pool_o += o;
      continue;
    }
    stat += (o - e) * (o - e) / e;
    ++cells;
  }
  pool_o += static_cast<double>(n - seen);  // draws outside the enumerated support
  if (pool_e >= 5.0) {
    stat += (pool_o - pool_e) * (pool_o - pool_e) / pool_e;
    ++cells;
  } else if (pool_o > 0.0 && pool_e < 1e-12) {
    return 0.0;
  }
  if (cells < 2) return 1.0;
  return boost::math::cdf(boost::math::complement(boost::math::chi_squared(cells - 1), stat));
}

// ---------------------------------------------------------------------------
// Random models with u-dependent matrices.

inline Matrix random_matrix(std::mt19937_64& rng, int r, int c, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = n(rng);
  return m;
}

inline Matrix random_spd(std::mt19937_64& rng, int n, double floor = 0.2) {
  const Matrix a = random_matrix(rng, n, n, 0.6);
  return a * a.transpose() + floor * Matrix::Identity(n, n);
}

inline Matrix stable(std::mt19937_64& rng, int n, double radius) {
  Matrix a = random_matrix(rng, n, n);
  const double rho = a.eigenvalues().cwiseAbs().maxCoeff();
  return a * (radius / rho);
}

// Correlated u/z noise (G F' != 0), u-dependent B, A, C, h, g.
inline rbps::MixedModel random_mixed_model(std::uint64_t seed, int n_u, int n_z, int n_y) {
  std::mt19937_64 rng(seed);
  const int n_v = n_u + n_z;
  const Matrix B0 = random_matrix(rng, n_u, n_z, 0.4), B1 = random_matrix(rng, n_u, n_z, 0.4);
  const Matrix A0 = stable(rng, n_z, 0.85), A1 = random_matrix(rng, n_z, n_z, 0.05);
  const Matrix noise = random_matrix(rng, n_u + n_z, n_v, 0.4) + 0.3 * Matrix::Identity(n_u + n_z, n_v);
  const Matrix G = noise.topRows(n_u), F = noise.bottomRows(n_z);
  const Matrix C0 = random_matrix(rng, n_y, n_z), C1 = random_matrix(rng, n_y, n_z, 0.3);
  const Matrix R = random_spd(rng, n_y, 0.3);
  const Vector f0 = random_matrix(rng, n_z, 1, 0.3);
  rbps::MixedModel m;
  m.n_u = n_u;
  m.n_z = n_z;
  m.n_v = n_v;
  m.n_y = n_y;
  m.dynamics = [=](int t, const Vector& u, const Vector&) {
    rbps::MixedBlocks b;
    const double s = std::tanh(u(0));
    b.g = 0.5 * u + Vector::Constant(n_u, std::sin(u(0)) + 0.2 * std::cos(0.7 * t));
    b.B = B0 + s * B1;
    b.G = G;
    b.f = f0 * std::cos(u(0));
    b.A = A0 + s * A1;
    b.F = F;
    return b;
  };
  m.measurement = [=](int, const Vector& u, const Vector&) {
    return rbps::LinearMeasurement{Vector::Constant(n_y, 0.1 * u(0) * u(0)), C0 + std::cos(u(0)) * C1, R};
  };
  m.initial_u = rbps::gaussian_initial_u({Vector::Zero(n_u), Matrix::Identity(n_u, n_u)});
  m.initial_z = {Vector::Zero(n_z), Matrix::Identity(n_z, n_z)};
  return m;
}

// Gaussian AR(1) u, u-dependent (f, A, F, h, C); n_v < n_z gives rank-deficient F F'.
inline rbps::HierarchicalModel random_hier_model(std::uint64_t seed, int n_z, int n_v, int n_y) {
  std::mt19937_64 rng(seed);
  const Matrix A0 = stable(rng, n_z, 0.9), A1 = random_matrix(rng, n_z, n_z, 0.05);
  const Matrix F0 = random_matrix(rng, n_z, n_v, 0.5);
  const Matrix C0 = random_matrix(rng, n_y, n_z), C1 = random_matrix(rng, n_y, n_z, 0.3);
  const Matrix R = random_spd(rng, n_y, 0.3);
  const Vector f0 = random_matrix(rng, n_z, 1, 0.3);
  rbps::HierarchicalModel m;
  m.n_u = 1;
  m.n_z = n_z;
  m.n_v = n_v;
  m.n_y = n_y;
  m.dynamics = [=](int, const Vector& u) {
    const double s = std::tanh(u(0));
    return rbps::LinearDynamics{f0 * std::sin(u(0)), A0 + s * A1, F0 * (1.0 + 0.2 * s)};
  };
  m.measurement = [=](int, const Vector& u, const Vector&) {
    return rbps::LinearMeasurement{Vector::Constant(n_y, 0.2 * u(0)), C0 + std::cos(u(0)) * C1, R};
  };
  m.sample_transition = [](int, const Vector& u, rbps::Rng& r) {
    return Vector(0.9 * u + 0.5 * rbps::standard_normal_vector(1, r));
  };
  m.transition_logpdf = [](int, const Vector& un, const Vector& u) {
    const double d = (un(0) - 0.9 * u(0)) / 0.5;
    return -0.5 * d * d - std::log(0.5) - 0.5 * std::log(2.0 * std::numbers::pi);
  };
  m.initial_u = rbps::gaussian_initial_u({Vector::Zero(1), Matrix::Identity(1, 1)});
  m.initial_z = {Vector::Zero(n_z), Matrix::Identity(n_z, n_z)};
  return m;
}

template <typename A, typename B>
double max_abs_diff(const A& a, const B& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

}  // namespace oracle
