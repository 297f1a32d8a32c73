#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "rbps/kalman.hpp"
#include "rbps/rbpf.hpp"

using namespace rbps;

namespace {

// Relative difference measured against the larger of |ref| and 1.
double rel(const Matrix& a, const Matrix& ref) { return (a - ref).norm() / std::max(1.0, ref.norm()); }

template <typename Model>
double worst_forward_mismatch(const Model& model, const FilterOutput& f, const std::vector<Vector>& y) {
  double worst = 0.0;
  for (int k = 0; k < f.T; ++k)
    for (int i = 0; i < f.N; ++i) {
      const auto path = ancestral_path(f, k, i);
      std::vector<Vector> yk(y.begin(), y.begin() + k + 1);
      const auto ref = oracle::conditional_kf(model, path, yk);
      worst = std::max({worst, rel(f.filtered[k][i].mean, ref[k].m), rel(f.filtered[k][i].cov(), ref[k].P)});
    }
  return worst;
}

void check_invariants(const FilterOutput& f) {
  for (int k = 0; k < f.T; ++k) {
    double s = 0.0;
    for (double w : f.weights[k]) {
      CHECK(w >= 0.0);
      s += w;
    }
    CHECK(std::abs(s - 1.0) < 1e-12);
    CHECK(f.ess[k] >= 1.0 - 1e-12);
    CHECK(f.ess[k] <= f.N + 1e-9);
    for (int i = 0; i < f.N; ++i) {
      if (k == 0)
        CHECK(f.ancestors[k][i] == -1);
      else
        CHECK((f.ancestors[k][i] >= 0 && f.ancestors[k][i] < f.N));
      const Matrix& g = f.filtered[k][i].sqrt_cov;
      CHECK(Matrix(g.triangularView<Eigen::StrictlyUpper>()).cwiseAbs().maxCoeff() == 0.0);
    }
  }
}

}  // namespace

TEST_CASE("trivial u reduces the RBPF to a single Kalman filter") {
  HierarchicalModel m = oracle::random_hier_model(2, 3, 3, 2);
  const Vector u0 = Vector::Constant(1, 0.4);
  m.sample_transition = [](int, const Vector& u, Rng&) { return u; };
  m.transition_logpdf = [](int, const Vector&, const Vector&) { return 0.0; };
  m.initial_u = {[u0](Rng&) { return u0; }, [](const Vector&) { return 0.0; }};
  const Trajectory tr = simulate(m, 25, 3);
  const FilterOutput f = rbpf_run(m, tr.y, {.N = 7}, 5);
  const auto ref = oracle::conditional_kf(m, std::vector<Vector>(25, u0), tr.y);
  for (int k = 0; k < 25; ++k)
    for (int i = 0; i < 7; ++i) {
      CHECK(f.weights[k][i] == doctest::Approx(1.0 / 7));
      CHECK(rel(f.filtered[k][i].mean, ref[k].m) < 1e-10);
      CHECK(rel(f.filtered[k][i].cov(), ref[k].P) < 1e-10);
    }
}

TEST_CASE("theta smoke run keeps the filter invariants") {
  const MixedModel m = builtin_theta_model();
  const Trajectory tr = simulate(m, 100, 11);
  const FilterOutput f = rbpf_run(m, tr.y, {.N = 300}, 12);
  CHECK(f.T == 100);
  CHECK(f.N == 300);
  check_invariants(f);
  CHECK(std::isfinite(f.log_marginal));
}

TEST_CASE("filtered moments equal a straight conditional KF on every ancestral path") {
  SUBCASE("mixed, correlated noise, u-dependent matrices") {
    const MixedModel m = oracle::random_mixed_model(17, 1, 3, 2);
    const Trajectory tr = simulate(m, 15, 1);
    const FilterOutput f = rbpf_run(m, tr.y, {.N = 20}, 2);
    check_invariants(f);
    CHECK(worst_forward_mismatch(m, f, tr.y) < 1e-8);
  }
  SUBCASE("hierarchical, rank-deficient process noise") {
    const HierarchicalModel m = oracle::random_hier_model(23, 3, 1, 1);
    const Trajectory tr = simulate(m, 15, 4);
    const FilterOutput f = rbpf_run(m, tr.y, {.N = 20, .resample = ResamplePolicy::Always}, 5);
    check_invariants(f);
    CHECK(worst_forward_mismatch(m, f, tr.y) < 1e-8);
  }
}

TEST_CASE("single particle: unit weights and the conditional KF on its path") {
  const MixedModel m = oracle::random_mixed_model(31, 2, 2, 1);
  const Trajectory tr = simulate(m, 12, 6);
  const FilterOutput f = rbpf_run(m, tr.y, {.N = 1}, 7);
  std::vector<Vector> path;
  for (int k = 0; k < 12; ++k) {
    CHECK(f.weights[k][0] == 1.0);
    path.push_back(f.particles[k][0]);
  }
  const auto ref = oracle::conditional_kf(m, path, tr.y);
  for (int k = 0; k < 12; ++k) CHECK(rel(f.filtered[k][0].cov(), ref[k].P) < 1e-10);
  // the log marginal of one particle is the sum of its predictive y log-likelihoods
  double ll = 0.0;
  oracle::Cov c = oracle::from(m.initial_z);
  for (int k = 0; k < 12; ++k) {
    if (k > 0) c = oracle::mixed_step(c, m.dynamics(k, path[k - 1], c.m), path[k], nullptr);
    c = oracle::measure(c, m.measurement(k + 1, path[k], c.m), tr.y[k], &ll);
  }
  CHECK(f.log_marginal == doctest::Approx(ll).epsilon(1e-10));
}

TEST_CASE("resampling policies and ancestry") {
  const MixedModel m = builtin_theta_model();
  const Trajectory tr = simulate(m, 30, 2);
  const FilterOutput never = rbpf_run(m, tr.y, {.N = 50, .resample = ResamplePolicy::Never}, 3);
  const FilterOutput always = rbpf_run(m, tr.y, {.N = 50, .resample = ResamplePolicy::Always}, 3);
  for (int k = 1; k < 30; ++k) {
    CHECK(never.resampled[k] == 0);
    CHECK(always.resampled[k] == 1);
    for (int i = 0; i < 50; ++i) CHECK(never.ancestors[k][i] == i);
  }
  const auto idx = ancestral_indices(always, 29, 7);
  REQUIRE(idx.size() == 30);
  CHECK(idx[29] == 7);
  for (int k = 29; k > 0; --k) CHECK(idx[k - 1] == always.ancestors[k][idx[k]]);
  const auto path = ancestral_path(always, 29, 7);
  for (int k = 0; k < 30; ++k) CHECK(path[k] == always.particles[k][idx[k]]);
}

TEST_CASE("rbpf output is bit-identical for identical seeds") {
  const MixedModel m = builtin_theta_model();
  const Trajectory tr = simulate(m, 40, 8);
  const FilterOutput a = rbpf_run(m, tr.y, {.N = 64}, 9), b = rbpf_run(m, tr.y, {.N = 64}, 9);
  bool same = a.log_marginal == b.log_marginal;
  for (int k = 0; k < 40; ++k)
    for (int i = 0; i < 64; ++i)
      same = same && a.particles[k][i] == b.particles[k][i] && a.weights[k][i] == b.weights[k][i] &&
             a.filtered[k][i].sqrt_cov == b.filtered[k][i].sqrt_cov;
  CHECK(same);
}

TEST_CASE("rbpf input validation") {
  const MixedModel m = builtin_theta_model();
  CHECK_THROWS_AS(rbpf_run(m, {}, {.N = 5}, 1), Error);
  CHECK_THROWS_AS(rbpf_run(m, {Vector::Zero(2)}, {.N = 5}, 1), Error);
  CHECK_THROWS_AS(rbpf_run(m, {Vector::Zero(1)}, {.N = 0}, 1), Error);
  try {
    rbpf_run(m, {Vector::Constant(1, std::nan(""))}, {.N = 5}, 1);
    FAIL("expected AllWeightsZero");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::AllWeightsZero);
  }
}
