#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "rbps/approx.hpp"

using namespace rbps;

namespace {

Vector vs(double v) { return Vector::Constant(1, v); }

void check_error(Errc code, const std::function<void()>& fn) {
  try {
    fn();
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == code);
  }
}

}  // namespace

TEST_CASE("taylor1 examples") {
  // identity map: joint moments are the prior itself
  std::mt19937_64 rng(1);
  const Vector mu = oracle::random_matrix(rng, 3, 1);
  const Matrix sig = oracle::random_spd(rng, 3);
  const JointGaussian id = taylor1_joint([](const Vector& z, const Vector&) { return z; }, mu, sig, 0);
  CHECK(oracle::max_abs_diff(id.c, mu) < 1e-12);
  CHECK(oracle::max_abs_diff(id.sigma_out, sig) < 1e-8);
  CHECK(oracle::max_abs_diff(id.sigma_cross, sig) < 1e-8);

  // linear map with noise: exact moments
  const Matrix A = oracle::random_matrix(rng, 2, 3), S = oracle::random_matrix(rng, 2, 2);
  const Vector b = oracle::random_matrix(rng, 2, 1);
  const JointGaussian lin = taylor1_joint([&](const Vector& z, const Vector& v) { return Vector(b + A * z + S * v); },
                                          mu, sig, 2);
  CHECK(oracle::max_abs_diff(lin.c, b + A * mu) < 1e-12);
  CHECK(oracle::max_abs_diff(lin.sigma_out, A * sig * A.transpose() + S * S.transpose()) < 1e-8);
  CHECK(oracle::max_abs_diff(lin.sigma_cross, A * sig) < 1e-8);

  // z^2 at mu = 1, sigma = 0.01
  const JointGaussian sq = taylor1_joint([](const Vector& z, const Vector&) { return Vector(z.array().square()); },
                                         vs(1.0), Matrix::Constant(1, 1, 0.01), 1);
  CHECK(sq.c(0) == doctest::Approx(1.0));
  CHECK(sq.sigma_cross(0, 0) == doctest::Approx(0.02).epsilon(1e-8));
  CHECK(sq.sigma_out(0, 0) == doctest::Approx(0.04).epsilon(1e-8));

  // finite differences against the analytic derivative
  const auto fd = finite_difference_jacobian(
      [](const Vector& z, const Vector& v) { return Vector(vs(std::sin(z(0)) * z(1) + std::exp(0.5 * v(0)))); },
      (Vector(2) << 0.3, 2.0).finished(), 1);
  CHECK(fd.jac_z(0, 0) == doctest::Approx(std::cos(0.3) * 2.0).epsilon(1e-8));
  CHECK(fd.jac_z(0, 1) == doctest::Approx(std::sin(0.3)).epsilon(1e-8));
  CHECK(fd.jac_noise(0, 0) == doctest::Approx(0.5).epsilon(1e-8));

  check_error(Errc::NonFiniteJacobian, [] {
    finite_difference_jacobian([](const Vector& z, const Vector&) { return Vector(vs(std::log(z(0)))); }, vs(0.0), 0);
  });
}

TEST_CASE("approx_dynamics recovers the blocks of a CLG model for any artificial prior") {
  const MixedModel m = oracle::random_mixed_model(5, 1, 2, 1);
  const GeneralModel g = wrap_as_general(m, false);
  const Taylor1Scheme scheme;
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 4; ++rep) {
    const Vector u = oracle::random_matrix(rng, 1, 1);
    const ArtificialPrior prior{oracle::random_matrix(rng, 2, 1, 3.0), oracle::random_spd(rng, 2, 0.05)};
    const MixedBlocks ref = m.dynamics(4, u, prior.mu);
    const MixedBlocks b = approx_dynamics(g, 4, u, prior, scheme);
    CHECK(oracle::max_abs_diff(b.g, ref.g) < 1e-7);
    CHECK(oracle::max_abs_diff(b.f, ref.f) < 1e-7);
    CHECK(oracle::max_abs_diff(b.B, ref.B) < 1e-7);
    CHECK(oracle::max_abs_diff(b.A, ref.A) < 1e-7);
    Matrix gf(3, ref.G.cols()), gfb(3, b.G.cols());
    gf << ref.G, ref.F;
    gfb << b.G, b.F;
    CHECK(oracle::max_abs_diff(gfb * gfb.transpose(), gf * gf.transpose()) < 1e-7);

    const LinearMeasurement mr = m.measurement(4, u, prior.mu);
    const LinearMeasurement ma = approx_measurement(g, 4, u, prior, scheme);
    CHECK(oracle::max_abs_diff(ma.h, mr.h) < 1e-7);
    CHECK(oracle::max_abs_diff(ma.C, mr.C) < 1e-7);
    CHECK(oracle::max_abs_diff(ma.R, mr.R) < 1e-7);
  }
}

TEST_CASE("turn dynamics are exact under the Gaussian approximation") {
  const TurnModel tm = builtin_turn_model();
  // wrap the (linear) turn dynamics with a zero-noise u part; blocks come back unchanged
  GeneralModel g;
  g.n_u = 1;
  g.n_z = 4;
  g.n_v = 2;
  g.dynamics = [&tm](int t, const Vector& u, const Vector& z, const Vector& v) {
    const LinearDynamics d = tm.dynamics.dynamics(t, u);
    Vector x(5);
    x << u, d.f + d.A * z + d.F * v;
    return x;
  };
  const Vector u = vs(0.05);
  const ArtificialPrior prior{(Vector(4) << 1000, -200, 8, 3).finished(), Matrix::Identity(4, 4)};
  const MixedBlocks b = approx_dynamics(g, 3, u, prior, Taylor1Scheme());
  const LinearDynamics d = tm.dynamics.dynamics(3, u);
  CHECK(oracle::max_abs_diff(b.A, d.A) < 1e-6);
  CHECK(oracle::max_abs_diff(b.f, d.f) < 1e-6);
  CHECK(oracle::max_abs_diff(b.F * b.F.transpose(), d.F * d.F.transpose()) < 1e-5);
}

TEST_CASE("range-bearing linearization") {
  const TurnModel tm = builtin_turn_model();
  const GeneralModel& g = tm.measurement;
  const Vector z = (Vector(4) << 100.0, 0.0, 5.0, 5.0).finished();
  const LinearMeasurement m = approx_measurement(g, 1, vs(0), {z, Matrix::Identity(4, 4)}, Taylor1Scheme());
  // bearing: d/dpy = 1/r; range: d/dpx = 1
  CHECK(m.C(0, 1) == doctest::Approx(0.01));
  CHECK(m.C(1, 0) == doctest::Approx(1.0));
  CHECK(std::abs(m.C(0, 0)) < 1e-14);
  CHECK(m.R(0, 0) == doctest::Approx(tm.params.sigma_b * tm.params.sigma_b));
  CHECK(m.R(1, 1) == doctest::Approx(tm.params.sigma_r * tm.params.sigma_r));
  // analytic hook agrees with finite differences
  GeneralModel nohook = g;
  nohook.measurement_jacobian = nullptr;
  const Vector z2 = (Vector(4) << -300.0, 420.0, 0.0, 0.0).finished();
  const auto a = approx_measurement(g, 1, vs(0), {z2, Matrix::Identity(4, 4)}, Taylor1Scheme());
  const auto fd = approx_measurement(nohook, 1, vs(0), {z2, Matrix::Identity(4, 4)}, Taylor1Scheme());
  CHECK(oracle::max_abs_diff(a.C, fd.C) < 1e-7);

  check_error(Errc::NonFiniteJacobian,
              [&] { approx_measurement(g, 1, vs(0), {Vector::Zero(4), Matrix::Identity(4, 4)}, Taylor1Scheme()); });

  GeneralModel noiseless = g;
  noiseless.measurement_jacobian = nullptr;
  noiseless.measurement = [](int, const Vector&, const Vector& z, const Vector&) { return Vector(z.head(2)); };
  check_error(Errc::RDegenerate,
              [&] { approx_measurement(noiseless, 1, vs(0), {z, Matrix::Identity(4, 4)}, Taylor1Scheme()); });
}

TEST_CASE("approximate pipeline on the turn model") {
  const TurnModel tm = builtin_turn_model();
  const Trajectory tr = simulate_turn_benchmark(tm, 50, 4);
  const SmootherRun run = approx_rbpf_rbps_run(tm.dynamics, tm.measurement, tr.y, {.N = 100, .M = 100}, 5);
  REQUIRE(run.trajectories.size() == 100);
  for (int k = 0; k < 50; ++k)
    for (int i = 0; i < 100; ++i)
      CHECK(run.filter.meas_lin[k][i] == run.filter.filtered[k][i].mean);
  for (const auto& t : run.trajectories) {
    REQUIRE(t.smoothed.size() == 50);
    for (int k = 0; k < 50; ++k) {
      CHECK(t.smoothed[k].mean.allFinite());
      const int i = t.index[k];
      REQUIRE(i >= 0);
      CHECK(t.meas[k].C == run.filter.meas[k][i].C);
    }
  }
  // smoothed position tracks the truth far better than the prior spread
  double err = 0.0;
  for (int k = 0; k < 50; ++k) {
    Vector mean = Vector::Zero(4);
    for (const auto& t : run.trajectories) mean += t.smoothed[k].mean / 100.0;
    err += (mean.head(2) - tr.z[k].head(2)).squaredNorm() / 50.0;
  }
  CHECK(std::sqrt(err) < 100.0);
}

TEST_CASE("wrapped CLG model reproduces the exact pipeline") {
  const MixedModel m = builtin_theta_model();
  const Trajectory tr = simulate(m, 40, 6);
  for (bool hooks : {true, false}) {
    const SmootherRun a = approx_rbpf_rbps_run(wrap_as_general(m, hooks), tr.y, {.N = 50, .M = 10}, 7);
    const FilterOutput f = rbpf_run(m, tr.y, {.N = 50}, 7);
    auto b = backward_simulate(f, m, tr.y, 10, {}, 7);
    double worst = 0.0;
    for (int j = 0; j < 10; ++j) {
      smooth_linear(m, b[j], tr.y);
      for (int k = 0; k < 40; ++k) {
        CHECK(a.trajectories[j].index[k] == b[j].index[k]);
        worst = std::max(worst, oracle::max_abs_diff(a.trajectories[j].smoothed[k].mean, b[j].smoothed[k].mean));
      }
    }
    CHECK(worst < (hooks ? 1e-9 : 1e-4));
  }
}
