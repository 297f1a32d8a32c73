#include <cmath>
#include <numbers>

#include "doctest.h"
#include "oracles.hpp"
#include "rbps/kalman.hpp"

using namespace rbps;

namespace {

Matrix scalar(double v) { return Matrix::Constant(1, 1, v); }
Vector vscalar(double v) { return Vector::Constant(1, v); }

}  // namespace

TEST_CASE("systematic_resample examples") {
  const std::vector<double> uni(4, 0.25);
  Rng rng = make_stream(1, StreamTag::Plain);
  auto idx = systematic_resample(uni, rng);
  std::sort(idx.begin(), idx.end());
  CHECK(idx == std::vector<int>{0, 1, 2, 3});

  const std::vector<double> onehot{1.0, 0.0, 0.0};
  CHECK(systematic_resample(onehot, rng) == std::vector<int>{0, 0, 0});

  const std::vector<double> half{0.5, 0.5};
  for (double u0 : {0.0, 0.37, 0.999999}) {
    const auto r = systematic_resample(half, 100000, u0);
    const long zeros = std::count(r.begin(), r.end(), 0);
    CHECK(std::abs(zeros - 50000) <= 1);
  }

  const std::vector<double> dead{0.0, std::nan("")};
  try {
    systematic_resample(dead, rng);
    FAIL("expected DegenerateWeights");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::DegenerateWeights);
  }
}

TEST_CASE("systematic_resample multiplicities stay within one of N w_i") {
  const std::vector<double> w{0.1, 0.45, 0.05, 0.3, 0.1};
  for (double u0 : {0.01, 0.5, 0.93}) {
    const auto r = systematic_resample(w, 1000, u0);
    for (int i = 0; i < 5; ++i) CHECK(std::abs(double(std::count(r.begin(), r.end(), i)) - 1000 * w[i]) <= 1.0);
  }
}

TEST_CASE("ess examples") {
  CHECK(ess(std::vector<double>(8, 0.125)) == doctest::Approx(8.0));
  CHECK(ess(std::vector<double>{0, 1, 0}) == doctest::Approx(1.0));
  CHECK(ess(std::vector<double>{0.75, 0.25}) == doctest::Approx(1.6));
}

TEST_CASE("kf_meas_update examples") {
  MomentGaussian<> prior{vscalar(0), scalar(1)};
  const auto a = kf_meas_update(prior, vscalar(0.5), scalar(0), scalar(std::sqrt(2.0)), vscalar(1.0));
  CHECK(a.moment.mean(0) == doctest::Approx(0.0));
  CHECK(a.moment.cov()(0, 0) == doctest::Approx(1.0));
  CHECK(a.log_lik == doctest::Approx(oracle::log_normal(vscalar(1.0), vscalar(0.5), scalar(2.0))));

  const auto b = kf_meas_update(prior, vscalar(0), scalar(1), scalar(1), vscalar(2));
  CHECK(b.moment.mean(0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(b.moment.cov()(0, 0) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(b.log_lik == doctest::Approx(oracle::log_normal(vscalar(2), vscalar(0), scalar(2))).epsilon(1e-14));

  const auto c = kf_meas_update(prior, vscalar(0), scalar(1), scalar(1e4), vscalar(2));
  CHECK(c.moment.mean(0) == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(c.moment.cov()(0, 0) == doctest::Approx(1.0).epsilon(1e-7));
}

TEST_CASE("kf_meas_update matches the covariance-form update on random inputs") {
  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 10; ++rep) {
    const int n = 1 + rep % 4, m = 1 + rep % 3;
    const Matrix P = oracle::random_spd(rng, n), R = oracle::random_spd(rng, m);
    const Vector mean = oracle::random_matrix(rng, n, 1), h = oracle::random_matrix(rng, m, 1),
                 y = oracle::random_matrix(rng, m, 1);
    const Matrix C = oracle::random_matrix(rng, m, n);
    const auto got = kf_meas_update({mean, chol_psd(P)}, h, C, chol_psd(R), y);
    double ll = 0.0;
    const auto ref = oracle::measure({mean, P}, LinearMeasurement{h, C, R}, y, &ll);
    CHECK(oracle::max_abs_diff(got.moment.mean, ref.m) < 1e-10);
    CHECK(oracle::max_abs_diff(got.moment.cov(), ref.P) < 1e-10);
    CHECK(got.log_lik == doctest::Approx(ll).epsilon(1e-11));
    CHECK(oracle::max_abs_diff(Matrix(got.moment.sqrt_cov.triangularView<Eigen::StrictlyUpper>()),
                               Matrix::Zero(n, n)) == 0.0);
  }
}

TEST_CASE("kf_time_update_hier examples") {
  MomentGaussian<> m{vscalar(0.7), scalar(1.3)};
  const auto a = kf_time_update_hier(m, vscalar(0), scalar(1), scalar(0));
  CHECK(a.mean(0) == doctest::Approx(0.7));
  CHECK(a.cov()(0, 0) == doctest::Approx(1.69));

  const auto b = kf_time_update_hier({vscalar(0), scalar(1)}, vscalar(3), scalar(2), scalar(1));
  CHECK(b.mean(0) == doctest::Approx(3.0));
  CHECK(b.cov()(0, 0) == doctest::Approx(5.0));

  std::mt19937_64 rng(9);
  const Matrix P = oracle::random_spd(rng, 3), A = oracle::random_matrix(rng, 3, 3);
  Matrix F = oracle::random_matrix(rng, 3, 2);
  F.row(1).setZero();
  const auto c = kf_time_update_hier({Vector::Zero(3), chol_psd(P)}, Vector::Ones(3), A, F);
  CHECK(oracle::max_abs_diff(c.cov(), A * P * A.transpose() + F * F.transpose()) < 1e-12);
}

TEST_CASE("kf_time_update_mixed examples and joint-Gaussian oracle") {
  // scalar conditioning example
  MixedBlocks s{vscalar(0), scalar(1), scalar(1), vscalar(0), scalar(1), scalar(0)};
  const auto a = kf_time_update_mixed({vscalar(0), scalar(1)}, vscalar(1), s);
  CHECK(a.mean(0) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(a.cov()(0, 0) == doctest::Approx(0.5).epsilon(1e-14));

  // B = 0 with disjoint noise support reduces to the hierarchical step
  MixedBlocks d;
  d.g = vscalar(0.2);
  d.B = Matrix::Zero(1, 2);
  d.G = (Matrix(1, 3) << 0.7, 0, 0).finished();
  d.f = (Vector(2) << 0.1, -0.3).finished();
  d.A = (Matrix(2, 2) << 0.9, 0.2, -0.1, 0.5).finished();
  d.F = (Matrix(2, 3) << 0, 0.4, 0.1, 0, 0, 0.3).finished();
  MomentGaussian<> m2{(Vector(2) << 1.0, 2.0).finished(), (Matrix(2, 2) << 1.0, 0, 0.3, 0.8).finished()};
  const auto mixed = kf_time_update_mixed(m2, vscalar(-0.4), d);
  const auto hier = kf_time_update_hier(m2, d.f, d.A, d.F);
  CHECK(oracle::max_abs_diff(mixed.mean, hier.mean) < 1e-14);
  CHECK(oracle::max_abs_diff(mixed.cov(), hier.cov()) < 1e-14);

  // random u-dependent model: compare with conditioning of the exact joint Gaussian
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const MixedModel model = oracle::random_mixed_model(seed, 1, 2, 1);
    std::mt19937_64 rng(seed);
    const Matrix P = oracle::random_spd(rng, 2);
    const Vector mean = oracle::random_matrix(rng, 2, 1), u = oracle::random_matrix(rng, 1, 1);
    const Vector un = oracle::random_matrix(rng, 1, 1);
    const MixedBlocks b = model.dynamics(3, u, mean);
    double ll = 0.0, ll_ref = 0.0;
    const auto got = kf_time_update_mixed({mean, chol_psd(P)}, un, b, &ll);
    const auto ref = oracle::mixed_step({mean, P}, b, un, &ll_ref);
    CHECK(oracle::max_abs_diff(got.mean, ref.m) < 1e-11);
    CHECK(oracle::max_abs_diff(got.cov(), ref.P) < 1e-11);
    CHECK(ll == doctest::Approx(ll_ref).epsilon(1e-11));
    const auto pred = mixed_u_predictive({mean, chol_psd(P)}, b);
    CHECK(log_mvn_pdf(un, pred.mean, pred.sqrt_cov) == doctest::Approx(ll_ref).epsilon(1e-11));
  }

  MixedBlocks bad = s;
  bad.G = scalar(0);
  try {
    kf_time_update_mixed({vscalar(0), scalar(1)}, vscalar(1), bad);
    FAIL("expected QNotPD");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::QNotPD);
  }
}

TEST_CASE("categorical draws from cumulative weights") {
  const std::vector<double> w{0.2, 0.0, 0.5, 0.3};
  const auto cdf = cumulative(w);
  CHECK(draw_from_cdf(cdf, 0.0) == 0);
  CHECK(draw_from_cdf(cdf, 0.19) == 0);
  CHECK(draw_from_cdf(cdf, 0.2) == 2);
  CHECK(draw_from_cdf(cdf, 0.71) == 3);
  CHECK(draw_from_cdf(cdf, 0.9999999) == 3);
}
