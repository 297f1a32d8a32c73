#include <cmath>

#include "doctest.h"
#include "rbps/bench.hpp"

using namespace rbps;

TEST_CASE("check_config errors and warnings") {
  RunConfig cfg;
  CHECK(check_config(cfg, false).empty());
  cfg.M = 500;
  CHECK(check_config(cfg, false).size() == 1);

  auto fails = [](RunConfig c, bool bench) {
    try {
      check_config(c, bench);
    } catch (const Error& e) {
      return e.code() == Errc::ConfigError;
    }
    return false;
  };
  RunConfig c = cfg;
  c.N = 0;
  CHECK(fails(c, false));
  c = cfg;
  c.algo = "magic";
  CHECK(fails(c, false));
  c = cfg;
  c.model = "turn";
  c.algo = "ffbs";
  CHECK(fails(c, false));
  c = cfg;
  c.algos = {};
  CHECK(fails(c, true));
  c.algos = {"rbps", "rbfs"};
  c.batches = 0;
  CHECK(fails(c, true));

  RunConfig d;
  apply_config(d, {{"N", "30"}, {"algos", "rbps, rbfs"}, {"sqrt", "on"}, {"resample", "always"}});
  CHECK(d.N == 30);
  CHECK(d.algos == std::vector<std::string>{"rbps", "rbfs"});
  CHECK(d.sqrt);
  CHECK(d.resample == ResamplePolicy::Always);
  CHECK_THROWS_AS(apply_config(d, {{"N", "x"}}), Error);
  CHECK_THROWS_AS(apply_config(d, {{"bogus", "1"}}), Error);
}

TEST_CASE("batch seeds are distinct and reproducible") {
  CHECK(batch_seed(1, 0) == batch_seed(1, 0));
  CHECK(batch_seed(1, 0) != batch_seed(1, 1));
  CHECK(batch_seed(1, 0) != batch_seed(2, 0));
}

TEST_CASE("every algorithm runs on the theta model") {
  const BenchModel bm = make_bench_model("theta");
  const Trajectory tr = simulate_benchmark(bm, 20, 3);
  RunConfig cfg;
  cfg.N = 40;
  cfg.M = 10;
  cfg.R = 3;
  for (const char* a : {"ffbs", "rbfs", "rbffjbs", "rbps", "rbps-mcmc"}) {
    CAPTURE(a);
    const auto paths = run_smoother(bm, a, tr.y, cfg, 4);
    REQUIRE(paths.size() == 10);
    const MetricSeries m = evaluate_benchmark(bm, paths, tr);
    CHECK(std::isfinite(m.rmse_u));
    CHECK(std::isfinite(m.rmse_second));
  }
}

TEST_CASE("run_bench is deterministic across thread counts") {
  RunConfig cfg;
  cfg.T = 20;
  cfg.N = 30;
  cfg.M = 10;
  cfg.batches = 3;
  cfg.algos = {"rbps", "rbfs"};
  cfg.threads = 1;
  const BenchResult a = run_bench(cfg);
  cfg.threads = 2;
  const BenchResult b = run_bench(cfg);
  REQUIRE(a.rows.size() == 2);
  for (std::size_t r = 0; r < 2; ++r) {
    CHECK(a.rows[r].algo == cfg.algos[r]);
    CHECK(a.rows[r].rmse_u == b.rows[r].rmse_u);
    CHECK(a.rows[r].rmse_second == b.rows[r].rmse_second);
    CHECK(a.rows[r].unique == b.rows[r].unique);
    double mean = 0.0, var = 0.0;
    for (double v : a.rows[r].rmse_u) mean += v / 3;
    for (double v : a.rows[r].rmse_u) var += (v - mean) * (v - mean) / 2;
    CHECK(a.rows[r].mean_u == doctest::Approx(mean));
    CHECK(a.rows[r].half_u == doctest::Approx(1.96 * std::sqrt(var / 3)));
  }
  std::ostringstream os;
  write_bench_csv(os, a);
  CHECK(os.str().find("rbps") != std::string::npos);
}

TEST_CASE("paired differences against a reference") {
  BenchResult res;
  BenchRow ref, other;
  ref.algo = "rbps";
  ref.rmse_u = {1.0, 2.0, 3.0};
  ref.rmse_second = {0.5, 0.5, 0.5};
  other.algo = "rbfs";
  other.rmse_u = {1.5, 2.1, 3.7};  // differences 0.5, 0.1, 0.7
  other.rmse_second = {0.5, 0.5, 0.5};
  res.rows = {other, ref};
  const auto d = paired_differences(res, "rbps");
  REQUIRE(d.size() == 1);
  CHECK(d[0].algo == "rbfs");
  CHECK(d[0].reference == "rbps");
  CHECK(d[0].mean_u == doctest::Approx(13.0 / 30));
  // sample sd of (0.5, 0.1, 0.7) is sqrt(0.093333)
  CHECK(d[0].half_u == doctest::Approx(1.96 * std::sqrt(0.28 / 3 / 3)));
  CHECK(d[0].mean_second == doctest::Approx(0.0));
  CHECK(d[0].half_second == doctest::Approx(0.0));
  CHECK_THROWS_AS(paired_differences(res, "ffbs"), Error);

  std::ostringstream os;
  write_paired_csv(os, d);
  CHECK(os.str().rfind("algo,reference,diff_rmse_u,ci_u,diff_rmse_second,ci_second\nrbfs,rbps,", 0) == 0);
}
