/**
 * @file bench.hpp
 * @brief Benchmark harness: model/algorithm dispatch and batched RMSE tables.
 */
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "rbps/approx.hpp"
#include "rbps/baselines.hpp"
#include "rbps/io.hpp"
#include "rbps/metrics.hpp"
#include "rbps/models.hpp"

namespace rbps {

struct RunConfig {
  std::string model = "theta";  // theta | turn
  int T = 100;
  int N = 300;
  int M = 100;
  int R = 10;
  std::string algo = "rbps";  // ffbs | rbfs | rbffjbs | rbps | rbps-mcmc
  std::vector<std::string> algos;
  int batches = 10;
  std::uint64_t seed = 1;
  ResamplePolicy resample = ResamplePolicy::Adaptive;
  bool sqrt = false;
  int threads = 0;  // 0: hardware concurrency
  std::string data_path, traj_out, metrics_out, out;
};

/// Throws ConfigError on invalid values; returns non-fatal warnings (e.g. M > N).
std::vector<std::string> check_config(const RunConfig& cfg, bool bench_mode);
/// Overrides fields of cfg from a key-value config (keys match the field names).
void apply_config(RunConfig& cfg, const Config& kv);

bool is_known_algo(const std::string& algo);

/// One of the built-in benchmark systems, ready for the smoothers.
struct BenchModel {
  std::string id;
  std::variant<MixedModel, HierarchicalModel> model;
  TurnModel turn;  // populated for the turn model only

  bool mixed() const { return model.index() == 0; }
};
BenchModel make_bench_model(const std::string& id);

Trajectory simulate_benchmark(const BenchModel& bm, int T, std::uint64_t seed);

/// Runs one smoother on y; `seed` drives the forward filter and the backward pass.
std::vector<SmoothedPath> run_smoother(const BenchModel& bm, const std::string& algo, const std::vector<Vector>& y,
                                       const RunConfig& cfg, std::uint64_t seed, FilterOutput* filter_out = nullptr);

/// rmse_second: theta for theta, full z for turn.
MetricSeries evaluate_benchmark(const BenchModel& bm, const std::vector<SmoothedPath>& paths, const Trajectory& truth);

struct BenchRow {
  std::string algo;
  std::vector<double> rmse_u, rmse_second;       // per batch
  std::vector<std::vector<int>> unique;          // per batch, per t
  std::vector<std::vector<double>> log_density;  // per batch, per t (empty for ffbs)
  double mean_u = 0.0, mean_second = 0.0;
  double half_u = 0.0, half_second = 0.0;  // 1.96 sd / sqrt(batches)
  double seconds = 0.0;                    // summed wall time of this algorithm's runs
};

struct BenchResult {
  std::vector<BenchRow> rows;  // in the order of cfg.algos
};

std::uint64_t batch_seed(std::uint64_t master, int batch);

BenchResult run_bench(const RunConfig& cfg);

/// `algo,rmse_u,rmse_theta_or_z,ci_halfwidth` (half-width: larger of the two metrics').
void write_bench_csv(std::ostream& os, const BenchResult& res);
/// Per-batch difference (algo - reference), same data sets; CI is 1.96 sd / sqrt(batches).
struct PairedDiff {
  std::string algo, reference;
  double mean_u = 0.0, half_u = 0.0;
  double mean_second = 0.0, half_second = 0.0;
};
/// One entry per row other than `reference`. Throws ConfigError if reference is not a row.
std::vector<PairedDiff> paired_differences(const BenchResult& res, const std::string& reference);
/// `algo,reference,diff_rmse_u,ci_u,diff_rmse_second,ci_second`
void write_paired_csv(std::ostream& os, const std::vector<PairedDiff>& diffs);

/// Tidy per-time diagnostics: `algo,t,mean_unique,mean_log_density`.
void write_bench_detail_csv(std::ostream& os, const BenchResult& res);

}  // namespace rbps
