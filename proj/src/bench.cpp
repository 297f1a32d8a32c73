#include "rbps/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <iomanip>
#include <limits>
#include <mutex>
#include <ostream>
#include <thread>
#include <type_traits>

#include "rbps/backward.hpp"
#include "rbps/rbpf.hpp"

namespace rbps {

namespace {

const char* const kAlgos[] = {"ffbs", "rbfs", "rbffjbs", "rbps", "rbps-mcmc"};

int to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long x = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return static_cast<int>(x);
  } catch (const std::exception&) {
    throw Error(Errc::ConfigError, "config key '" + key + "' expects an integer, got '" + v + "'");
  }
}

bool to_switch(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw Error(Errc::ConfigError, "config key '" + key + "' expects on|off, got '" + v + "'");
}

}  // namespace

bool is_known_algo(const std::string& algo) {
  return std::find(std::begin(kAlgos), std::end(kAlgos), algo) != std::end(kAlgos);
}

std::vector<std::string> check_config(const RunConfig& cfg, bool bench_mode) {
  auto fail = [](const std::string& m) { throw Error(Errc::ConfigError, m); };
  if (cfg.model != "theta" && cfg.model != "turn") fail("unknown model '" + cfg.model + "' (theta|turn)");
  if (cfg.T < 1 || cfg.N < 1 || cfg.M < 1 || cfg.R < 1) fail("T, N, M and R must all be >= 1");
  if (bench_mode && cfg.batches < 1) fail("batches must be >= 1");
  if (cfg.threads < 0) fail("threads must be >= 0");
  const std::vector<std::string> algos = bench_mode ? cfg.algos : std::vector<std::string>{cfg.algo};
  if (algos.empty()) fail("no algorithm given");
  for (const auto& a : algos) {
    if (!is_known_algo(a)) fail("unknown algorithm '" + a + "' (ffbs|rbfs|rbffjbs|rbps|rbps-mcmc)");
    if (a == "ffbs" && cfg.model == "turn")
      fail("ffbs is not supported on the turn model: its state noise is rank deficient and the joint "
           "particle filter does not track the target");
  }
  std::vector<std::string> warn;
  if (cfg.M > cfg.N)
    warn.push_back("M = " + std::to_string(cfg.M) + " exceeds N = " + std::to_string(cfg.N) +
                   "; M <= N is recommended");
  return warn;
}

void apply_config(RunConfig& cfg, const Config& kv) {
  for (const auto& [k, v] : kv) {
    if (k == "model") cfg.model = v;
    else if (k == "T") cfg.T = to_int(k, v);
    else if (k == "N") cfg.N = to_int(k, v);
    else if (k == "M") cfg.M = to_int(k, v);
    else if (k == "R") cfg.R = to_int(k, v);
    else if (k == "algo") cfg.algo = v;
    else if (k == "batches") cfg.batches = to_int(k, v);
    else if (k == "seed") cfg.seed = static_cast<std::uint64_t>(to_int(k, v));
    else if (k == "threads") cfg.threads = to_int(k, v);
    else if (k == "sqrt") cfg.sqrt = to_switch(k, v);
    else if (k == "resample") {
      if (v == "adaptive") cfg.resample = ResamplePolicy::Adaptive;
      else if (v == "always") cfg.resample = ResamplePolicy::Always;
      else if (v == "never") cfg.resample = ResamplePolicy::Never;
      else throw Error(Errc::ConfigError, "resample expects adaptive|always|never, got '" + v + "'");
    } else if (k == "algos") {
      cfg.algos.clear();
      std::string cur;
      for (char c : v + ",") {
        if (c == ',') {
          if (!cur.empty()) cfg.algos.push_back(cur);
          cur.clear();
        } else if (c != ' ') {
          cur += c;
        }
      }
    } else {
      throw Error(Errc::ConfigError, "unknown config key '" + k + "'");
    }
  }
}

BenchModel make_bench_model(const std::string& id) {
  BenchModel bm;
  bm.id = id;
  if (id == "theta") {
    bm.model = builtin_theta_model();
  } else if (id == "turn") {
    bm.turn = builtin_turn_model();
    bm.model = linearize_measurement(bm.turn.dynamics, bm.turn.measurement);
  } else {
    throw Error(Errc::ConfigError, "unknown model '" + id + "'");
  }
  return bm;
}

Trajectory simulate_benchmark(const BenchModel& bm, int T, std::uint64_t seed) {
  if (bm.mixed()) return simulate(std::get<MixedModel>(bm.model), T, seed);
  return simulate_turn_benchmark(bm.turn, T, seed);
}

namespace {

template <typename Model>
std::vector<SmoothedPath> dispatch(const Model& model, const std::string& algo, const std::vector<Vector>& y,
                                   const RunConfig& cfg, std::uint64_t seed, FilterOutput* filter_out) {
  RbpfOptions ro;
  ro.N = cfg.N;
  ro.resample = cfg.resample;
  if (algo == "ffbs") {
    if constexpr (std::is_same_v<Model, MixedModel>) {
      return ffbs_run(model, y, ro, cfg.M, seed);
    } else {
      throw Error(Errc::ConfigError, "ffbs is not supported on the turn model");
    }
  }
  FilterOutput filter = rbpf_run(model, y, ro, seed);
  std::vector<SmoothedPath> paths;
  if (algo == "rbfs") {
    paths = rbfs_run(filter, model, y, cfg.M, seed);
  } else if (algo == "rbffjbs") {
    paths = rbffjbs_run(filter, model, y, cfg.M, seed);
  } else if (algo == "rbps" || algo == "rbps-mcmc") {
    std::vector<BackwardTrajectory> trajs;
    if (algo == "rbps") {
      BackwardOptions bo;
      bo.sqrt = cfg.sqrt;
      trajs = backward_simulate(filter, model, y, cfg.M, bo, seed);
    } else {
      McmcOptions mo;
      mo.R = cfg.R;
      mo.sqrt = cfg.sqrt;
      trajs = mcmc_backward_simulate(filter, model, y, cfg.M, mo, std::nullopt, seed);
    }
    for (auto& tr : trajs) smooth_linear(model, tr, y);
    paths = to_paths(trajs);
  } else {
    throw Error(Errc::ConfigError, "unknown algorithm '" + algo + "'");
  }
  if (filter_out) *filter_out = std::move(filter);
  return paths;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / double(v.size());
}

double half_width(const std::vector<double>& v) {
  if (v.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return 1.96 * std::sqrt(ss / double(v.size() - 1)) / std::sqrt(double(v.size()));
}

}  // namespace

std::vector<SmoothedPath> run_smoother(const BenchModel& bm, const std::string& algo, const std::vector<Vector>& y,
                                       const RunConfig& cfg, std::uint64_t seed, FilterOutput* filter_out) {
  return std::visit([&](const auto& m) { return dispatch(m, algo, y, cfg, seed, filter_out); }, bm.model);
}

MetricSeries evaluate_benchmark(const BenchModel& bm, const std::vector<SmoothedPath>& paths, const Trajectory& truth) {
  std::function<Vector(const Vector&)> second;
  if (bm.mixed()) second = [](const Vector& z) { return Vector::Constant(1, theta_of(z)); };
  const bool density = (paths.front().z.front().sqrt_cov.diagonal().array() > 0.0).all();
  return evaluate(paths, truth, second, density);
}

std::uint64_t batch_seed(std::uint64_t master, int batch) {
  Rng rng = make_stream(master, StreamTag::Batch, static_cast<std::uint64_t>(batch));
  return rng();
}

BenchResult run_bench(const RunConfig& cfg) {
  check_config(cfg, true);
  const BenchModel bm = make_bench_model(cfg.model);
  const int B = cfg.batches;
  const std::size_t A = cfg.algos.size();
  std::vector<std::vector<MetricSeries>> results(A, std::vector<MetricSeries>(B));
  std::vector<std::vector<double>> secs(A, std::vector<double>(B, 0.0));

  std::atomic<int> next{0};
  std::mutex err_mu;
  std::exception_ptr first_err;
  int first_err_batch = std::numeric_limits<int>::max();
  auto worker = [&] {
    for (;;) {
      const int b = next.fetch_add(1);
      if (b >= B) return;
      try {
        const std::uint64_t s = batch_seed(cfg.seed, b);
        const Trajectory truth = simulate_benchmark(bm, cfg.T, s);
        for (std::size_t a = 0; a < A; ++a) {
          const auto t0 = std::chrono::steady_clock::now();
          const auto paths = run_smoother(bm, cfg.algos[a], truth.y, cfg, s);
          results[a][b] = evaluate_benchmark(bm, paths, truth);
          secs[a][b] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        }
      } catch (...) {
        std::lock_guard<std::mutex> lk(err_mu);
        if (b < first_err_batch) {
          first_err_batch = b;
          first_err = std::current_exception();
        }
      }
    }
  };
  const int nthreads = std::max(1, std::min(B, cfg.threads > 0 ? cfg.threads
                                                                : int(std::thread::hardware_concurrency())));
  if (nthreads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < nthreads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (first_err) std::rethrow_exception(first_err);

  BenchResult res;
  for (std::size_t a = 0; a < A; ++a) {
    BenchRow row;
    row.algo = cfg.algos[a];
    for (int b = 0; b < B; ++b) {
      row.rmse_u.push_back(results[a][b].rmse_u);
      row.rmse_second.push_back(results[a][b].rmse_second);
      row.unique.push_back(std::move(results[a][b].unique));
      row.log_density.push_back(std::move(results[a][b].log_density));
      row.seconds += secs[a][b];
    }
    row.mean_u = mean_of(row.rmse_u);
    row.mean_second = mean_of(row.rmse_second);
    row.half_u = half_width(row.rmse_u);
    row.half_second = half_width(row.rmse_second);
    res.rows.push_back(std::move(row));
  }
  return res;
}

void write_bench_csv(std::ostream& os, const BenchResult& res) {
  const auto prec = os.precision(6);
  os << "algo,rmse_u,rmse_theta_or_z,ci_halfwidth\n";
  for (const auto& r : res.rows)
    os << r.algo << ',' << r.mean_u << ',' << r.mean_second << ',' << std::max(r.half_u, r.half_second) << '\n';
  os.precision(prec);
}

std::vector<PairedDiff> paired_differences(const BenchResult& res, const std::string& reference) {
  const auto ref = std::find_if(res.rows.begin(), res.rows.end(), [&](const BenchRow& r) { return r.algo == reference; });
  if (ref == res.rows.end()) throw Error(Errc::ConfigError, "paired reference not in the algorithm list: " + reference);
  std::vector<PairedDiff> out;
  for (const auto& r : res.rows) {
    if (r.algo == reference) continue;
    std::vector<double> du(r.rmse_u.size()), ds(r.rmse_second.size());
    for (std::size_t b = 0; b < du.size(); ++b) du[b] = r.rmse_u[b] - ref->rmse_u[b];
    for (std::size_t b = 0; b < ds.size(); ++b) ds[b] = r.rmse_second[b] - ref->rmse_second[b];
    out.push_back({r.algo, reference, mean_of(du), half_width(du), mean_of(ds), half_width(ds)});
  }
  return out;
}

void write_paired_csv(std::ostream& os, const std::vector<PairedDiff>& diffs) {
  const auto prec = os.precision(6);
  os << "algo,reference,diff_rmse_u,ci_u,diff_rmse_second,ci_second\n";
  for (const auto& d : diffs)
    os << d.algo << ',' << d.reference << ',' << d.mean_u << ',' << d.half_u << ',' << d.mean_second << ','
       << d.half_second << '\n';
  os.precision(prec);
}

void write_bench_detail_csv(std::ostream& os, const BenchResult& res) {
  os << "algo,t,mean_unique,mean_log_density\n";
  for (const auto& r : res.rows) {
    if (r.unique.empty()) continue;
    const std::size_t T = r.unique.front().size();
    for (std::size_t t = 0; t < T; ++t) {
      double u = 0.0, ld = 0.0;
      bool has_ld = true;
      for (std::size_t b = 0; b < r.unique.size(); ++b) {
        u += r.unique[b][t];
        if (r.log_density[b].size() == T) ld += r.log_density[b][t];
        else has_ld = false;
      }
      const double nb = double(r.unique.size());
      os << r.algo << ',' << t + 1 << ',' << u / nb << ',';
      if (has_ld) os << ld / nb;
      os << '\n';
    }
  }
}

}  // namespace rbps
