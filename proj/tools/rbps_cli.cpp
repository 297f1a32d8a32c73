// Command-line front end: simulate, smooth, bench.
#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <string>

#include "rbps/bench.hpp"
#include "rbps/io.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

std::ofstream open_or_throw(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw rbps::Error(rbps::Errc::ConfigError, "cannot open for writing: " + path);
  f.precision(17);
  return f;
}

void warn_all(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rao-Blackwellized particle smoothing for conditionally linear Gaussian models"};
  app.require_subcommand(1);

  rbps::RunConfig cfg;
  std::string config_path, sqrt_flag = "off", resample = "adaptive", dump_path, dump_format = "csv", detail_out;
  std::string paired_out, paired_ref = "rbps";
  std::uint64_t seed = 1;

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key = value file; command-line flags take precedence");
  };
  auto add_model = [&](CLI::App* sub) {
    sub->add_option("--model", cfg.model, "theta|turn")->check(CLI::IsMember({"theta", "turn"}));
  };

  CLI::App* sim = app.add_subcommand("simulate", "simulate a benchmark trajectory to CSV");
  add_model(sim);
  sim->add_option("--T", cfg.T, "number of time steps");
  sim->add_option("--seed", seed, "master seed")->required();
  sim->add_option("--out", cfg.out, "trajectory CSV")->required();
  add_config(sim);

  CLI::App* sm = app.add_subcommand("smooth", "run one smoother on a trajectory CSV");
  sm->add_option("--algo", cfg.algo, "ffbs|rbfs|rbffjbs|rbps|rbps-mcmc")->required();
  add_model(sm);
  sm->add_option("--N", cfg.N, "forward particles");
  sm->add_option("--M", cfg.M, "backward trajectories");
  sm->add_option("--R", cfg.R, "MCMC steps per time (rbps-mcmc)");
  sm->add_option("--sqrt", sqrt_flag, "square-root backward recursions")->check(CLI::IsMember({"on", "off"}));
  sm->add_option("--data", cfg.data_path, "trajectory CSV")->required();
  sm->add_option("--seed", seed, "seed")->required();
  sm->add_option("--traj-out", cfg.traj_out, "smoothed trajectory CSV")->required();
  sm->add_option("--metrics-out", cfg.metrics_out, "metrics CSV")->required();
  sm->add_option("--resample", resample, "adaptive|always|never")->check(CLI::IsMember({"adaptive", "always", "never"}));
  sm->add_option("--dump-filter", dump_path, "write the forward filter history");
  sm->add_option("--dump-format", dump_format, "csv|binary")->check(CLI::IsMember({"csv", "binary"}));
  add_config(sm);

  CLI::App* be = app.add_subcommand("bench", "batched RMSE table");
  add_model(be);
  be->add_option("--batches", cfg.batches, "independent data sets");
  be->add_option("--N", cfg.N, "forward particles");
  be->add_option("--M", cfg.M, "backward trajectories");
  be->add_option("--R", cfg.R, "MCMC steps per time (rbps-mcmc)");
  be->add_option("--T", cfg.T, "time steps per data set");
  be->add_option("--algos", cfg.algos, "comma-separated algorithms")->delimiter(',');
  be->add_option("--sqrt", sqrt_flag, "square-root backward recursions")->check(CLI::IsMember({"on", "off"}));
  be->add_option("--seed", seed, "master seed")->required();
  be->add_option("--out", cfg.out, "table CSV")->required();
  be->add_option("--detail-out", detail_out, "per-time diagnostics CSV");
  be->add_option("--paired-out", paired_out, "paired differences against --paired-ref");
  be->add_option("--paired-ref", paired_ref, "reference algorithm for paired differences");
  be->add_option("--threads", cfg.threads, "worker threads (0: all cores)");
  add_config(be);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (!config_path.empty()) {
      // Re-apply explicit flags on top of the file.
      rbps::RunConfig from_file;
      rbps::apply_config(from_file, rbps::load_config(config_path));
      CLI::App* sub = app.get_subcommands().front();
      auto given = [&](const char* flag) {
        const CLI::Option* o = sub->get_option_no_throw(flag);
        return o != nullptr && o->count() > 0;
      };
      if (!given("--model")) cfg.model = from_file.model;
      if (!given("--T")) cfg.T = from_file.T;
      if (!given("--N")) cfg.N = from_file.N;
      if (!given("--M")) cfg.M = from_file.M;
      if (!given("--R")) cfg.R = from_file.R;
      if (!given("--batches")) cfg.batches = from_file.batches;
      if (!given("--algos") && !from_file.algos.empty()) cfg.algos = from_file.algos;
      if (!given("--sqrt")) sqrt_flag = from_file.sqrt ? "on" : "off";
      if (!given("--threads")) cfg.threads = from_file.threads;
      if (!given("--resample") && from_file.resample == rbps::ResamplePolicy::Always) resample = "always";
      if (!given("--resample") && from_file.resample == rbps::ResamplePolicy::Never) resample = "never";
    }
    cfg.seed = seed;
    cfg.sqrt = sqrt_flag == "on";
    cfg.resample = resample == "always"  ? rbps::ResamplePolicy::Always
                   : resample == "never" ? rbps::ResamplePolicy::Never
                                         : rbps::ResamplePolicy::Adaptive;

    if (*sim) {
      if (cfg.T < 1) throw rbps::Error(rbps::Errc::ConfigError, "T must be >= 1");
      const rbps::BenchModel bm = rbps::make_bench_model(cfg.model);
      rbps::save_trajectory(cfg.out, rbps::simulate_benchmark(bm, cfg.T, cfg.seed));
    } else if (*sm) {
      const rbps::Trajectory data = rbps::load_trajectory(cfg.data_path);
      cfg.T = data.length();
      warn_all(rbps::check_config(cfg, false));
      const rbps::BenchModel bm = rbps::make_bench_model(cfg.model);
      rbps::FilterOutput filter;
      const auto paths = rbps::run_smoother(bm, cfg.algo, data.y, cfg, cfg.seed, dump_path.empty() ? nullptr : &filter);
      {
        std::ofstream f = open_or_throw(cfg.traj_out);
        rbps::write_smoother_csv(f, paths);
      }
      {
        std::ofstream f = open_or_throw(cfg.metrics_out);
        rbps::write_metrics_csv(f, rbps::evaluate_benchmark(bm, paths, data));
      }
      if (!dump_path.empty()) {
        if (cfg.algo == "ffbs") throw rbps::Error(rbps::Errc::ConfigError, "ffbs has no Rao-Blackwellized filter to dump");
        const bool bin = dump_format == "binary";
        std::ofstream f(dump_path, bin ? std::ios::binary : std::ios::out);
        if (!f) throw rbps::Error(rbps::Errc::ConfigError, "cannot open for writing: " + dump_path);
        rbps::dump_filter(f, filter, bin ? rbps::DumpFormat::Binary : rbps::DumpFormat::Csv);
      }
    } else if (*be) {
      if (cfg.algos.empty()) cfg.algos = {"rbps"};
      warn_all(rbps::check_config(cfg, true));
      const rbps::BenchResult res = rbps::run_bench(cfg);
      {
        std::ofstream f = open_or_throw(cfg.out);
        rbps::write_bench_csv(f, res);
      }
      if (!detail_out.empty()) {
        std::ofstream f = open_or_throw(detail_out);
        rbps::write_bench_detail_csv(f, res);
      }
      rbps::write_bench_csv(std::cout, res);
      if (std::find(cfg.algos.begin(), cfg.algos.end(), paired_ref) != cfg.algos.end() && cfg.algos.size() > 1) {
        const auto diffs = rbps::paired_differences(res, paired_ref);
        if (!paired_out.empty()) {
          std::ofstream f = open_or_throw(paired_out);
          rbps::write_paired_csv(f, diffs);
        }
        std::cout << '\n';
        rbps::write_paired_csv(std::cout, diffs);
      } else if (!paired_out.empty()) {
        throw rbps::Error(rbps::Errc::ConfigError, "--paired-out needs --paired-ref among the algorithms");
      }
    }
  } catch (const rbps::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.is_numerical() ? kExitNumerical : kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumerical;
  }
  return kExitOk;
}
