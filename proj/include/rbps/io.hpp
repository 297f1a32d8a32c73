/**
 * @file io.hpp
 * @brief CSV and key-value config serialization. Layouts are described in docs/formats.md.
 */
#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "rbps/baselines.hpp"
#include "rbps/metrics.hpp"
#include "rbps/models.hpp"
#include "rbps/rbpf.hpp"

namespace rbps {

/// Header `t,u_1..,z_1..,y_1..`; t is the public (1-based) time.
void write_trajectory_csv(std::ostream& os, const Trajectory& traj);
/// Throws ParseError naming the offending line.
Trajectory read_trajectory_csv(std::istream& is);

void save_trajectory(const std::string& path, const Trajectory& traj);
Trajectory load_trajectory(const std::string& path);

/// Header `j,t,u_1..,zsm_1..,Pdiag_1..`.
void write_smoother_csv(std::ostream& os, const std::vector<SmoothedPath>& paths);

/// Tidy `metric,t,value`; scalar metrics leave t empty.
void write_metrics_csv(std::ostream& os, const MetricSeries& m);

enum class DumpFormat { Csv, Binary };
void dump_filter(std::ostream& os, const FilterOutput& out, DumpFormat format);

/// `key = value` lines; '#' starts a comment, blank lines are skipped.
using Config = std::map<std::string, std::string>;
Config parse_config(std::istream& is);
Config load_config(const std::string& path);

}  // namespace rbps
