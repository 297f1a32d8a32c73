#include "rbps/io.hpp"

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace rbps {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, sep)) out.push_back(trim(cell));
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

[[noreturn]] void parse_fail(int line, const std::string& what) {
  throw Error(Errc::ParseError, "line " + std::to_string(line) + ": " + what);
}

double parse_double(const std::string& s, int line) {
  if (s.empty()) parse_fail(line, "empty field");
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    parse_fail(line, "not a number: '" + s + "'");
  }
  if (pos != s.size()) parse_fail(line, "not a number: '" + s + "'");
  return v;
}

void write_row(std::ostream& os, const Vector& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) os << ',' << v(i);
}

void header_block(std::ostream& os, const char* name, Eigen::Index n) {
  for (Eigen::Index i = 1; i <= n; ++i) os << ',' << name << '_' << i;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw Error(Errc::ConfigError, "cannot open for writing: " + path);
  f << std::setprecision(std::numeric_limits<double>::max_digits10);
  return f;
}

}  // namespace

namespace {

// Full round-trip precision for the duration of one writer call.
struct PrecisionGuard {
  std::ostream& os;
  std::streamsize old;
  explicit PrecisionGuard(std::ostream& o) : os(o), old(o.precision(std::numeric_limits<double>::max_digits10)) {}
  ~PrecisionGuard() { os.precision(old); }
};

}  // namespace

void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  const PrecisionGuard guard(os);
  const int T = traj.length();
  detail::require(traj.u.size() == std::size_t(T) && traj.z.size() == std::size_t(T), "trajectory lengths");
  os << 't';
  header_block(os, "u", T ? traj.u[0].size() : 0);
  header_block(os, "z", T ? traj.z[0].size() : 0);
  header_block(os, "y", T ? traj.y[0].size() : 0);
  os << '\n';
  for (int k = 0; k < T; ++k) {
    os << k + 1;
    write_row(os, traj.u[k]);
    write_row(os, traj.z[k]);
    write_row(os, traj.y[k]);
    os << '\n';
  }
}

Trajectory read_trajectory_csv(std::istream& is) {
  std::string line;
  int lineno = 0;
  if (!std::getline(is, line)) parse_fail(1, "missing header");
  ++lineno;
  const auto head = split(trim(line), ',');
  if (head.empty() || head[0] != "t") parse_fail(lineno, "header must start with 't'");
  int n[3] = {0, 0, 0};
  const char prefix[3] = {'u', 'z', 'y'};
  int block = 0;
  for (std::size_t c = 1; c < head.size(); ++c) {
    const std::string& h = head[c];
    while (block < 3 && (h.empty() || h[0] != prefix[block])) ++block;
    if (block == 3 || h != std::string(1, prefix[block]) + "_" + std::to_string(n[block] + 1))
      parse_fail(lineno, "unexpected column '" + h + "'");
    ++n[block];
  }
  if (n[2] == 0) parse_fail(lineno, "no measurement columns");
  const std::size_t width = 1 + n[0] + n[1] + n[2];

  Trajectory traj;
  while (std::getline(is, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto cells = split(trim(line), ',');
    if (cells.size() != width)
      parse_fail(lineno, "expected " + std::to_string(width) + " fields, got " + std::to_string(cells.size()));
    const double t = parse_double(cells[0], lineno);
    if (t != double(traj.y.size() + 1)) parse_fail(lineno, "time index out of sequence");
    std::size_t c = 1;
    auto take = [&](int m) {
      Vector v(m);
      for (int i = 0; i < m; ++i) v(i) = parse_double(cells[c++], lineno);
      return v;
    };
    traj.u.push_back(take(n[0]));
    traj.z.push_back(take(n[1]));
    traj.y.push_back(take(n[2]));
  }
  if (traj.y.empty()) parse_fail(lineno, "no data rows");
  return traj;
}

void save_trajectory(const std::string& path, const Trajectory& traj) {
  std::ofstream f = open_out(path);
  write_trajectory_csv(f, traj);
}

Trajectory load_trajectory(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(Errc::ConfigError, "cannot open: " + path);
  return read_trajectory_csv(f);
}

void write_smoother_csv(std::ostream& os, const std::vector<SmoothedPath>& paths) {
  const PrecisionGuard guard(os);
  if (paths.empty()) return;
  const auto& p0 = paths.front();
  os << "j,t";
  header_block(os, "u", p0.u[0].size());
  header_block(os, "zsm", p0.z[0].mean.size());
  header_block(os, "Pdiag", p0.z[0].mean.size());
  os << '\n';
  for (std::size_t j = 0; j < paths.size(); ++j) {
    for (std::size_t k = 0; k < paths[j].u.size(); ++k) {
      const MomentGaussian<>& g = paths[j].z[k];
      os << j + 1 << ',' << k + 1;
      write_row(os, paths[j].u[k]);
      write_row(os, g.mean);
      write_row(os, Vector(g.sqrt_cov.rowwise().squaredNorm()));
      os << '\n';
    }
  }
}

void write_metrics_csv(std::ostream& os, const MetricSeries& m) {
  const PrecisionGuard guard(os);
  os << "metric,t,value\n";
  os << "rmse_u,," << m.rmse_u << '\n';
  os << "rmse_second,," << m.rmse_second << '\n';
  for (std::size_t k = 0; k < m.unique.size(); ++k) os << "unique_particles," << k + 1 << ',' << m.unique[k] << '\n';
  for (std::size_t k = 0; k < m.log_density.size(); ++k)
    os << "log_density," << k + 1 << ',' << m.log_density[k] << '\n';
}

namespace {

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_vec(std::ostream& os, const Vector& v) {
  os.write(reinterpret_cast<const char*>(v.data()), std::streamsize(v.size() * sizeof(double)));
}

Vector lower_entries(const Matrix& l) {
  const Eigen::Index n = l.rows();
  Vector v(n * (n + 1) / 2);
  Eigen::Index c = 0;
  for (Eigen::Index r = 0; r < n; ++r)
    for (Eigen::Index q = 0; q <= r; ++q) v(c++) = l(r, q);
  return v;
}

}  // namespace

void dump_filter(std::ostream& os, const FilterOutput& out, DumpFormat format) {
  if (format == DumpFormat::Binary) {
    os.write("RBPF", 4);
    put<std::uint32_t>(os, 1);
    put<std::uint32_t>(os, out.mixed ? 1 : 0);
    for (int v : {out.T, out.N, out.n_u, out.n_z}) put<std::uint32_t>(os, std::uint32_t(v));
    for (int k = 0; k < out.T; ++k) {
      put<double>(os, out.ess[k]);
      put<std::uint8_t>(os, std::uint8_t(out.resampled[k]));
      for (int i = 0; i < out.N; ++i) {
        put<std::int32_t>(os, out.ancestors[k][i]);
        put<double>(os, out.weights[k][i]);
        put_vec(os, out.particles[k][i]);
        put_vec(os, out.filtered[k][i].mean);
        put_vec(os, lower_entries(out.filtered[k][i].sqrt_cov));
      }
    }
    return;
  }
  const PrecisionGuard guard(os);
  os << "t,i,ancestor,weight,ess,resampled";
  header_block(os, "u", out.n_u);
  header_block(os, "zmean", out.n_z);
  for (int r = 1; r <= out.n_z; ++r)
    for (int q = 1; q <= r; ++q) os << ",Gamma_" << r << '_' << q;
  os << '\n';
  for (int k = 0; k < out.T; ++k) {
    for (int i = 0; i < out.N; ++i) {
      const int a = out.ancestors[k][i];
      os << k + 1 << ',' << i + 1 << ',' << (a < 0 ? 0 : a + 1) << ',' << out.weights[k][i] << ',' << out.ess[k]
         << ',' << int(out.resampled[k]);
      write_row(os, out.particles[k][i]);
      write_row(os, out.filtered[k][i].mean);
      write_row(os, lower_entries(out.filtered[k][i].sqrt_cov));
      os << '\n';
    }
  }
}

Config parse_config(std::istream& is) {
  Config cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) parse_fail(lineno, "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) parse_fail(lineno, "empty key");
    if (cfg.count(key)) parse_fail(lineno, "duplicate key '" + key + "'");
    cfg[key] = trim(line.substr(eq + 1));
  }
  return cfg;
}

Config load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(Errc::ConfigError, "cannot open: " + path);
  return parse_config(f);
}

}  // namespace rbps
