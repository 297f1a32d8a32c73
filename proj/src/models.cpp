#include "rbps/models.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace rbps {

InitialU gaussian_initial_u(const MomentGaussian<>& prior) {
  InitialU init;
  init.sample = [prior](Rng& rng) { return sample(prior, rng); };
  init.logpdf = [prior](const Vector& u) { return log_mvn_pdf(u, prior.mean, prior.sqrt_cov); };
  return init;
}

MeasurementFn clg_measurement(std::function<Vector(int, const Vector&)> h, std::function<Matrix(int, const Vector&)> c,
                              std::function<Matrix(int, const Vector&)> r) {
  return [h = std::move(h), c = std::move(c), r = std::move(r)](int t, const Vector& u, const Vector&) {
    return LinearMeasurement{h(t, u), c(t, u), r(t, u)};
  };
}

MixedModel make_mixed_model(int n_u, int n_z, int n_v, int n_y, MixedCallbacks cb, InitialU initial_u,
                            MomentGaussian<> initial_z) {
  MixedModel m;
  m.n_u = n_u;
  m.n_z = n_z;
  m.n_v = n_v;
  m.n_y = n_y;
  m.dynamics = [cb](int t, const Vector& u, const Vector&) {
    return MixedBlocks{cb.g(t, u), cb.B(t, u), cb.G(t, u), cb.f(t, u), cb.A(t, u), cb.F(t, u)};
  };
  m.measurement = clg_measurement(cb.h, cb.C, cb.R);
  m.initial_u = std::move(initial_u);
  m.initial_z = std::move(initial_z);
  return m;
}

// ---------------------------------------------------------------------------
// Validation

namespace {

bool all_finite(const Matrix& m) { return m.allFinite(); }

bool is_pd(const Matrix& m) {
  if (m.rows() != m.cols() || m.rows() == 0) return false;
  Eigen::LLT<Matrix> llt(symmetrize(m));
  if (llt.info() != Eigen::Success) return false;
  return (llt.matrixLLT().diagonal().array() > 0.0).all();
}

struct Checker {
  std::vector<std::string> out;
  void dims(const std::string& what, Eigen::Index r, Eigen::Index c, Eigen::Index er, Eigen::Index ec) {
    if (r != er || c != ec) {
      std::ostringstream os;
      os << what << " has dimensions " << r << "x" << c << ", expected " << er << "x" << ec;
      out.push_back(os.str());
    }
  }
  void finite(const std::string& what, const Matrix& m) {
    if (!all_finite(m)) out.push_back(what + " has non-finite entries");
  }
};

void check_measurement(Checker& ck, const LinearMeasurement& meas, int n_z, int n_y, bool check_pd) {
  ck.dims("h", meas.h.rows(), meas.h.cols(), n_y, 1);
  ck.dims("C", meas.C.rows(), meas.C.cols(), n_y, n_z);
  ck.dims("R", meas.R.rows(), meas.R.cols(), n_y, n_y);
  ck.finite("h", meas.h);
  ck.finite("C", meas.C);
  ck.finite("R", meas.R);
  if (check_pd && meas.R.rows() == n_y && meas.R.cols() == n_y && !is_pd(meas.R)) ck.out.push_back("R not positive definite");
}

void check_initial(Checker& ck, const InitialU& init, const MomentGaussian<>& z0, int n_u, int n_z) {
  if (!init.sample) ck.out.push_back("initial_u sampler missing");
  if (!init.logpdf) ck.out.push_back("initial_u logpdf missing");
  ck.dims("initial_z.mean", z0.mean.rows(), z0.mean.cols(), n_z, 1);
  ck.dims("initial_z.sqrt_cov", z0.sqrt_cov.rows(), z0.sqrt_cov.cols(), n_z, n_z);
  (void)n_u;
}

std::vector<Vector> probe_points(const Vector& base, std::uint64_t seed, int count) {
  std::vector<Vector> pts{base};
  Rng rng = make_stream(seed, StreamTag::Plain, 0x7a11d);
  for (int k = 0; k < count; ++k) pts.push_back(base + standard_normal_vector(base.size(), rng));
  return pts;
}

std::vector<std::string> validate_impl(const HierarchicalModel& m, std::uint64_t seed, bool check_pd) {
  Checker ck;
  if (m.n_u <= 0 || m.n_z <= 0 || m.n_y <= 0 || m.n_v < 0) ck.out.push_back("non-positive dimensions");
  if (!m.dynamics || !m.measurement || !m.sample_transition || !m.transition_logpdf) {
    ck.out.push_back("missing callback");
    return ck.out;
  }
  check_initial(ck, m.initial_u, m.initial_z, m.n_u, m.n_z);
  if (!ck.out.empty()) return ck.out;
  Rng rng = make_stream(seed, StreamTag::Plain, 0xc4ec);
  Vector u = m.initial_u.sample(rng);
  ck.dims("initial u", u.rows(), u.cols(), m.n_u, 1);
  if (!ck.out.empty()) return ck.out;
  for (const Vector& up : probe_points(u, seed, 3)) {
    LinearDynamics d = m.dynamics(2, up);
    ck.dims("f", d.f.rows(), d.f.cols(), m.n_z, 1);
    ck.dims("A", d.A.rows(), d.A.cols(), m.n_z, m.n_z);
    ck.dims("F", d.F.rows(), d.F.cols(), m.n_z, m.n_v);
    ck.finite("f", d.f);
    ck.finite("A", d.A);
    ck.finite("F", d.F);
    check_measurement(ck, m.measurement(1, up, m.initial_z.mean), m.n_z, m.n_y, check_pd);
    Vector un = m.sample_transition(1, up, rng);
    ck.dims("sampled u", un.rows(), un.cols(), m.n_u, 1);
    if (un.size() == m.n_u && !std::isfinite(m.transition_logpdf(1, un, up)))
      ck.out.push_back("transition log-density non-finite at a sampled transition");
    if (!ck.out.empty()) break;
  }
  return ck.out;
}

std::vector<std::string> validate_impl(const MixedModel& m, std::uint64_t seed, bool check_pd) {
  Checker ck;
  if (m.n_u <= 0 || m.n_z <= 0 || m.n_y <= 0 || m.n_v <= 0) ck.out.push_back("non-positive dimensions");
  if (!m.dynamics || !m.measurement) {
    ck.out.push_back("missing callback");
    return ck.out;
  }
  check_initial(ck, m.initial_u, m.initial_z, m.n_u, m.n_z);
  if (!ck.out.empty()) return ck.out;
  Rng rng = make_stream(seed, StreamTag::Plain, 0xc4ec);
  Vector u = m.initial_u.sample(rng);
  ck.dims("initial u", u.rows(), u.cols(), m.n_u, 1);
  if (!ck.out.empty()) return ck.out;
  for (const Vector& up : probe_points(u, seed, 3)) {
    MixedBlocks b = m.dynamics(1, up, m.initial_z.mean);
    ck.dims("g", b.g.rows(), b.g.cols(), m.n_u, 1);
    ck.dims("B", b.B.rows(), b.B.cols(), m.n_u, m.n_z);
    ck.dims("G", b.G.rows(), b.G.cols(), m.n_u, m.n_v);
    ck.dims("f", b.f.rows(), b.f.cols(), m.n_z, 1);
    ck.dims("A", b.A.rows(), b.A.cols(), m.n_z, m.n_z);
    ck.dims("F", b.F.rows(), b.F.cols(), m.n_z, m.n_v);
    ck.finite("g", b.g);
    ck.finite("B", b.B);
    ck.finite("G", b.G);
    ck.finite("f", b.f);
    ck.finite("A", b.A);
    ck.finite("F", b.F);
    if (check_pd && b.G.rows() == m.n_u && b.G.cols() == m.n_v && !is_pd(b.G * b.G.transpose()))
      ck.out.push_back("Q = G G' not positive definite");
    check_measurement(ck, m.measurement(1, up, m.initial_z.mean), m.n_z, m.n_y, check_pd);
    if (!ck.out.empty()) break;
  }
  return ck.out;
}

template <typename Model>
void require_impl(const Model& m, bool check_pd) {
  auto v = validate_impl(m, 0, check_pd);
  if (!v.empty()) {
    std::string msg;
    for (const auto& s : v) msg += (msg.empty() ? "" : "; ") + s;
    throw Error(Errc::ModelInvalid, msg);
  }
}

}  // namespace

std::vector<std::string> validate(const HierarchicalModel& model, std::uint64_t seed) {
  return validate_impl(model, seed, true);
}
std::vector<std::string> validate(const MixedModel& model, std::uint64_t seed) {
  return validate_impl(model, seed, true);
}
void require_valid(const HierarchicalModel& model) { require_impl(model, true); }
void require_valid(const MixedModel& model) { require_impl(model, true); }

// ---------------------------------------------------------------------------
// Simulation

namespace {

Vector measure(const LinearMeasurement& meas, const Vector& z, Rng& rng) {
  const Matrix r_sqrt = chol_psd(meas.R);
  return meas.h + meas.C * z + r_sqrt * standard_normal_vector(meas.h.size(), rng);
}

}  // namespace

Trajectory simulate(const HierarchicalModel& model, int T, std::uint64_t seed) {
  if (T < 1) throw Error(Errc::ConfigError, "simulate: T must be >= 1");
  require_impl(model, false);
  Rng rng = make_stream(seed, StreamTag::Simulate);
  Trajectory traj;
  traj.seed = seed;
  Vector u = model.initial_u.sample(rng);
  Vector z = sample(model.initial_z, rng);
  for (int t = 1; t <= T; ++t) {
    if (t > 1) {
      u = model.sample_transition(t - 1, u, rng);
      const LinearDynamics d = model.dynamics(t, u);
      z = d.f + d.A * z + d.F * standard_normal_vector(d.F.cols(), rng);
    }
    traj.u.push_back(u);
    traj.z.push_back(z);
    traj.y.push_back(measure(model.measurement(t, u, z), z, rng));
  }
  return traj;
}

Trajectory simulate(const MixedModel& model, int T, std::uint64_t seed) {
  if (T < 1) throw Error(Errc::ConfigError, "simulate: T must be >= 1");
  require_impl(model, false);
  Rng rng = make_stream(seed, StreamTag::Simulate);
  Trajectory traj;
  traj.seed = seed;
  Vector u = model.initial_u.sample(rng);
  Vector z = sample(model.initial_z, rng);
  for (int t = 1; t <= T; ++t) {
    traj.u.push_back(u);
    traj.z.push_back(z);
    traj.y.push_back(measure(model.measurement(t, u, z), z, rng));
    if (t == T) break;
    const MixedBlocks b = model.dynamics(t, u, z);
    const Vector v = standard_normal_vector(model.n_v, rng);
    const Vector u_next = b.g + b.B * z + b.G * v;
    z = b.f + b.A * z + b.F * v;
    u = u_next;
  }
  return traj;
}

Trajectory simulate(const GeneralModel& model, int T, std::uint64_t seed) {
  if (T < 1) throw Error(Errc::ConfigError, "simulate: T must be >= 1");
  if (!model.dynamics || !model.measurement || !model.initial_u.sample)
    throw Error(Errc::ModelInvalid, "general model: missing callback");
  Rng rng = make_stream(seed, StreamTag::Simulate);
  Trajectory traj;
  traj.seed = seed;
  Vector u = model.initial_u.sample(rng);
  Vector z = sample(model.initial_z, rng);
  for (int t = 1; t <= T; ++t) {
    traj.u.push_back(u);
    traj.z.push_back(z);
    traj.y.push_back(model.measurement(t, u, z, standard_normal_vector(model.n_e, rng)));
    if (t == T) break;
    const Vector x = model.dynamics(t, u, z, standard_normal_vector(model.n_v, rng));
    if (x.size() != model.n_u + model.n_z) throw Error(Errc::ModelInvalid, "general model: dynamics output size");
    u = x.head(model.n_u);
    z = x.tail(model.n_z);
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Benchmark 1

Vector theta_coefficients() { return (Vector(4) << 0.0, 0.04, 0.044, 0.008).finished(); }

double theta_of(const Vector& z) { return 25.0 + theta_coefficients().dot(z); }

Matrix theta_transition_matrix() {
  Matrix a(4, 4);
  a << 3.0, -1.691, 0.849, -0.3201,  //
      2.0, 0.0, 0.0, 0.0,            //
      0.0, 1.0, 0.0, 0.0,            //
      0.0, 0.0, 0.5, 0.0;
  return a;
}

MixedModel builtin_theta_model() {
  const Vector c = theta_coefficients();
  const Matrix a = theta_transition_matrix();
  Matrix g_noise = Matrix::Zero(1, 5);
  g_noise(0, 0) = 0.071;
  Matrix f_noise = Matrix::Zero(4, 5);
  f_noise.rightCols(4) = 0.1 * Matrix::Identity(4, 4);

  MixedModel m;
  m.n_u = 1;
  m.n_z = 4;
  m.n_v = 5;
  m.n_y = 1;
  m.dynamics = [c, a, g_noise, f_noise](int t, const Vector& u, const Vector&) {
    const double x = u(0);
    const double ratio = x / (1.0 + x * x);
    MixedBlocks b;
    b.g = Vector::Constant(1, 0.5 * x + 25.0 * ratio + 8.0 * std::cos(1.2 * t));
    b.B = ratio * c.transpose();
    b.G = g_noise;
    b.f = Vector::Zero(4);
    b.A = a;
    b.F = f_noise;
    return b;
  };
  m.measurement = [](int, const Vector& u, const Vector&) {
    return LinearMeasurement{Vector::Constant(1, 0.05 * u(0) * u(0)), Matrix::Zero(1, 4), Matrix::Constant(1, 1, 0.1)};
  };
  m.initial_u = gaussian_initial_u({Vector::Zero(1), Matrix::Constant(1, 1, std::sqrt(5.0))});
  m.initial_z = {Vector::Zero(4), Matrix::Identity(4, 4)};
  return m;
}

// ---------------------------------------------------------------------------
// Benchmark 2

LinearDynamics constant_turn_dynamics(double w, double dt, double sigma_z) {
  double s_w, c_w, p_a, p_b;  // sin(wT)/w, (1-cos wT)/w, (1-cos wT)/w^2, (wT - sin wT)/w^2
  const double wt = w * dt;
  if (std::abs(wt) < 1e-4) {
    const double t2 = dt * dt, t3 = t2 * dt, t4 = t3 * dt, t5 = t4 * dt;
    s_w = dt - w * w * t3 / 6.0;
    c_w = w * t2 / 2.0 - w * w * w * t4 / 24.0;
    p_a = t2 / 2.0 - w * w * t4 / 24.0;
    p_b = w * t3 / 6.0 - w * w * w * t5 / 120.0;
  } else {
    s_w = std::sin(wt) / w;
    c_w = (1.0 - std::cos(wt)) / w;
    p_a = (1.0 - std::cos(wt)) / (w * w);
    p_b = (wt - std::sin(wt)) / (w * w);
  }
  const double cs = std::cos(wt), sn = std::sin(wt);
  LinearDynamics d;
  d.f = Vector::Zero(4);
  d.A.resize(4, 4);
  d.A << 1, 0, s_w, -c_w,  //
      0, 1, c_w, s_w,      //
      0, 0, cs, -sn,       //
      0, 0, sn, cs;
  d.F.resize(4, 2);
  d.F << p_a, -p_b,  //
      p_b, p_a,      //
      s_w, -c_w,     //
      c_w, s_w;
  d.F *= sigma_z;
  return d;
}

double cauchy_logpdf(double x, double scale) {
  const double r = x / scale;
  return -std::log(std::numbers::pi * scale) - std::log1p(r * r);
}

std::vector<ManeuverSegment> default_maneuver() {
  // Straight legs interleaved with 2g and 4g turns at 250 m/s.
  const double g2 = 2.0 * 9.81 / 250.0;
  const double g4 = 4.0 * 9.81 / 250.0;
  return {{20, 0.0}, {15, g2}, {15, 0.0}, {12, -g4}, {15, 0.0}, {10, g2}, {13, 0.0}};
}

Vector maneuver_start_state() { return (Vector(4) << 30000.0, 10000.0, -120.0, 219.3171).finished(); }

Trajectory maneuver_truth(const std::vector<ManeuverSegment>& segments, const Vector& z1, double dt, int T) {
  Trajectory traj;
  Vector z = z1;
  std::size_t seg = 0;
  int used = 0;
  for (int t = 1; t <= T; ++t) {
    while (seg + 1 < segments.size() && used >= segments[seg].steps) {
      ++seg;
      used = 0;
    }
    const double w = segments.empty() ? 0.0 : segments[seg].turn_rate;
    if (t > 1) z = constant_turn_dynamics(w, dt, 0.0).A * z;
    traj.u.push_back(Vector::Constant(1, w));
    traj.z.push_back(z);
    ++used;
  }
  return traj;
}

namespace {

double std_normal_cdf(double v) { return 0.5 * std::erfc(-v / std::numbers::sqrt2); }

Vector range_bearing(const Vector& z) { return (Vector(2) << std::atan2(z(1), z(0)), std::hypot(z(0), z(1))).finished(); }

}  // namespace

TurnModel builtin_turn_model(TurnParams p) {
  if (p.z0_mean.size() == 0) p.z0_mean = maneuver_start_state();
  TurnModel tm;
  tm.params = p;

  HierarchicalModel& h = tm.dynamics;
  h.n_u = 1;
  h.n_z = 4;
  h.n_v = 2;
  h.n_y = 2;
  h.dynamics = [p](int, const Vector& u) { return constant_turn_dynamics(u(0), p.dt, p.sigma_z); };
  h.sample_transition = [p](int, const Vector& u, Rng& rng) {
    const double q = uniform01(rng);
    return Vector::Constant(1, u(0) + p.cauchy_scale * std::tan(std::numbers::pi * (q - 0.5)));
  };
  h.transition_logpdf = [p](int, const Vector& un, const Vector& u) { return cauchy_logpdf(un(0) - u(0), p.cauchy_scale); };
  h.initial_u = gaussian_initial_u({Vector::Zero(1), Matrix::Constant(1, 1, std::sqrt(p.u0_var))});
  h.initial_z = {p.z0_mean, p.z0_sd.asDiagonal()};

  GeneralModel& g = tm.measurement;
  g.n_u = 1;
  g.n_z = 4;
  g.n_v = 3;
  g.n_e = 2;
  g.n_y = 2;
  g.dynamics = [p](int, const Vector& u, const Vector& z, const Vector& v) {
    const double un = u(0) + p.cauchy_scale * std::tan(std::numbers::pi * (std_normal_cdf(v(0)) - 0.5));
    const LinearDynamics d = constant_turn_dynamics(un, p.dt, p.sigma_z);
    Vector x(5);
    x(0) = un;
    x.tail(4) = d.A * z + d.F * v.tail(2);
    return x;
  };
  g.measurement = [p](int, const Vector&, const Vector& z, const Vector& e) {
    Vector y = range_bearing(z);
    y(0) += p.sigma_b * e(0);
    y(1) += p.sigma_r * e(1);
    return y;
  };
  g.measurement_jacobian = [p](int, const Vector&, const Vector& z) {
    const double r2 = z(0) * z(0) + z(1) * z(1);
    const double r = std::sqrt(r2);
    MapLinearization lin;
    lin.value = range_bearing(z);
    lin.jac_z = Matrix::Zero(2, 4);
    lin.jac_z << -z(1) / r2, z(0) / r2, 0, 0,  //
        z(0) / r, z(1) / r, 0, 0;
    lin.jac_noise = Matrix::Zero(2, 2);
    lin.jac_noise(0, 0) = p.sigma_b;
    lin.jac_noise(1, 1) = p.sigma_r;
    return lin;
  };
  g.initial_u = h.initial_u;
  g.initial_z = h.initial_z;
  return tm;
}

Trajectory simulate_turn_benchmark(const TurnModel& model, int T, std::uint64_t seed) {
  Trajectory traj = maneuver_truth(default_maneuver(), model.params.z0_mean, model.params.dt, T);
  traj.seed = seed;
  Rng rng = make_stream(seed, StreamTag::Simulate);
  for (int t = 1; t <= T; ++t) {
    traj.y.push_back(model.measurement.measurement(t, traj.u[t - 1], traj.z[t - 1],
                                                   standard_normal_vector(model.measurement.n_e, rng)));
  }
  return traj;
}

}  // namespace rbps
