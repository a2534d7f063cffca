#include "caesn/dynsys.hpp"

#include "caesn/errors.hpp"
#include "caesn/random.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace caesn::dynsys {

StateVector laminar_state() {
  StateVector q = StateVector::Zero();
  q[0] = 1.0;
  return q;
}

long MfeParams::steps_per_sample() const {
  const double ratio = sample_dt / integrator_dt;
  const long n = std::lround(ratio);
  if (n < 1 || std::abs(ratio - static_cast<double>(n)) > 1e-9 * ratio) {
    throw ConfigError("sample_dt must be an integer multiple of integrator_dt");
  }
  return n;
}

long MfeParams::sample_count(double t_span) const {
  return std::lround(t_span / sample_dt);
}

void MfeParams::validate() const {
  if (!(lx > 0.0) || !(lz > 0.0)) throw ConfigError("domain lengths must be positive");
  if (!(integrator_dt > 0.0)) throw ConfigError("integrator_dt must be positive");
  if (!(re_base > 0.0) || !(re_ctrl > 0.0)) throw ConfigError("Reynolds numbers must be positive");
  if (!(blowup_bound > 0.0)) throw ConfigError("blowup_bound must be positive");
  (void)steps_per_sample();
}

MfeCoefficients MfeCoefficients::from_geometry(double a, double b, double g) {
  const double k_ag = std::sqrt(a * a + g * g);
  const double k_bg = std::sqrt(b * b + g * g);
  const double k_abg = std::sqrt(a * a + b * b + g * g);
  const double s6 = std::sqrt(6.0);
  const double s32 = std::sqrt(1.5);

  MfeCoefficients c;
  c.forcing = b * b;
  c.damping = {b * b,
               4.0 * b * b / 3.0 + g * g,
               b * b + g * g,
               (3.0 * a * a + 4.0 * b * b) / 3.0,
               a * a + b * b,
               (3.0 * a * a + 4.0 * b * b + 3.0 * g * g) / 3.0,
               a * a + b * b + g * g,
               a * a + b * b + g * g,
               9.0 * b * b};

  auto add = [&c](int out, int i, int j, double coeff) {
    // modes are numbered 1..9 in the table below
    c.quadratic.push_back({out - 1, i - 1, j - 1, coeff});
  };

  add(1, 6, 8, -s32 * b * g / k_abg);
  add(1, 2, 3, s32 * b * g / k_bg);

  add(2, 4, 6, 5.0 * std::sqrt(2.0) * g * g / (3.0 * std::sqrt(3.0) * k_ag));
  add(2, 5, 7, -g * g / (s6 * k_ag));
  add(2, 5, 8, -a * b * g / (s6 * k_ag * k_abg));
  add(2, 1, 3, -s32 * b * g / k_bg);
  add(2, 3, 9, -s32 * b * g / k_bg);

  add(3, 4, 7, 2.0 * a * b * g / (s6 * k_ag * k_bg));
  add(3, 5, 6, 2.0 * a * b * g / (s6 * k_ag * k_bg));
  add(3, 4, 8,
      (b * b * (3.0 * a * a + g * g) - 3.0 * g * g * (a * a + g * g)) /
          (s6 * k_ag * k_bg * k_abg));

  add(4, 1, 5, -a / s6);
  add(4, 2, 6, -10.0 * a * a / (3.0 * s6 * k_ag));
  add(4, 3, 7, -s32 * a * b * g / (k_ag * k_bg));
  add(4, 3, 8, -s32 * a * a * b * b / (k_ag * k_bg * k_abg));
  add(4, 5, 9, -a / s6);

  add(5, 1, 4, a / s6);
  add(5, 2, 7, a * a / (s6 * k_ag));
  add(5, 2, 8, -a * b * g / (s6 * k_ag * k_abg));
  add(5, 4, 9, a / s6);
  add(5, 3, 6, 2.0 * a * b * g / (s6 * k_ag * k_bg));

  add(6, 1, 7, a / s6);
  add(6, 1, 8, s32 * b * g / k_abg);
  add(6, 2, 4, 10.0 * (a * a - g * g) / (3.0 * s6 * k_ag));
  add(6, 3, 5, -2.0 * std::sqrt(2.0 / 3.0) * a * b * g / (k_ag * k_bg));
  add(6, 7, 9, a / s6);
  add(6, 8, 9, s32 * b * g / k_abg);

  add(7, 1, 6, -a / s6);
  add(7, 6, 9, -a / s6);
  add(7, 2, 5, (g * g - a * a) / (s6 * k_ag));
  add(7, 3, 4, a * b * g / (s6 * k_ag * k_bg));

  add(8, 2, 5, 2.0 * a * b * g / (s6 * k_ag * k_abg));
  add(8, 3, 4, g * g * (3.0 * a * a - b * b + 3.0 * g * g) / (s6 * k_ag * k_bg * k_abg));

  add(9, 2, 3, s32 * b * g / k_bg);
  add(9, 6, 8, -s32 * b * g / k_abg);
  return c;
}

MfeSystem::MfeSystem(const MfeParams& params)
    : params_(params),
      coeffs_(MfeCoefficients::from_geometry(params.alpha(), params.beta(), params.gamma())) {}

StateVector MfeSystem::quadratic(const StateVector& q) const {
  StateVector d = StateVector::Zero();
  for (const auto& t : coeffs_.quadratic) d[t.out] += t.coeff * q[t.i] * q[t.j];
  return d;
}

StateVector MfeSystem::viscous(const StateVector& q, double re) const {
  StateVector d;
  const double inv_re = 1.0 / re;
  for (int m = 0; m < kModes; ++m) d[m] = -coeffs_.damping[m] * q[m] * inv_re;
  d[0] += coeffs_.forcing * inv_re;
  return d;
}

StateVector MfeSystem::rhs(const StateVector& q, double re) const {
  StateVector d = viscous(q, re);
  for (const auto& t : coeffs_.quadratic) d[t.out] += t.coeff * q[t.i] * q[t.j];
  return d;
}

void MfeSystem::rk4_step(StateVector& q, double re, double h) const {
  const StateVector k1 = rhs(q, re);
  const StateVector k2 = rhs(q + 0.5 * h * k1, re);
  const StateVector k3 = rhs(q + 0.5 * h * k2, re);
  const StateVector k4 = rhs(q + h * k3, re);
  q += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

StateVector mfe_rhs(const StateVector& q, ControlAction a, const MfeParams& p) {
  if (!q.allFinite()) throw InvalidStateError("mfe_rhs: non-finite state");
  if (!(a.re > 0.0) || !std::isfinite(a.re)) {
    throw InvalidStateError("mfe_rhs: Reynolds number must be positive and finite");
  }
  return MfeSystem(p).rhs(q, a.re);
}

double kinetic_energy(const StateVector& q) { return 0.5 * q.squaredNorm(); }

Schedule::Schedule(ControlAction constant) : segments_{{0.0, constant}} {}

Schedule::Schedule(std::vector<Segment> segments) : segments_(std::move(segments)) {
  if (segments_.empty()) throw ConfigError("schedule needs at least one segment");
  for (std::size_t i = 1; i < segments_.size(); ++i) {
    if (!(segments_[i].start > segments_[i - 1].start)) {
      throw ConfigError("schedule segment starts must be strictly increasing");
    }
  }
}

ControlAction Schedule::at(double t) const {
  auto it = std::upper_bound(segments_.begin(), segments_.end(), t,
                             [](double v, const Segment& s) { return v < s.start; });
  if (it == segments_.begin()) return segments_.front().action;
  return std::prev(it)->action;
}

void Trajectory::push_back(double t, const StateVector& q, ControlAction a) {
  times.push_back(t);
  states.push_back(q);
  actions.push_back(a);
  k.push_back(kinetic_energy(q));
}

void Trajectory::append(const Trajectory& other) {
  if (!empty() && !other.empty() && other.times.front() == times.back()) {
    // the joint sample belongs to the later segment, which carries the new action
    times.pop_back();
    states.pop_back();
    actions.pop_back();
    k.pop_back();
  }
  times.insert(times.end(), other.times.begin(), other.times.end());
  states.insert(states.end(), other.states.begin(), other.states.end());
  actions.insert(actions.end(), other.actions.begin(), other.actions.end());
  k.insert(k.end(), other.k.begin(), other.k.end());
}

namespace {

void check_bound(const StateVector& q, double bound, double t) {
  if (!q.allFinite() || q.cwiseAbs().maxCoeff() > bound) {
    std::ostringstream os;
    os << "integration blew up at t = " << t << " (|q| bound " << bound << ")";
    throw BlowUpError(os.str(), t);
  }
}

}  // namespace

Trajectory integrate_samples(const StateVector& q0, const Schedule& schedule,
                             long first_sample, long n_samples, const MfeParams& p) {
  if (!q0.allFinite()) throw InvalidStateError("integrate: non-finite initial state");
  if (n_samples < 0) throw ConfigError("integrate: negative sample count");
  p.validate();
  const MfeSystem sys(p);
  const long sub = p.steps_per_sample();
  const double h = p.integrator_dt;

  Trajectory traj;
  traj.times.reserve(static_cast<std::size_t>(n_samples) + 1);
  traj.states.reserve(static_cast<std::size_t>(n_samples) + 1);
  traj.actions.reserve(static_cast<std::size_t>(n_samples) + 1);
  traj.k.reserve(static_cast<std::size_t>(n_samples) + 1);

  StateVector q = q0;
  const double t0 = static_cast<double>(first_sample) * p.sample_dt;
  traj.push_back(t0, q, schedule.at(t0));
  for (long s = first_sample; s < first_sample + n_samples; ++s) {
    for (long j = 0; j < sub; ++j) {
      const double t_left = static_cast<double>(s * sub + j) * h;
      sys.rk4_step(q, schedule.at(t_left).re, h);
      check_bound(q, p.blowup_bound, t_left + h);
    }
    const double t = static_cast<double>(s + 1) * p.sample_dt;
    traj.push_back(t, q, schedule.at(t));
  }
  return traj;
}

Trajectory integrate(const StateVector& q0, const Schedule& schedule, double t_span,
                     const MfeParams& p) {
  if (!(t_span > 0.0)) throw ConfigError("integrate: t_span must be positive");
  return integrate_samples(q0, schedule, 0, p.sample_count(t_span), p);
}

bool relaminarizes(const Trajectory& traj, double tol, double span_time) {
  const double k_lam = kinetic_energy(laminar_state());
  double run_start = -1.0;
  bool in_run = false;
  for (std::size_t i = 0; i < traj.size(); ++i) {
    if (std::abs(traj.k[i] - k_lam) <= tol) {
      if (!in_run) {
        in_run = true;
        run_start = traj.times[i];
      }
      if (traj.times[i] - run_start > span_time) return true;
    } else {
      in_run = false;
    }
  }
  return false;
}

namespace {

StateVector perturbed_laminar(Rng& rng, double amplitude) {
  StateVector q = laminar_state();
  for (int m = 0; m < kModes; ++m) q[m] += amplitude * rng.uniform(-1.0, 1.0);
  return q;
}

Schedule random_schedule(std::uint64_t seed, double length, const MfeParams& p,
                         const DatasetOptions& opts) {
  if (!(opts.actuation_probability > 0.0)) return Schedule(p.base_action());
  Rng rng(derive_seed(seed, 0xac7ULL));
  std::vector<Schedule::Segment> segs;
  for (long i = 0; static_cast<double>(i) * opts.control_interval < length; ++i) {
    const bool on = rng.uniform() < opts.actuation_probability;
    segs.push_back({static_cast<double>(i) * opts.control_interval,
                    on ? p.ctrl_action() : p.base_action()});
  }
  return Schedule(std::move(segs));
}

}  // namespace

StateVector attractor_state(std::uint64_t seed, const MfeParams& p, const DatasetOptions& opts) {
  const Schedule base(p.base_action());
  const double washout = lt_to_time(opts.washout_lt);
  for (int attempt = 0; attempt < opts.max_attempts_per_series; ++attempt) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(attempt)));
    const auto warm = integrate(perturbed_laminar(rng, opts.perturbation), base, washout, p);
    if (!relaminarizes(warm, opts.relaminar_tol, lt_to_time(opts.relaminar_lt)) &&
        std::abs(warm.k.back() - kinetic_energy(laminar_state())) > opts.relaminar_tol) {
      return warm.states.back();
    }
  }
  throw GenerationError("could not reach the turbulent attractor within the retry budget");
}

std::vector<Trajectory> generate_dataset(int n_series, double length_lt, std::uint64_t seed,
                                         const MfeParams& p, const DatasetOptions& opts) {
  std::vector<Trajectory> out;
  if (n_series <= 0) return out;
  p.validate();
  const Schedule base(p.base_action());
  const double length = lt_to_time(length_lt);
  const double relam_span = lt_to_time(opts.relaminar_lt);

  std::uint64_t stream = 0;
  const auto budget = static_cast<std::uint64_t>(n_series) *
                      static_cast<std::uint64_t>(opts.max_attempts_per_series);
  while (out.size() < static_cast<std::size_t>(n_series)) {
    if (stream >= budget) {
      throw GenerationError("generate_dataset: retry budget exhausted before " +
                            std::to_string(n_series) + " turbulent series were found");
    }
    const auto series_seed = derive_seed(seed, stream++);
    StateVector q0;
    try {
      DatasetOptions single = opts;
      single.max_attempts_per_series = 1;
      q0 = attractor_state(series_seed, p, single);
    } catch (const GenerationError&) {
      continue;
    }
    auto traj = integrate(q0, random_schedule(series_seed, length, p, opts), length, p);
    if (relaminarizes(traj, opts.relaminar_tol, relam_span)) continue;
    out.push_back(std::move(traj));
  }
  return out;
}

}  // namespace caesn::dynsys
