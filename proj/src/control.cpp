#include "caesn/control.hpp"

#include "caesn/errors.hpp"
#include "caesn/random.hpp"

#include <omp.h>

#include <algorithm>
#include <cassert>
#include <chrono>
#include <cmath>
#include <cctype>

namespace caesn::control {

void PidGains::validate() const {
  if (k_i != 0.0 && !(tau_i > 0.0)) throw ConfigError("tau_i must be > 0 when k_i != 0");
}

long HorizonConfig::horizon_steps(double esn_dt) const {
  return std::lround(dynsys::lt_to_time(tau_hor_lt) / esn_dt);
}

long HorizonConfig::slot_steps(double esn_dt) const {
  return std::lround(control_interval / esn_dt);
}

int HorizonConfig::n_slots() const {
  return static_cast<int>(std::floor(dynsys::lt_to_time(tau_opt_lt) / control_interval));
}

void HorizonConfig::validate(double esn_dt) const {
  if (!(tau_hor_lt > 0.0)) throw ConfigError("tau_hor must be positive");
  if (tau_opt_lt > tau_hor_lt) throw ConfigError("tau_opt must not exceed tau_hor");
  if (!(control_interval > 0.0)) throw ConfigError("control_interval must be positive");
  if (action_set.empty()) throw ConfigError("action_set is empty");
  const long slot = slot_steps(esn_dt);
  if (slot < 1 || std::abs(static_cast<double>(slot) * esn_dt - control_interval) > 1e-9 * control_interval) {
    throw ConfigError("control_interval must be a whole number of ESN steps");
  }
  if (static_cast<long>(n_slots()) * slot > horizon_steps(esn_dt)) {
    throw ConfigError("optimized slots extend past the horizon");
  }
}

std::string to_string(ControllerKind kind) {
  switch (kind) {
    case ControllerKind::kNone: return "NC";
    case ControllerKind::kAlways: return "AC";
    case ControllerKind::kPidDirect: return "PID";
    case ControllerKind::kPEsn: return "P_ESN";
    case ControllerKind::kMpc: return "MPC";
    case ControllerKind::kLitThreshold: return "Lit";
  }
  return "?";
}

ControllerKind controller_kind_from(const std::string& label) {
  std::string up;
  for (char c : label) up += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (up == "NC") return ControllerKind::kNone;
  if (up == "AC") return ControllerKind::kAlways;
  if (up == "PID" || up == "PID_DIRECT") return ControllerKind::kPidDirect;
  if (up == "P_ESN" || up == "PESN") return ControllerKind::kPEsn;
  if (up == "MPC") return ControllerKind::kMpc;
  if (up == "LIT" || up == "LIT_THRESHOLD") return ControllerKind::kLitThreshold;
  throw ConfigError("unknown controller '" + label + "'");
}

void ControllerSpec::validate() const {
  switch (kind) {
    case ControllerKind::kNone:
    case ControllerKind::kAlways:
      return;
    case ControllerKind::kPidDirect:
      if (!gains) throw ConfigError("PID controller needs gains");
      gains->validate();
      return;
    case ControllerKind::kPEsn:
      if (!gains) throw ConfigError("P_ESN controller needs gains");
      [[fallthrough]];
    case ControllerKind::kMpc:
    case ControllerKind::kLitThreshold:
      if (!model || !model->trained()) throw ConfigError(label() + " needs a trained model");
      if (!horizon) throw ConfigError(label() + " needs a horizon");
      horizon->validate(model->params().esn_dt);
      return;
  }
}

double pid_signal(std::span<const double> k, double dt, const PidGains& gains) {
  if (k.empty()) throw DataError("pid_signal: empty history");
  const std::size_t n = k.size();
  double c = gains.k_p * k[n - 1];
  if (gains.k_d != 0.0 && n >= 2) c += gains.k_d * (k[n - 1] - k[n - 2]) / dt;
  if (gains.k_i != 0.0) {
    // trapezoids over whole sample intervals, then a linearly interpolated partial one
    const double span = std::min(gains.tau_i, static_cast<double>(n - 1) * dt);
    const auto whole = static_cast<std::size_t>(std::floor(span / dt + 1e-12));
    double integral = 0.0;
    for (std::size_t j = 0; j < whole; ++j) {
      integral += 0.5 * dt * (k[n - 1 - j] + k[n - 2 - j]);
    }
    const double rest = span - static_cast<double>(whole) * dt;
    if (rest > 1e-12 * dt && whole + 1 < n) {
      const double right = k[n - 1 - whole];
      const double left = k[n - 2 - whole];
      const double at_cut = right + (left - right) * rest / dt;
      integral += 0.5 * rest * (right + at_cut);
    }
    c += gains.k_i * integral;
  }
  return c;
}

double predicted_peak(const EsnModel& model, const StateVector& q, const HorizonConfig& horizon) {
  if (!model.trained()) throw NotTrainedError("predicted_peak: model is not trained");
  const long n = horizon.horizon_steps(model.params().esn_dt);
  const double u_fix = model.params().encode({model.params().re_base});
  reservoir::Stepper stepper(model);
  StateVector x = q;
  double peak = dynsys::kinetic_energy(q);
  for (long i = 0; i < n; ++i) {
    if (!stepper.advance(x, u_fix)) return std::numeric_limits<double>::infinity();
    peak = std::max(peak, dynsys::kinetic_energy(x));
  }
  return peak;
}

ControlAction p_esn_decide(const EsnModel& model, const StateVector& q, const PidGains& gains,
                           const HorizonConfig& horizon) {
  const double peak = predicted_peak(model, q, horizon);
  const double c = std::isinf(peak) ? peak : gains.k_p * peak;
  return c > gains.k_c ? ControlAction{model.params().re_ctrl}
                       : ControlAction{model.params().re_base};
}

ControlAction lit_threshold_decide(const EsnModel& model, const StateVector& q,
                                   const HorizonConfig& horizon, double k_e) {
  PidGains g;
  g.k_p = 1.0;
  g.k_c = k_e;
  return p_esn_decide(model, q, g, horizon);
}

// ---------------------------------------------------------------------------
// MPC

namespace {

struct SearchSetup {
  long n_hor = 0;
  long slot = 0;
  int n_slots = 0;
  int n_actions = 0;
  int base_index = -1;
  std::vector<double> encoded;      // per action index
  std::vector<bool> is_control;     // per action index
};

SearchSetup make_setup(const EsnModel& model, const HorizonConfig& horizon,
                       const reward::RewardConfig& rcfg) {
  const double dt = model.params().esn_dt;
  horizon.validate(dt);
  SearchSetup s;
  s.n_hor = horizon.horizon_steps(dt);
  s.slot = horizon.slot_steps(dt);
  s.n_slots = horizon.n_slots();
  s.n_actions = static_cast<int>(horizon.action_set.size());
  for (int a = 0; a < s.n_actions; ++a) {
    const auto& act = horizon.action_set[static_cast<std::size_t>(a)];
    s.encoded.push_back(model.params().encode(act));
    s.is_control.push_back(act.re != rcfg.re_base);
    if (act.re == model.params().re_base && s.base_index < 0) s.base_index = a;
  }
  if (s.base_index < 0) throw ConfigError("action_set must contain the no-control action");
  return s;
}

struct Tally {
  long n_event = 0;
  long n_control = 0;
};

double sum_of(const Tally& t, const reward::RewardConfig& rcfg) {
  return rcfg.r_event * static_cast<double>(t.n_event) +
         rcfg.r_control * static_cast<double>(t.n_control);
}

int count_control(const std::vector<int>& seq, const SearchSetup& s) {
  int n = 0;
  for (int a : seq) n += s.is_control[static_cast<std::size_t>(a)] ? 1 : 0;
  return n;
}

// Rolls out one candidate. Stops early (returns nullopt) when the partial tally
// proves the candidate cannot beat the incumbent.
template <class Prune>
std::optional<Tally> rollout_candidate(reservoir::Stepper& stepper, const StateVector& q,
                                       const std::vector<int>& seq, const SearchSetup& s,
                                       const reward::RewardConfig& rcfg, long total_control,
                                       Prune&& prune) {
  Tally t;
  t.n_control = total_control;
  StateVector x = q;
  stepper.reset();
  for (long i = 0; i < s.n_hor; ++i) {
    const long slot = i / s.slot;
    const int a = slot < s.n_slots ? seq[static_cast<std::size_t>(slot)] : s.base_index;
    if (!stepper.advance(x, s.encoded[static_cast<std::size_t>(a)])) {
      t.n_event += s.n_hor - i;  // diverged suffix counts as events
      return t;
    }
    if (reward::is_event(dynsys::kinetic_energy(x), rcfg)) {
      ++t.n_event;
      if (prune(sum_of(t, rcfg))) return std::nullopt;
    }
  }
  return t;
}

std::vector<int> decode(long index, const SearchSetup& s) {
  // most significant digit = first slot, so ascending index is lexicographic order
  std::vector<int> seq(static_cast<std::size_t>(s.n_slots));
  for (int j = s.n_slots - 1; j >= 0; --j) {
    seq[static_cast<std::size_t>(j)] = static_cast<int>(index % s.n_actions);
    index /= s.n_actions;
  }
  return seq;
}

long candidate_count(const SearchSetup& s) {
  long n = 1;
  for (int j = 0; j < s.n_slots; ++j) n *= s.n_actions;
  return n;
}

struct Candidate {
  std::vector<int> seq;
  double sum = -std::numeric_limits<double>::infinity();
  int n_control = 0;
};

// Total order: higher reward, then fewer control slots, then lexicographically first.
bool better(const Candidate& a, const Candidate& b) {
  if (a.sum != b.sum) return a.sum > b.sum;
  if (a.n_control != b.n_control) return a.n_control < b.n_control;
  return a.seq < b.seq;
}

MpcResult to_result(const Candidate& c, const SearchSetup& s, long evaluated) {
  MpcResult r;
  r.sequence = c.seq;
  r.score = c.sum / static_cast<double>(s.n_hor);
  r.n_control = c.n_control;
  r.evaluated = evaluated;
  return r;
}

}  // namespace

double mpc_score(const EsnModel& model, const StateVector& q, const HorizonConfig& horizon,
                 const reward::RewardConfig& rcfg, const std::vector<int>& sequence) {
  const auto s = make_setup(model, horizon, rcfg);
  if (sequence.size() != static_cast<std::size_t>(s.n_slots)) {
    throw ConfigError("mpc_score: sequence length must equal the number of slots");
  }
  reservoir::Stepper stepper(model);
  const long total_control = static_cast<long>(count_control(sequence, s)) * s.slot;
  const auto t = rollout_candidate(stepper, q, sequence, s, rcfg, total_control,
                                   [](double) { return false; });
  return sum_of(*t, rcfg) / static_cast<double>(s.n_hor);
}

MpcResult mpc_search_serial(const EsnModel& model, const StateVector& q,
                            const HorizonConfig& horizon, const reward::RewardConfig& rcfg) {
  const auto s = make_setup(model, horizon, rcfg);
  reservoir::Stepper stepper(model);
  const long n = candidate_count(s);
  Candidate best;
  bool have = false;
  for (long idx = 0; idx < n; ++idx) {
    Candidate c;
    c.seq = decode(idx, s);
    c.n_control = count_control(c.seq, s);
    const auto t = rollout_candidate(stepper, q, c.seq, s, rcfg,
                                     static_cast<long>(c.n_control) * s.slot,
                                     [](double) { return false; });
    c.sum = sum_of(*t, rcfg);
    if (!have || better(c, best)) {
      best = c;
      have = true;
    }
  }
  return to_result(best, s, n);
}

MpcResult mpc_search(const EsnModel& model, const StateVector& q, const HorizonConfig& horizon,
                     const reward::RewardConfig& rcfg) {
  const auto s = make_setup(model, horizon, rcfg);
  const long n = candidate_count(s);

  // Candidates ordered by control count, then lexicographically: the likely winners
  // and the tie-break preference come first, which tightens pruning early.
  std::vector<Candidate> order;
  order.reserve(static_cast<std::size_t>(n));
  for (long idx = 0; idx < n; ++idx) {
    Candidate c;
    c.seq = decode(idx, s);
    c.n_control = count_control(c.seq, s);
    order.push_back(std::move(c));
  }
  std::stable_sort(order.begin(), order.end(),
                   [](const Candidate& a, const Candidate& b) { return a.n_control < b.n_control; });

  Candidate best;
  long evaluated = 0;
  {
    // The all-no-control sequence: with no predicted event its score is 0 and
    // nothing else can reach it.
    reservoir::Stepper stepper(model);
    Candidate& first = order.front();
    const auto t = rollout_candidate(stepper, q, first.seq, s, rcfg,
                                     static_cast<long>(first.n_control) * s.slot,
                                     [](double) { return false; });
    first.sum = sum_of(*t, rcfg);
    best = first;
    evaluated = 1;
    if (first.n_control == 0 && t->n_event == 0) return to_result(best, s, evaluated);
  }

  // true when a candidate whose final sum is at most `bound` cannot win
  auto hopeless = [&best](const Candidate& c, double bound) {
    if (bound != best.sum) return bound < best.sum;
    Candidate probe = c;
    probe.sum = bound;
    return !better(probe, best);
  };

#pragma omp parallel
  {
    reservoir::Stepper stepper(model);
#pragma omp for schedule(dynamic, 1) reduction(+ : evaluated)
    for (long i = 1; i < n; ++i) {
      Candidate c = order[static_cast<std::size_t>(i)];
      const long total_control = static_cast<long>(c.n_control) * s.slot;
      const double bound0 = rcfg.r_control * static_cast<double>(total_control);
      bool skip = false;
#pragma omp critical(caesn_mpc_best)
      skip = hopeless(c, bound0);
      if (skip) continue;
      ++evaluated;
      const auto t = rollout_candidate(stepper, q, c.seq, s, rcfg, total_control,
                                       [&](double partial) {
                                         bool h = false;
#pragma omp critical(caesn_mpc_best)
                                         h = hopeless(c, partial);
                                         return h;
                                       });
      if (!t) continue;
      c.sum = sum_of(*t, rcfg);
#pragma omp critical(caesn_mpc_best)
      if (better(c, best)) best = c;
    }
  }
  return to_result(best, s, evaluated);
}

ControlAction mpc_decide(const EsnModel& model, const StateVector& q, const HorizonConfig& horizon,
                         const reward::RewardConfig& rcfg) {
  const auto result = mpc_search(model, q, horizon, rcfg);
#ifndef NDEBUG
  {
    const auto s = make_setup(model, horizon, rcfg);
    std::vector<int> none(static_cast<std::size_t>(s.n_slots), s.base_index);
    const double r_none = mpc_score(model, q, horizon, rcfg, none);
    assert(result.score >= r_none);
    for (int a = 0; a < s.n_actions; ++a) {
      std::vector<int> all(static_cast<std::size_t>(s.n_slots), a);
      assert(result.score >= mpc_score(model, q, horizon, rcfg, all));
    }
  }
#endif
  if (result.sequence.empty()) return {model.params().re_base};
  return horizon.action_set[static_cast<std::size_t>(result.sequence.front())];
}

// ---------------------------------------------------------------------------
// episodes

namespace {

ControlAction decide(const ControllerSpec& spec, const StateVector& q,
                     const std::vector<double>& k_history, const dynsys::MfeParams& p,
                     const reward::RewardConfig& rcfg) {
  switch (spec.kind) {
    case ControllerKind::kNone:
      return p.base_action();
    case ControllerKind::kAlways:
      return p.ctrl_action();
    case ControllerKind::kPidDirect: {
      const double c = pid_signal(k_history, p.sample_dt, *spec.gains);
      return c > spec.gains->k_c ? p.ctrl_action() : p.base_action();
    }
    case ControllerKind::kPEsn:
      return p_esn_decide(*spec.model, q, *spec.gains, *spec.horizon);
    case ControllerKind::kMpc:
      return mpc_decide(*spec.model, q, *spec.horizon, rcfg);
    case ControllerKind::kLitThreshold:
      return lit_threshold_decide(*spec.model, q, *spec.horizon, rcfg.k_e);
  }
  return p.base_action();
}

}  // namespace

EpisodeResult run_episode(const StateVector& q0, const ControllerSpec& spec, double length_lt,
                          const dynsys::MfeParams& p, const reward::RewardConfig& rcfg,
                          std::uint64_t /*seed*/, const EpisodeOptions& opts) {
  spec.validate();
  if (!(length_lt > 0.0)) throw ConfigError("run_episode: length must be positive");
  const double interval = spec.horizon ? spec.horizon->control_interval : HorizonConfig{}.control_interval;
  const long per_interval = std::lround(interval / p.sample_dt);
  if (per_interval < 1) throw ConfigError("control interval shorter than one sample");
  const long n_total = p.sample_count(dynsys::lt_to_time(length_lt));

  EpisodeResult out;
  std::vector<long> starts;
  StateVector q = q0;
  long s = 0;
  const std::vector<double> initial_history{dynsys::kinetic_energy(q0)};
  while (s < n_total || out.trajectory.empty()) {
    const long n = std::min(per_interval, n_total - s);
    const auto& history = out.trajectory.empty() ? initial_history : out.trajectory.k;
    const auto t_start = std::chrono::steady_clock::now();
    const ControlAction a = decide(spec, q, history, p, rcfg);
    const auto t_end = std::chrono::steady_clock::now();

    DecisionRecord rec;
    rec.time = static_cast<double>(s) * p.sample_dt;
    rec.k = dynsys::kinetic_energy(q);
    rec.action = a;
    if (opts.measure_latency) {
      rec.latency_us = std::chrono::duration<double, std::micro>(t_end - t_start).count();
    }
    out.decisions.push_back(rec);
    starts.push_back(s);

    try {
      const auto seg = dynsys::integrate_samples(q, dynsys::Schedule(a), s, n, p);
      out.trajectory.append(seg);
      q = seg.states.back();
    } catch (const BlowUpError& e) {
      throw BlowUpError(std::string("episode (") + spec.label() + "): " + e.what(), e.time());
    }
    s += n;
    if (n == 0) break;
  }
  out.metrics = reward::episode_metrics(out.trajectory, rcfg);

  for (std::size_t d = 0; d < starts.size(); ++d) {
    const auto lo = static_cast<std::size_t>(starts[d]);
    const std::size_t hi = d + 1 < starts.size() ? static_cast<std::size_t>(starts[d + 1])
                                                 : out.trajectory.size();
    double sum = 0.0;
    for (std::size_t i = lo; i < hi; ++i) {
      sum += reward::step_reward(out.trajectory.k[i], out.trajectory.actions[i].re != rcfg.re_base, rcfg);
    }
    out.decisions[d].reward = hi > lo ? sum / static_cast<double>(hi - lo) : 0.0;
  }
  return out;
}

StateVector episode_ic(std::uint64_t seed, const dynsys::MfeParams& p, const dynsys::DatasetOptions& opts,
                       double k_e) {
  for (int attempt = 0; attempt < opts.max_attempts_per_series; ++attempt) {
    const auto s = attempt == 0 ? seed : derive_seed(seed, static_cast<std::uint64_t>(attempt));
    const auto q = dynsys::attractor_state(s, p, opts);
    if (dynsys::kinetic_energy(q) <= k_e) return q;
  }
  throw GenerationError("no event-free initial condition within " +
                        std::to_string(opts.max_attempts_per_series) + " attempts");
}

std::string decisions_csv_header() {
  return "row,time,k,action_re,reward,decision_latency_us,p_event,p_control";
}

std::string decisions_csv_rows(const EpisodeResult& result) {
  using reward::fmt_real;
  std::string out;
  for (const auto& d : result.decisions) {
    out += "step," + fmt_real(d.time) + "," + fmt_real(d.k) + "," + fmt_real(d.action.re) + "," +
           fmt_real(d.reward) + "," + fmt_real(d.latency_us) + ",,\n";
  }
  const auto& m = result.metrics;
  const double t_end = result.trajectory.empty() ? 0.0 : result.trajectory.times.back();
  out += "summary," + fmt_real(t_end) + ",,," + fmt_real(m.avg_reward) + ",," +
         fmt_real(m.p_event) + "," + fmt_real(m.p_control) + "\n";
  return out;
}

}  // namespace caesn::control
