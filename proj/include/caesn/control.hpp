#pragma once

// Controllers that decide the actuation every control interval, and the episode
// runner that alternates decisions with ground-truth integration.

#include "caesn/dynsys.hpp"
#include "caesn/reservoir.hpp"
#include "caesn/reward.hpp"

#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace caesn::control {

using dynsys::ControlAction;
using dynsys::StateVector;
using reservoir::EsnModel;

struct PidGains {
  double k_p = 1.0;
  double k_d = 0.0;
  double k_i = 0.0;
  double tau_i = 1.0;  // time units
  double k_c = 0.1;    // activation threshold on the control signal

  void validate() const;
};

struct HorizonConfig {
  double tau_hor_lt = 4.0;
  double tau_opt_lt = 1.0;
  double control_interval = 10.0;  // time units
  std::vector<ControlAction> action_set{{400.0}, {2000.0}};

  // ESN steps covering the prediction horizon.
  [[nodiscard]] long horizon_steps(double esn_dt) const;
  // ESN steps per control interval.
  [[nodiscard]] long slot_steps(double esn_dt) const;
  // Number of optimized control slots, floor(tau_opt / control_interval).
  [[nodiscard]] int n_slots() const;

  void validate(double esn_dt) const;
};

enum class ControllerKind { kNone, kAlways, kPidDirect, kPEsn, kMpc, kLitThreshold };

[[nodiscard]] std::string to_string(ControllerKind kind);
// Accepts the labels NC, AC, PID, P_ESN, MPC, Lit (case-insensitive).
[[nodiscard]] ControllerKind controller_kind_from(const std::string& label);

struct ControllerSpec {
  ControllerKind kind = ControllerKind::kNone;
  std::optional<PidGains> gains;
  std::optional<HorizonConfig> horizon;
  std::shared_ptr<const EsnModel> model;

  [[nodiscard]] std::string label() const { return to_string(kind); }
  // Throws ConfigError when a required component is missing.
  void validate() const;
};

// PID signal on k over a uniformly sampled history (sample spacing dt). The
// derivative is a backward difference (zero for a single sample); the integral is
// trapezoidal over the trailing tau_i window, truncated at the history start.
[[nodiscard]] double pid_signal(std::span<const double> k_history, double dt,
                                const PidGains& gains);

// Largest kinetic energy over the current state and an uncontrolled ESN rollout of
// the whole horizon; +inf if the rollout diverges.
[[nodiscard]] double predicted_peak(const EsnModel& model, const StateVector& q,
                                    const HorizonConfig& horizon);

// Proportional control on the predicted peak: c = k_p * k_max, act if c > k_c.
[[nodiscard]] ControlAction p_esn_decide(const EsnModel& model, const StateVector& q,
                                         const PidGains& gains, const HorizonConfig& horizon);

// Predecessor strategy: act when an event itself is predicted (k_c = k_e, k_p = 1).
[[nodiscard]] ControlAction lit_threshold_decide(const EsnModel& model, const StateVector& q,
                                                 const HorizonConfig& horizon, double k_e);

// Result of the receding-horizon search. score is the mean predicted step reward
// over the horizon; sequence holds one action index per optimized slot.
struct MpcResult {
  std::vector<int> sequence;
  double score = -std::numeric_limits<double>::infinity();
  int n_control = 0;
  long evaluated = 0;  // candidates rolled out (fully or until pruned)
};

// Scores one candidate slot sequence (indices into horizon.action_set). Steps from
// a divergence to the horizon end count as events.
[[nodiscard]] double mpc_score(const EsnModel& model, const StateVector& q,
                               const HorizonConfig& horizon, const reward::RewardConfig& rcfg,
                               const std::vector<int>& sequence);

// Reference search: rolls out every candidate in full, one after the other.
[[nodiscard]] MpcResult mpc_search_serial(const EsnModel& model, const StateVector& q,
                                          const HorizonConfig& horizon,
                                          const reward::RewardConfig& rcfg);

// Production search: same result as the reference, with exact pruning (rewards are
// never positive, so a partial score bounds the final one) and OpenMP over
// candidates.
[[nodiscard]] MpcResult mpc_search(const EsnModel& model, const StateVector& q,
                                   const HorizonConfig& horizon, const reward::RewardConfig& rcfg);

[[nodiscard]] ControlAction mpc_decide(const EsnModel& model, const StateVector& q,
                                       const HorizonConfig& horizon,
                                       const reward::RewardConfig& rcfg);

// One row of the per-control-step log.
struct DecisionRecord {
  double time = 0.0;
  double k = 0.0;
  ControlAction action;
  double reward = 0.0;      // mean step reward over the samples of this interval
  double latency_us = 0.0;  // wall time of the decision
};

struct EpisodeResult {
  dynsys::Trajectory trajectory;
  reward::EpisodeMetrics metrics;
  std::vector<DecisionRecord> decisions;
};

struct EpisodeOptions {
  bool measure_latency = false;
};

// Runs one closed-loop episode. The controller sees only the true state (and, for
// PID, the measured k history) at decision times. seed is recorded for
// bookkeeping; all built-in controllers are deterministic.
[[nodiscard]] EpisodeResult run_episode(const StateVector& q0, const ControllerSpec& spec,
                                        double length_lt, const dynsys::MfeParams& p,
                                        const reward::RewardConfig& rcfg, std::uint64_t seed,
                                        const EpisodeOptions& opts = {});

// Episode initial condition: an attractor state that is not already inside an
// event (k <= k_e), since no strategy can prevent an event under way at t = 0.
// Attempt 0 uses seed itself, later attempts derive_seed(seed, attempt).
[[nodiscard]] StateVector episode_ic(std::uint64_t seed, const dynsys::MfeParams& p,
                                     const dynsys::DatasetOptions& opts, double k_e);

[[nodiscard]] std::string decisions_csv_header();
[[nodiscard]] std::string decisions_csv_rows(const EpisodeResult& result);

}  // namespace caesn::control
