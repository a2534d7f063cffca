#pragma once

#include "caesn/dynsys.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace caesn::reward {

struct RewardConfig {
  double k_e = 0.1;
  double r_event = -1.0;
  double r_control = -0.15;
  // Actuation value that counts as "no control".
  double re_base = 400.0;

  void validate() const;
};

struct EpisodeMetrics {
  double avg_reward = 0.0;
  double p_event = 0.0;
  double p_control = 0.0;
  std::size_t n_steps = 0;
  std::size_t n_event = 0;
  std::size_t n_control = 0;
};

// Event and control penalties add up when both occur on the same step.
[[nodiscard]] double step_reward(double k, bool controlled, const RewardConfig& cfg);

[[nodiscard]] inline bool is_event(double k, const RewardConfig& cfg) { return k > cfg.k_e; }

// Tallies every sample of the trajectory. Throws DataError on an empty trajectory.
[[nodiscard]] EpisodeMetrics episode_metrics(const dynsys::Trajectory& traj,
                                             const RewardConfig& cfg);

// Same tally from raw per-step observables and control flags.
[[nodiscard]] EpisodeMetrics tally(const std::vector<double>& k,
                                   const std::vector<bool>& controlled, const RewardConfig& cfg);

// Batch statistics over episodes. Standard errors: R uses the sample standard
// deviation across episodes; P_e and P_c use the binomial form sqrt(p(1-p)/N) with N
// the pooled step count.
struct BatchSummary {
  std::size_t n_episodes = 0;
  std::size_t n_steps = 0;
  double mean_reward = 0.0;
  double se_reward = 0.0;
  double p_event = 0.0;
  double se_event = 0.0;
  double p_control = 0.0;
  double se_control = 0.0;
};

[[nodiscard]] BatchSummary summarize(const std::vector<EpisodeMetrics>& episodes);

[[nodiscard]] std::string metrics_csv_header();
[[nodiscard]] std::string metrics_csv_row(const std::string& label, std::size_t episode,
                                          const EpisodeMetrics& m);
[[nodiscard]] std::string summary_csv_header();
[[nodiscard]] std::string summary_csv_row(const std::string& label, const BatchSummary& s);

// Shortest round-trip decimal form used in every CSV table.
[[nodiscard]] std::string fmt_real(double v);

}  // namespace caesn::reward
