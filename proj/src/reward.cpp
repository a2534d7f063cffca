#include "caesn/reward.hpp"

#include "caesn/errors.hpp"

#include <charconv>
#include <cmath>

namespace caesn::reward {

void RewardConfig::validate() const {
  if (!(r_event < r_control && r_control < 0.0)) {
    throw ConfigError("reward config needs r_event < r_control < 0");
  }
}

double step_reward(double k, bool controlled, const RewardConfig& cfg) {
  double r = 0.0;
  if (is_event(k, cfg)) r += cfg.r_event;
  if (controlled) r += cfg.r_control;
  return r;
}

EpisodeMetrics tally(const std::vector<double>& k, const std::vector<bool>& controlled,
                     const RewardConfig& cfg) {
  if (k.empty()) throw DataError("episode_metrics: empty trajectory");
  if (k.size() != controlled.size()) throw DataError("episode_metrics: length mismatch");
  EpisodeMetrics m;
  m.n_steps = k.size();
  // integer tallies first so the mean reward is independent of step order
  for (std::size_t i = 0; i < k.size(); ++i) {
    m.n_event += is_event(k[i], cfg) ? 1 : 0;
    m.n_control += controlled[i] ? 1 : 0;
  }
  const auto n = static_cast<double>(m.n_steps);
  m.p_event = static_cast<double>(m.n_event) / n;
  m.p_control = static_cast<double>(m.n_control) / n;
  m.avg_reward = (cfg.r_event * static_cast<double>(m.n_event) +
                  cfg.r_control * static_cast<double>(m.n_control)) /
                 n;
  return m;
}

EpisodeMetrics episode_metrics(const dynsys::Trajectory& traj, const RewardConfig& cfg) {
  std::vector<bool> controlled(traj.size());
  for (std::size_t i = 0; i < traj.size(); ++i) controlled[i] = traj.actions[i].re != cfg.re_base;
  return tally(traj.k, controlled, cfg);
}

BatchSummary summarize(const std::vector<EpisodeMetrics>& episodes) {
  BatchSummary s;
  s.n_episodes = episodes.size();
  if (episodes.empty()) return s;
  std::size_t n_event = 0;
  std::size_t n_control = 0;
  double sum_r = 0.0;
  for (const auto& e : episodes) {
    s.n_steps += e.n_steps;
    n_event += e.n_event;
    n_control += e.n_control;
    sum_r += e.avg_reward;
  }
  const auto ne = static_cast<double>(episodes.size());
  s.mean_reward = sum_r / ne;
  if (episodes.size() > 1) {
    double ss = 0.0;
    for (const auto& e : episodes) ss += (e.avg_reward - s.mean_reward) * (e.avg_reward - s.mean_reward);
    s.se_reward = std::sqrt(ss / (ne - 1.0) / ne);
  }
  const auto n = static_cast<double>(s.n_steps);
  s.p_event = static_cast<double>(n_event) / n;
  s.p_control = static_cast<double>(n_control) / n;
  s.se_event = std::sqrt(s.p_event * (1.0 - s.p_event) / n);
  s.se_control = std::sqrt(s.p_control * (1.0 - s.p_control) / n);
  return s;
}

std::string fmt_real(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string metrics_csv_header() {
  return "strategy,episode,avg_reward,p_event,p_control,n_steps,n_event,n_control";
}

std::string metrics_csv_row(const std::string& label, std::size_t episode,
                            const EpisodeMetrics& m) {
  return label + "," + std::to_string(episode) + "," + fmt_real(m.avg_reward) + "," +
         fmt_real(m.p_event) + "," + fmt_real(m.p_control) + "," + std::to_string(m.n_steps) +
         "," + std::to_string(m.n_event) + "," + std::to_string(m.n_control);
}

std::string summary_csv_header() {
  return "strategy,n_episodes,n_steps,mean_reward,se_reward,p_event,se_event_binomial,"
         "p_control,se_control_binomial";
}

std::string summary_csv_row(const std::string& label, const BatchSummary& s) {
  return label + "," + std::to_string(s.n_episodes) + "," + std::to_string(s.n_steps) + "," +
         fmt_real(s.mean_reward) + "," + fmt_real(s.se_reward) + "," + fmt_real(s.p_event) + "," +
         fmt_real(s.se_event) + "," + fmt_real(s.p_control) + "," + fmt_real(s.se_control);
}

}  // namespace caesn::reward
