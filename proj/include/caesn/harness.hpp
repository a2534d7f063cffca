#pragma once

// Experiment orchestration behind the command-line tool: run configuration, the
// generate/train/tune/evaluate/pdf commands and the batch episode runner.

#include "caesn/control.hpp"
#include "caesn/dynsys.hpp"
#include "caesn/hyperopt.hpp"
#include "caesn/reservoir.hpp"
#include "caesn/reward.hpp"

#include "json.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace caesn::harness {

inline constexpr int kSchemaVersion = 1;

struct DatasetConfig {
  int n_series = 50;
  double length_lt = 20.0;
  // Held-out uncontrolled series used for the training report.
  int n_validation = 20;
  double validation_length_lt = 20.0;
  dynsys::DatasetOptions options{.actuation_probability = 0.3};
};

struct EvaluationConfig {
  int n_episodes = 200;
  double episode_lt = 20.0;
  std::vector<std::string> strategies{"NC", "AC", "Lit", "PID", "P_ESN", "MPC"};
  double max_failure_fraction = 0.01;
  bool save_trajectories = false;
  bool decision_log = false;
  bool measure_latency = false;
};

struct TuningConfig {
  std::string strategy = "P_ESN";
  int n_val_episodes = 20;
  int budget = 20;
  double episode_lt = 20.0;
  hyperopt::SearchSpace space{{{"k_c", 0.02, 0.1, hyperopt::Scale::kLinear}}};
  hyperopt::OptimizeOptions options;
};

struct PdfConfig {
  int bins = 100;
  double k_min = 0.0;
  double k_max = 0.3;
};

// Everything a run depends on. Every random stream is derived from seed, so the
// config plus seed reproduces every output file.
struct RunConfig {
  int schema_version = kSchemaVersion;
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  dynsys::MfeParams mfe;
  reservoir::EsnParams esn;
  control::HorizonConfig horizon;
  reward::RewardConfig reward;
  control::PidGains pid_gains{.k_p = 1.0, .k_d = 0.0, .k_i = 0.0, .tau_i = 10.0, .k_c = 0.1};
  control::PidGains p_esn_gains{.k_p = 1.0, .k_d = 0.0, .k_i = 0.0, .tau_i = 1.0, .k_c = 0.08};
  DatasetConfig dataset;
  EvaluationConfig evaluation;
  TuningConfig tuning;
  PdfConfig pdf;

  void validate() const;
};

// Unknown keys anywhere are a ConfigError; missing keys keep their defaults.
[[nodiscard]] RunConfig config_from_json(const nlohmann::json& j);
[[nodiscard]] nlohmann::json config_to_json(const RunConfig& cfg);
[[nodiscard]] RunConfig load_config(const std::string& path);

// FNV-1a over the canonical JSON text of the config.
[[nodiscard]] std::string config_hash(const RunConfig& cfg);
[[nodiscard]] std::string content_hash(const std::string& bytes);

// Independent random streams.
enum class Stream : std::uint64_t {
  kTraining = 1,
  kValidation = 2,
  kReservoir = 3,
  kEvaluation = 4,
  kTuning = 5,
};
[[nodiscard]] std::uint64_t stream_seed(const RunConfig& cfg, Stream s);

// Event-free initial condition of evaluation episode i, shared by every strategy.
[[nodiscard]] dynsys::StateVector evaluation_ic(const RunConfig& cfg, std::size_t i);

[[nodiscard]] control::ControllerSpec make_spec(const RunConfig& cfg, const std::string& label,
                                                std::shared_ptr<const reservoir::EsnModel> model);
[[nodiscard]] bool needs_model(control::ControllerKind kind);

// ---------------------------------------------------------------------------
// surrogate diagnostics

// ||q_hat - q|| / ||q|| for every one-step transition in the series at esn_dt.
[[nodiscard]] std::vector<double> one_step_relative_errors(const reservoir::EsnModel& model,
                                                           const std::vector<dynsys::Trajectory>& series);

// Event classification skill of the no-control predicted peak. At every control
// decision point whose horizon fits in the series, the prediction is positive when
// predicted_peak > k_e and the truth is positive when the true k exceeds k_e at any
// sample within the horizon (current sample included).
struct EventSkill {
  std::size_t n_points = 0;
  std::size_t true_pos = 0;
  std::size_t false_pos = 0;
  std::size_t false_neg = 0;
  [[nodiscard]] double recall() const;
  [[nodiscard]] double precision() const;
};
[[nodiscard]] EventSkill event_skill(const reservoir::EsnModel& model,
                                     const std::vector<dynsys::Trajectory>& series,
                                     const control::HorizonConfig& horizon,
                                     const reward::RewardConfig& rcfg);

[[nodiscard]] double median(std::vector<double> v);

// ---------------------------------------------------------------------------
// batch evaluation

struct EpisodeOutcome {
  std::string strategy;
  std::size_t episode = 0;
  bool failed = false;
  std::string error;
  control::EpisodeResult result;
};

struct BatchTask {
  const control::ControllerSpec* spec = nullptr;
  std::size_t episode = 0;
  const dynsys::StateVector* ic = nullptr;
};

// Runs every (strategy, episode) task. Outcomes come back in task order whatever
// the completion order. keep_trajectories=false drops the sample arrays after the
// metrics are computed.
[[nodiscard]] std::vector<EpisodeOutcome> run_batch(const std::vector<BatchTask>& tasks,
                                                    double episode_lt, const dynsys::MfeParams& p,
                                                    const reward::RewardConfig& rcfg,
                                                    const control::EpisodeOptions& opts,
                                                    bool keep_trajectories, int workers);
// Single-threaded reference with identical output.
[[nodiscard]] std::vector<EpisodeOutcome> run_batch_serial(const std::vector<BatchTask>& tasks,
                                                           double episode_lt,
                                                           const dynsys::MfeParams& p,
                                                           const reward::RewardConfig& rcfg,
                                                           const control::EpisodeOptions& opts,
                                                           bool keep_trajectories);

// Mean and standard error of the paired differences a_i - b_i.
struct PairedDifference {
  std::size_t n = 0;
  double mean = 0.0;
  double se = 0.0;
  // mean / se; +-inf when se = 0 and mean != 0, 0 when both vanish.
  [[nodiscard]] double t() const;
};
[[nodiscard]] PairedDifference paired_difference(const std::vector<double>& a,
                                                 const std::vector<double>& b);

// Normalized histogram over [k_min, k_max]; density integrates to 1 over the
// in-range samples. The top edge is inclusive.
struct Histogram {
  std::vector<double> edges;
  std::vector<std::size_t> counts;
  std::vector<double> density;
  std::size_t below = 0;
  std::size_t above = 0;
};
[[nodiscard]] Histogram k_histogram(const std::vector<double>& k, const PdfConfig& cfg);

// ---------------------------------------------------------------------------
// commands; each writes into cfg.output_dir and returns a process exit code

struct CommandPaths {
  std::string dataset;     // generate output, train/tune input
  std::string validation;  // held-out series for the training report
  std::string model;       // train output, tune/evaluate input
  std::string tuned;       // optional tuned-gains file read by evaluate
  std::vector<std::string> inputs;  // trajectory files for pdf
};

// Defaults for every path inside the output directory.
[[nodiscard]] CommandPaths default_paths(const RunConfig& cfg);

int cmd_generate(const RunConfig& cfg, const CommandPaths& paths);
int cmd_train(const RunConfig& cfg, const CommandPaths& paths);
int cmd_tune(const RunConfig& cfg, const CommandPaths& paths, int workers);
int cmd_evaluate(const RunConfig& cfg, const CommandPaths& paths, int workers);
int cmd_pdf(const RunConfig& cfg, const CommandPaths& paths);

}  // namespace caesn::harness
