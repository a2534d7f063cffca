#pragma once

// Black-box maximization for hyperparameters: Gaussian-process surrogate with
// expected improvement, or exhaustive grid evaluation.

#include "caesn/control.hpp"
#include "caesn/reservoir.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace caesn::hyperopt {

enum class Scale { kLinear, kLog };

struct Dimension {
  std::string name;
  double lower = 0.0;
  double upper = 1.0;
  Scale scale = Scale::kLinear;
};

// lower == upper pins a dimension to one value.
struct SearchSpace {
  std::vector<Dimension> dims;

  void validate() const;
  [[nodiscard]] std::size_t size() const { return dims.size(); }
  // unit cube <-> natural units
  [[nodiscard]] std::vector<double> to_natural(const std::vector<double>& unit) const;
  [[nodiscard]] std::vector<double> to_unit(const std::vector<double>& natural) const;
  [[nodiscard]] std::optional<std::size_t> index_of(const std::string& name) const;
};

struct EvalRecord {
  std::vector<double> point;  // natural units
  double objective = 0.0;
  double noise_est = 0.0;
  std::uint64_t seed = 0;
  bool failed = false;
  double wall_time_s = 0.0;
};

enum class Mode { kBayesian, kGrid };

struct OptimizeOptions {
  Mode mode = Mode::kBayesian;
  // Grid mode: explicit points (natural units). Empty means a full factorial grid
  // with the largest level count per dimension that fits the budget.
  std::vector<std::vector<double>> grid;
  // Candidate points scored by the acquisition per iteration.
  int acquisition_samples = 2048;
  bool measure_time = false;
};

struct OptimizeResult {
  std::vector<double> best_point;
  double best_objective = 0.0;
  std::vector<EvalRecord> history;
};

// Objective receives a point in natural units and the evaluation's seed. A thrown
// exception marks the point failed; it is recorded with the worst objective seen.
using Objective = std::function<double(const std::vector<double>& point, std::uint64_t seed)>;

[[nodiscard]] OptimizeResult optimize(const Objective& objective, const SearchSpace& space,
                                      int budget, std::uint64_t seed,
                                      const OptimizeOptions& opts = {});

// Squared-exponential GP on unit-cube inputs with standardized targets; length
// scales and noise fit by maximizing the log marginal likelihood.
class GaussianProcess {
 public:
  void fit(const std::vector<std::vector<double>>& x, const std::vector<double>& y);
  // Posterior mean and standard deviation in the original target units.
  [[nodiscard]] std::pair<double, double> predict(const std::vector<double>& x) const;
  [[nodiscard]] double noise_std() const;
  [[nodiscard]] const std::vector<double>& length_scales() const { return length_; }
  [[nodiscard]] double log_marginal_likelihood(const std::vector<double>& log_length,
                                               double log_noise) const;

 private:
  void factorize();

  std::vector<std::vector<double>> x_;
  Eigen::VectorXd y_;  // standardized
  double y_mean_ = 0.0;
  double y_std_ = 1.0;
  std::vector<double> length_;
  double noise_var_ = 1e-6;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::VectorXd alpha_;
};

// Expected improvement over best for a maximization problem.
[[nodiscard]] double expected_improvement(double mean, double sd, double best);

// Everything a controller tuning run needs besides the search space.
struct TuneContext {
  dynsys::MfeParams mfe;
  reward::RewardConfig reward;
  double episode_lt = 20.0;
  // Frozen validation initial conditions shared by every candidate point.
  std::vector<dynsys::StateVector> validation_ics;
  // Needed when the space has sigma_in, sigma_c or ridge_lambda dimensions.
  const reservoir::TrainingPairs* training = nullptr;
  OptimizeOptions options;
};

// Recognized dimension names: sigma_in, sigma_c, ridge_lambda (retrain the ESN),
// k_c, k_p, k_d, k_i, tau_i (controller gains).
[[nodiscard]] control::ControllerSpec apply_point(const control::ControllerSpec& spec,
                                                  const SearchSpace& space,
                                                  const std::vector<double>& point,
                                                  const TuneContext& ctx);

// Mean average reward over the validation episodes.
[[nodiscard]] double validation_reward(const control::ControllerSpec& spec,
                                       const TuneContext& ctx);

struct TuneResult {
  control::ControllerSpec spec;
  OptimizeResult search;
};

// n_val_episodes frozen initial conditions are drawn from seed when ctx carries none.
[[nodiscard]] TuneResult tune_controller(const control::ControllerSpec& spec_template,
                                         const SearchSpace& space, int n_val_episodes,
                                         int budget, std::uint64_t seed, TuneContext ctx);

[[nodiscard]] std::string history_csv(const SearchSpace& space,
                                      const std::vector<EvalRecord>& history);

}  // namespace caesn::hyperopt
