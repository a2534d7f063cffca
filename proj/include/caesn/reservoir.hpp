#pragma once

// Control-aware echo state network. With rho = 0 the reservoir has no memory and
// the network is a one-step map (q, u) -> q_next trained by ridge regression.

#include "caesn/dynsys.hpp"

#include "json.hpp"

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace caesn::reservoir {

using dynsys::ControlAction;
using dynsys::StateVector;
using dynsys::Trajectory;

struct EsnParams {
  int n_reservoir = 500;
  double sigma_in = 0.05;
  double sigma_c = 0.05;
  double rho = 0.0;
  double density = 0.03;
  double ridge_lambda = 1e-10;
  bool bias = true;
  // Multiplies q component-wise before it enters the reservoir. Left empty, it is
  // set to 1/std of the training inputs by train().
  std::vector<double> input_scaling;
  std::uint64_t seed = 1;
  double esn_dt = 0.25;
  // Encoding u = (Re - re_base) / (re_ctrl - re_base).
  double re_base = 400.0;
  double re_ctrl = 2000.0;
  // |q_i| above this during a rollout is reported as divergence.
  double divergence_bound = 10.0;

  void validate() const;
  [[nodiscard]] int input_dim() const { return dynsys::kModes + (bias ? 1 : 0); }
  [[nodiscard]] double encode(ControlAction a) const {
    return (a.re - re_base) / (re_ctrl - re_base);
  }
};

class EsnModel {
 public:
  EsnModel() = default;
  EsnModel(EsnParams params, Eigen::MatrixXd w_in, Eigen::SparseMatrix<double> w,
           Eigen::MatrixXd w_c, std::optional<Eigen::MatrixXd> w_out = std::nullopt);

  [[nodiscard]] const EsnParams& params() const { return params_; }
  [[nodiscard]] const Eigen::MatrixXd& w_in() const { return w_in_; }
  [[nodiscard]] const Eigen::SparseMatrix<double>& w() const { return w_; }
  [[nodiscard]] const Eigen::MatrixXd& w_c() const { return w_c_; }
  [[nodiscard]] const std::optional<Eigen::MatrixXd>& w_out() const { return w_out_; }
  [[nodiscard]] bool trained() const { return w_out_.has_value(); }
  [[nodiscard]] int size() const { return params_.n_reservoir; }

  // Returns a copy with a new readout (and input scaling). The random matrices are
  // shared by value, never resampled.
  [[nodiscard]] EsnModel with_readout(Eigen::MatrixXd w_out, std::vector<double> input_scaling) const;
  // Same random matrices, different input/control gains. Drops the readout.
  [[nodiscard]] EsnModel with_gains(double sigma_in, double sigma_c, double ridge_lambda) const;

  // Normalized (and bias-augmented) input vector.
  [[nodiscard]] Eigen::VectorXd input_vector(const StateVector& q) const;

  // Reservoir state r(t+1) for input (q, a) and previous state r_prev (used only
  // when rho != 0).
  [[nodiscard]] Eigen::VectorXd activation(const StateVector& q, ControlAction a,
                                           const Eigen::VectorXd* r_prev = nullptr) const;
  // Pre-tanh argument of activation().
  [[nodiscard]] Eigen::VectorXd preactivation(const StateVector& q, ControlAction a,
                                              const Eigen::VectorXd* r_prev = nullptr) const;

  [[nodiscard]] StateVector readout(const Eigen::VectorXd& r) const;

 private:
  friend class Stepper;
  void refresh_cache();

  EsnParams params_;
  Eigen::MatrixXd w_in_;
  Eigen::SparseMatrix<double> w_;
  Eigen::MatrixXd w_c_;
  std::optional<Eigen::MatrixXd> w_out_;

  // sigma_in * w_in with the input scaling folded in, sigma_c * w_c and w_out^T.
  Eigen::MatrixXd in_gain_;
  Eigen::VectorXd ctrl_gain_;
  Eigen::Matrix<double, dynsys::kModes, Eigen::Dynamic> readout_t_;
};

[[nodiscard]] EsnModel build(const EsnParams& params);

// One-step prediction. Throws NotTrainedError before training.
[[nodiscard]] StateVector step(const EsnModel& model, const StateVector& q, ControlAction a);

// Teacher-forced design matrices from a dataset: one row per (input, target) pair.
struct TrainingPairs {
  std::vector<StateVector> inputs;
  std::vector<ControlAction> actions;
  std::vector<StateVector> targets;
  // index of the first pair of each series (needed for rho != 0)
  std::vector<std::size_t> series_start;
};

// Pairs consecutive samples esn_dt apart. Throws DataError if the sampling interval
// does not divide esn_dt.
[[nodiscard]] TrainingPairs make_pairs(const std::vector<Trajectory>& dataset, double esn_dt);

// Per-component 1/std of the inputs; components with zero spread get scale 1.
[[nodiscard]] std::vector<double> input_scaling_from(const TrainingPairs& pairs);

// Minimizer of ||H X - Y||^2 + lambda ||X||^2 from the regularized normal equations.
[[nodiscard]] Eigen::MatrixXd ridge_solve(const Eigen::MatrixXd& gram, const Eigen::MatrixXd& rhs,
                                          double lambda);
[[nodiscard]] Eigen::MatrixXd ridge_regression(const Eigen::MatrixXd& h, const Eigen::MatrixXd& y,
                                               double lambda);

struct TrainReport {
  std::size_t n_samples = 0;
  double normal_residual = 0.0;  // relative residual of the normal equations
  bool underdetermined = false;  // fewer samples than reservoir units
};

[[nodiscard]] EsnModel train(const EsnModel& model, const std::vector<Trajectory>& dataset,
                             TrainReport* report = nullptr);
[[nodiscard]] EsnModel train(const EsnModel& model, const TrainingPairs& pairs,
                             TrainReport* report = nullptr);

struct Rollout {
  // states[0] = q0, states[i] = prediction after i steps
  std::vector<StateVector> states;
  std::vector<double> k;
  // first step whose prediction left the validity region; that state is not stored
  std::optional<long> diverged_at;

  [[nodiscard]] bool diverged() const { return diverged_at.has_value(); }
  [[nodiscard]] Trajectory to_trajectory(const std::vector<ControlAction>& schedule,
                                         double t0, double dt) const;
};

// Closed-loop autoregression. schedule must hold at least n_steps actions.
[[nodiscard]] Rollout rollout(const EsnModel& model, const StateVector& q0,
                              const std::vector<ControlAction>& schedule, long n_steps);

// Allocation-free stepping for controllers: keeps the reservoir buffer between calls.
class Stepper {
 public:
  explicit Stepper(const EsnModel& model);
  // Advances q in place. Returns false when the prediction leaves the validity region.
  bool advance(StateVector& q, double u);
  void reset();

 private:
  const EsnModel& model_;
  Eigen::VectorXd in_;
  Eigen::VectorXd r_;
  Eigen::VectorXd r_prev_;
  double bound_;
};

// Model files: versioned JSON with all matrices stored as exact hex floats.
[[nodiscard]] nlohmann::json esn_params_to_json(const EsnParams& p);
[[nodiscard]] EsnParams esn_params_from_json(const nlohmann::json& j);

void save_model(const EsnModel& model, const std::string& path);
[[nodiscard]] EsnModel load_model(const std::string& path);

}  // namespace caesn::reservoir
