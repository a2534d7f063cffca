#pragma once

// Independent oracles and fixtures shared by the unit and acceptance tests. The
// oracles avoid the library's numerical paths on purpose: plain loops, no Eigen
// solvers.

#include "caesn/control.hpp"
#include "caesn/random.hpp"
#include "caesn/reservoir.hpp"

#include <string>
#include <vector>

namespace caesn::testing {

using Matrix = std::vector<std::vector<double>>;

// argmin ||H X - Y||^2 + lambda ||X||^2: normal equations formed with explicit
// loops and solved by Gauss-Jordan elimination with partial pivoting.
[[nodiscard]] Matrix dense_ridge(const Matrix& h, const Matrix& y, double lambda);

// Reservoir activation evaluated term by term from the stored matrices.
[[nodiscard]] std::vector<double> hand_activation(const reservoir::EsnModel& model,
                                                  const dynsys::StateVector& q, double re);

// One ESN step evaluated term by term from the stored matrices.
[[nodiscard]] dynsys::StateVector hand_step(const reservoir::EsnModel& model,
                                            const dynsys::StateVector& q, double re);

struct BruteForceChoice {
  std::vector<int> sequence;
  double mean_reward = 0.0;
  int n_control_slots = 0;
};

// Exhaustive receding-horizon search written from the problem statement: walks
// every action sequence in lexicographic order by recursion, predicts with
// hand_step, scores with reward::tally, keeps a candidate only if it is strictly
// better by (reward, fewer control slots).
[[nodiscard]] BruteForceChoice brute_force_mpc(const reservoir::EsnModel& model,
                                               const dynsys::StateVector& q, long n_hor,
                                               long slot_steps, int n_slots,
                                               const std::vector<double>& actions,
                                               const reward::RewardConfig& rcfg);

// Horizon whose step counts come out exactly: n_hor ESN steps, slot steps per
// control interval and n_slots optimized slots at the given esn_dt.
[[nodiscard]] control::HorizonConfig exact_horizon(long n_hor, long slot, int n_slots,
                                                   double esn_dt,
                                                   std::vector<double> actions = {400.0, 2000.0});

// Trained model with random matrices and readout. wout_scale sets the output size.
[[nodiscard]] reservoir::EsnModel random_model(Rng& rng, int n_res, double sigma_in,
                                               double sigma_c, double wout_scale,
                                               double esn_dt = 1.0, double bound = 10.0);

// Model whose readout is all zeros: predicts q = 0 for every input.
[[nodiscard]] reservoir::EsnModel zero_model(int n_res = 3, double esn_dt = 0.25);

// Unique scratch directory under the system temp dir.
[[nodiscard]] std::string scratch_dir(const std::string& tag);

}  // namespace caesn::testing
