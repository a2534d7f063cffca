#include "support.hpp"

#include "caesn/reward.hpp"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <stdexcept>
#include <utility>

namespace caesn::testing {

Matrix dense_ridge(const Matrix& h, const Matrix& y, double lambda) {
  const std::size_t n = h.front().size();
  const std::size_t m = y.front().size();
  // augmented system [H^T H + lambda I | H^T Y]
  Matrix a(n, std::vector<double>(n + m, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < h.size(); ++r) s += h[r][i] * h[r][j];
      a[i][j] = s + (i == j ? lambda : 0.0);
    }
    for (std::size_t c = 0; c < m; ++c) {
      double s = 0.0;
      for (std::size_t r = 0; r < h.size(); ++r) s += h[r][i] * y[r][c];
      a[i][n + c] = s;
    }
  }
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    }
    if (a[piv][col] == 0.0) throw std::runtime_error("dense_ridge: singular system");
    std::swap(a[piv], a[col]);
    const double d = a[col][col];
    for (auto& v : a[col]) v /= d;
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col || a[r][col] == 0.0) continue;
      const double f = a[r][col];
      for (std::size_t c = col; c < n + m; ++c) a[r][c] -= f * a[col][c];
    }
  }
  Matrix x(n, std::vector<double>(m));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < m; ++c) x[i][c] = a[i][n + c];
  }
  return x;
}

std::vector<double> hand_activation(const reservoir::EsnModel& model, const dynsys::StateVector& q,
                                    double re) {
  const auto& p = model.params();
  const auto& w_in = model.w_in();
  const auto& w_c = model.w_c();
  const double u = (re - p.re_base) / (p.re_ctrl - p.re_base);
  std::vector<double> x(static_cast<std::size_t>(w_in.cols()));
  for (int m = 0; m < 9; ++m) {
    const double scale = p.input_scaling.empty() ? 1.0 : p.input_scaling[static_cast<std::size_t>(m)];
    x[static_cast<std::size_t>(m)] = q[m] * scale;
  }
  if (p.bias) x[9] = 1.0;
  std::vector<double> r(static_cast<std::size_t>(p.n_reservoir));
  for (int i = 0; i < p.n_reservoir; ++i) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < w_in.cols(); ++j) s += w_in(i, j) * x[static_cast<std::size_t>(j)];
    r[static_cast<std::size_t>(i)] = std::tanh(p.sigma_in * s + p.sigma_c * w_c(i, 0) * u);
  }
  return r;
}

dynsys::StateVector hand_step(const reservoir::EsnModel& model, const dynsys::StateVector& q,
                              double re) {
  const auto r = hand_activation(model, q, re);
  const auto& w_out = *model.w_out();
  dynsys::StateVector out;
  for (int m = 0; m < 9; ++m) {
    double s = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) s += w_out(static_cast<Eigen::Index>(i), m) * r[i];
    out[m] = s;
  }
  return out;
}

namespace {

struct Enumerator {
  const reservoir::EsnModel& model;
  const dynsys::StateVector& q;
  long n_hor;
  long slot;
  int n_slots;
  const std::vector<double>& actions;
  const reward::RewardConfig& rcfg;
  std::vector<int> seq;
  BruteForceChoice best;
  bool have = false;

  void score_current() {
    std::vector<double> k;
    std::vector<bool> controlled;
    dynsys::StateVector x = q;
    bool diverged = false;
    const double bound = model.params().divergence_bound;
    for (long i = 0; i < n_hor; ++i) {
      const long s = i / slot;
      const double re = s < n_slots ? actions[static_cast<std::size_t>(seq[static_cast<std::size_t>(s)])]
                                    : rcfg.re_base;
      controlled.push_back(re != rcfg.re_base);
      if (!diverged) {
        x = hand_step(model, x, re);
        for (int m = 0; m < 9; ++m) {
          if (!std::isfinite(x[m]) || std::abs(x[m]) > bound) diverged = true;
        }
      }
      if (diverged) {
        k.push_back(std::numeric_limits<double>::infinity());
      } else {
        double e = 0.0;
        for (int m = 0; m < 9; ++m) e += x[m] * x[m];
        k.push_back(0.5 * e);
      }
    }
    const auto metrics = reward::tally(k, controlled, rcfg);
    int n_ctrl = 0;
    for (int a : seq) n_ctrl += actions[static_cast<std::size_t>(a)] != rcfg.re_base ? 1 : 0;
    const bool take = !have || metrics.avg_reward > best.mean_reward ||
                      (metrics.avg_reward == best.mean_reward && n_ctrl < best.n_control_slots);
    if (take) {
      best = {seq, metrics.avg_reward, n_ctrl};
      have = true;
    }
  }

  void walk(int depth) {
    if (depth == n_slots) {
      score_current();
      return;
    }
    for (int a = 0; a < static_cast<int>(actions.size()); ++a) {
      seq[static_cast<std::size_t>(depth)] = a;
      walk(depth + 1);
    }
  }
};

}  // namespace

BruteForceChoice brute_force_mpc(const reservoir::EsnModel& model, const dynsys::StateVector& q,
                                 long n_hor, long slot_steps, int n_slots,
                                 const std::vector<double>& actions,
                                 const reward::RewardConfig& rcfg) {
  Enumerator e{model, q, n_hor, slot_steps, n_slots, actions, rcfg, std::vector<int>(static_cast<std::size_t>(n_slots)), {}, false};
  e.walk(0);
  return e.best;
}

control::HorizonConfig exact_horizon(long n_hor, long slot, int n_slots, double esn_dt,
                                     std::vector<double> actions) {
  control::HorizonConfig h;
  h.control_interval = static_cast<double>(slot) * esn_dt;
  h.tau_hor_lt = dynsys::time_to_lt(static_cast<double>(n_hor) * esn_dt);
  // half a slot of slack keeps the floor away from an integer boundary
  h.tau_opt_lt = std::min(h.tau_hor_lt, dynsys::time_to_lt((n_slots + 0.5) * h.control_interval));
  h.action_set.clear();
  for (double re : actions) h.action_set.push_back({re});
  return h;
}

reservoir::EsnModel random_model(Rng& rng, int n_res, double sigma_in, double sigma_c,
                                 double wout_scale, double esn_dt, double bound) {
  reservoir::EsnParams p;
  p.n_reservoir = n_res;
  p.sigma_in = sigma_in;
  p.sigma_c = sigma_c;
  p.esn_dt = esn_dt;
  p.divergence_bound = bound;
  p.input_scaling.assign(9, 1.0);
  p.seed = rng.below(1u << 30);
  auto model = reservoir::build(p);
  Eigen::MatrixXd w_out(n_res, 9);
  for (int i = 0; i < n_res; ++i) {
    for (int m = 0; m < 9; ++m) w_out(i, m) = wout_scale * rng.uniform(-1.0, 1.0);
  }
  return model.with_readout(w_out, p.input_scaling);
}

reservoir::EsnModel zero_model(int n_res, double esn_dt) {
  reservoir::EsnParams p;
  p.n_reservoir = n_res;
  p.esn_dt = esn_dt;
  p.input_scaling.assign(9, 1.0);
  auto model = reservoir::build(p);
  return model.with_readout(Eigen::MatrixXd::Zero(n_res, 9), p.input_scaling);
}

std::string scratch_dir(const std::string& tag) {
  namespace fs = std::filesystem;
  static int counter = 0;
  const auto dir = fs::temp_directory_path() /
                   ("caesn_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

}  // namespace caesn::testing
