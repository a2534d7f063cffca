#include "caesn/hyperopt.hpp"

#include "caesn/errors.hpp"
#include "caesn/random.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <numbers>

namespace caesn::hyperopt {

// ---------------------------------------------------------------------------
// search space

void SearchSpace::validate() const {
  if (dims.empty()) throw ConfigError("search space has no dimensions");
  for (const auto& d : dims) {
    if (!(d.lower <= d.upper)) throw ConfigError("dimension '" + d.name + "': lower > upper");
    if (d.scale == Scale::kLog && !(d.lower > 0.0)) {
      throw ConfigError("dimension '" + d.name + "': log scale needs positive bounds");
    }
  }
}

std::vector<double> SearchSpace::to_natural(const std::vector<double>& unit) const {
  std::vector<double> out(dims.size());
  for (std::size_t i = 0; i < dims.size(); ++i) {
    const auto& d = dims[i];
    const double u = std::clamp(unit[i], 0.0, 1.0);
    if (d.lower == d.upper) {
      out[i] = d.lower;
    } else if (d.scale == Scale::kLog) {
      out[i] = std::exp(std::log(d.lower) + u * (std::log(d.upper) - std::log(d.lower)));
    } else {
      out[i] = d.lower + u * (d.upper - d.lower);
    }
  }
  return out;
}

std::vector<double> SearchSpace::to_unit(const std::vector<double>& natural) const {
  std::vector<double> out(dims.size());
  for (std::size_t i = 0; i < dims.size(); ++i) {
    const auto& d = dims[i];
    if (d.lower == d.upper) {
      out[i] = 0.0;
    } else if (d.scale == Scale::kLog) {
      out[i] = (std::log(natural[i]) - std::log(d.lower)) / (std::log(d.upper) - std::log(d.lower));
    } else {
      out[i] = (natural[i] - d.lower) / (d.upper - d.lower);
    }
  }
  return out;
}

std::optional<std::size_t> SearchSpace::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (dims[i].name == name) return i;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Gaussian process

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b,
               const std::vector<double>& length) {
  double s = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) {
    const double z = (a[d] - b[d]) / length[d];
    s += z * z;
  }
  return s;
}

constexpr double kMinLogLength = -3.5;  // ~0.03
constexpr double kMaxLogLength = 1.1;   // ~3
constexpr double kMinLogNoise = -13.8;  // variance ~1e-6
constexpr double kMaxLogNoise = -0.7;   // variance ~0.5

}  // namespace

double GaussianProcess::log_marginal_likelihood(const std::vector<double>& log_length,
                                                double log_noise) const {
  const auto n = static_cast<Eigen::Index>(x_.size());
  std::vector<double> length(log_length.size());
  for (std::size_t d = 0; d < length.size(); ++d) length[d] = std::exp(log_length[d]);
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      k(i, j) = k(j, i) = std::exp(-0.5 * sq_dist(x_[static_cast<std::size_t>(i)],
                                                   x_[static_cast<std::size_t>(j)], length));
    }
  }
  k.diagonal().array() += std::exp(log_noise);
  Eigen::LLT<Eigen::MatrixXd> llt(k);
  if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
  const Eigen::VectorXd alpha = llt.solve(y_);
  const Eigen::MatrixXd l = llt.matrixL();
  const double log_det = 2.0 * l.diagonal().array().log().sum();
  return -0.5 * y_.dot(alpha) - 0.5 * log_det -
         0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
}

void GaussianProcess::fit(const std::vector<std::vector<double>>& x, const std::vector<double>& y) {
  if (x.empty() || x.size() != y.size()) throw ConfigError("GaussianProcess::fit: bad data");
  x_ = x;
  const auto n = static_cast<double>(y.size());
  y_mean_ = 0.0;
  for (double v : y) y_mean_ += v;
  y_mean_ /= n;
  double var = 0.0;
  for (double v : y) var += (v - y_mean_) * (v - y_mean_);
  y_std_ = y.size() > 1 ? std::sqrt(var / n) : 1.0;
  if (!(y_std_ > 1e-12)) y_std_ = 1.0;
  y_.resize(static_cast<Eigen::Index>(y.size()));
  for (std::size_t i = 0; i < y.size(); ++i) y_[static_cast<Eigen::Index>(i)] = (y[i] - y_mean_) / y_std_;

  // Pattern search on the log hyperparameters from a few isotropic starts.
  const std::size_t dim = x.front().size();
  std::vector<double> best_ll(dim, std::log(0.3));
  double best_ln = std::log(1e-3);
  double best = -std::numeric_limits<double>::infinity();
  for (double l0 : {0.1, 0.3, 1.0}) {
    for (double n0 : {1e-4, 1e-2}) {
      std::vector<double> ll(dim, std::log(l0));
      double ln = std::log(n0);
      double f = log_marginal_likelihood(ll, ln);
      double step = 0.5;
      while (step > 0.02) {
        bool improved = false;
        for (std::size_t c = 0; c <= dim; ++c) {
          for (double dir : {1.0, -1.0}) {
            std::vector<double> tl = ll;
            double tn = ln;
            if (c < dim) {
              tl[c] = std::clamp(tl[c] + dir * step, kMinLogLength, kMaxLogLength);
            } else {
              tn = std::clamp(tn + dir * step, kMinLogNoise, kMaxLogNoise);
            }
            const double tf = log_marginal_likelihood(tl, tn);
            if (tf > f + 1e-12) {
              f = tf;
              ll = tl;
              ln = tn;
              improved = true;
            }
          }
        }
        if (!improved) step *= 0.5;
      }
      if (f > best) {
        best = f;
        best_ll = ll;
        best_ln = ln;
      }
    }
  }
  length_.resize(dim);
  for (std::size_t d = 0; d < dim; ++d) length_[d] = std::exp(best_ll[d]);
  noise_var_ = std::exp(best_ln);
  factorize();
}

void GaussianProcess::factorize() {
  const auto n = static_cast<Eigen::Index>(x_.size());
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      k(i, j) = k(j, i) = std::exp(-0.5 * sq_dist(x_[static_cast<std::size_t>(i)],
                                                   x_[static_cast<std::size_t>(j)], length_));
    }
  }
  k.diagonal().array() += noise_var_;
  llt_.compute(k);
  if (llt_.info() != Eigen::Success) throw Error("GP covariance is not positive definite");
  alpha_ = llt_.solve(y_);
}

std::pair<double, double> GaussianProcess::predict(const std::vector<double>& x) const {
  const auto n = static_cast<Eigen::Index>(x_.size());
  Eigen::VectorXd ks(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    ks[i] = std::exp(-0.5 * sq_dist(x, x_[static_cast<std::size_t>(i)], length_));
  }
  const double mean = ks.dot(alpha_);
  const Eigen::VectorXd v = llt_.matrixL().solve(ks);
  const double var = std::max(1.0 - v.squaredNorm(), 1e-12);
  return {mean * y_std_ + y_mean_, std::sqrt(var) * y_std_};
}

double GaussianProcess::noise_std() const { return std::sqrt(noise_var_) * y_std_; }

double expected_improvement(double mean, double sd, double best) {
  const double diff = mean - best;
  if (!(sd > 0.0)) return std::max(diff, 0.0);
  const double z = diff / sd;
  const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  return diff * cdf + sd * pdf;
}

// ---------------------------------------------------------------------------
// optimizer

namespace {

std::vector<std::vector<double>> latin_hypercube(std::size_t n, std::size_t dim, Rng& rng) {
  std::vector<std::vector<double>> pts(n, std::vector<double>(dim));
  for (std::size_t d = 0; d < dim; ++d) {
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    for (std::size_t i = 0; i < n; ++i) {
      pts[i][d] = (static_cast<double>(perm[i]) + rng.uniform()) / static_cast<double>(n);
    }
  }
  return pts;
}

std::vector<std::vector<double>> factorial_grid(const SearchSpace& space, int budget) {
  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < space.size(); ++i) {
    if (space.dims[i].lower != space.dims[i].upper) active.push_back(i);
  }
  int levels = 1;
  if (!active.empty()) {
    while (std::pow(levels + 1, static_cast<double>(active.size())) <= budget) ++levels;
  }
  std::size_t total = 1;
  for (std::size_t i = 0; i < active.size(); ++i) total *= static_cast<std::size_t>(levels);
  std::vector<std::vector<double>> pts;
  for (std::size_t idx = 0; idx < total; ++idx) {
    std::vector<double> u(space.size(), 0.0);
    std::size_t rem = idx;
    for (std::size_t a = active.size(); a-- > 0;) {
      const auto lv = rem % static_cast<std::size_t>(levels);
      rem /= static_cast<std::size_t>(levels);
      u[active[a]] = levels == 1 ? 0.5 : static_cast<double>(lv) / (levels - 1);
    }
    pts.push_back(space.to_natural(u));
  }
  return pts;
}

}  // namespace

OptimizeResult optimize(const Objective& objective, const SearchSpace& space, int budget,
                        std::uint64_t seed, const OptimizeOptions& opts) {
  space.validate();
  if (budget < 1) throw ConfigError("optimize: budget must be >= 1");
  Rng rng(seed);
  const std::uint64_t eval_seed = derive_seed(seed, 0xe7a1ULL);
  const std::size_t dim = space.size();

  OptimizeResult result;
  auto evaluate = [&](const std::vector<double>& natural, double noise_est) {
    EvalRecord rec;
    rec.point = natural;
    rec.seed = eval_seed;
    rec.noise_est = noise_est;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      rec.objective = objective(natural, eval_seed);
      if (!std::isfinite(rec.objective)) throw Error("non-finite objective");
    } catch (const std::exception&) {
      rec.failed = true;
      rec.objective = std::numeric_limits<double>::quiet_NaN();
    }
    if (opts.measure_time) {
      rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    result.history.push_back(std::move(rec));
  };
  auto worst_ok = [&]() -> std::optional<double> {
    std::optional<double> w;
    for (const auto& r : result.history) {
      if (!r.failed && (!w || r.objective < *w)) w = r.objective;
    }
    return w;
  };

  if (opts.mode == Mode::kGrid) {
    const auto grid = opts.grid.empty() ? factorial_grid(space, budget) : opts.grid;
    const std::size_t n = opts.grid.empty() ? grid.size()
                                            : std::min(grid.size(), static_cast<std::size_t>(budget));
    for (std::size_t i = 0; i < n; ++i) {
      if (grid[i].size() != dim) throw ConfigError("grid point dimension mismatch");
      evaluate(grid[i], 0.0);
    }
  } else {
    const std::size_t n_init =
        std::min<std::size_t>(static_cast<std::size_t>(budget), std::max<std::size_t>(5, 2 * dim));
    for (const auto& u : latin_hypercube(n_init, dim, rng)) evaluate(space.to_natural(u), 0.0);

    while (result.history.size() < static_cast<std::size_t>(budget)) {
      const auto worst = worst_ok();
      std::vector<std::vector<double>> xs;
      std::vector<double> ys;
      for (const auto& r : result.history) {
        xs.push_back(space.to_unit(r.point));
        ys.push_back(r.failed ? worst.value_or(0.0) : r.objective);
      }
      std::vector<double> next_unit(dim);
      double noise = 0.0;
      if (!worst) {
        for (auto& u : next_unit) u = rng.uniform();
      } else {
        GaussianProcess gp;
        gp.fit(xs, ys);
        noise = gp.noise_std();
        const double best_y = *std::max_element(ys.begin(), ys.end());
        // candidate pool: uniform draws plus perturbations of the incumbents
        std::vector<std::size_t> order(xs.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return ys[a] > ys[b]; });
        double best_ei = -1.0;
        for (int c = 0; c < opts.acquisition_samples; ++c) {
          std::vector<double> u(dim);
          if (c % 4 == 3) {
            const auto& base = xs[order[static_cast<std::size_t>(c / 4) % std::min<std::size_t>(5, order.size())]];
            for (std::size_t d = 0; d < dim; ++d) u[d] = std::clamp(base[d] + 0.05 * rng.normal(), 0.0, 1.0);
          } else {
            for (auto& v : u) v = rng.uniform();
          }
          bool duplicate = false;
          for (const auto& x : xs) {
            double dd = 0.0;
            for (std::size_t d = 0; d < dim; ++d) dd += (x[d] - u[d]) * (x[d] - u[d]);
            if (dd < 1e-18) duplicate = true;
          }
          if (duplicate) continue;
          const auto [mean, sd] = gp.predict(u);
          const double ei = expected_improvement(mean, sd, best_y);
          if (ei > best_ei) {
            best_ei = ei;
            next_unit = u;
          }
        }
      }
      evaluate(space.to_natural(next_unit), noise);
    }
  }

  const auto worst = worst_ok();
  if (!worst) throw Error("optimize: every objective evaluation failed");
  std::size_t best = result.history.size();
  for (std::size_t i = 0; i < result.history.size(); ++i) {
    auto& r = result.history[i];
    if (r.failed) {
      r.objective = *worst;
      continue;
    }
    if (best == result.history.size() || r.objective > result.history[best].objective) best = i;
  }
  result.best_point = result.history[best].point;
  result.best_objective = result.history[best].objective;
  return result;
}

// ---------------------------------------------------------------------------
// controller tuning

control::ControllerSpec apply_point(const control::ControllerSpec& spec, const SearchSpace& space,
                                    const std::vector<double>& point, const TuneContext& ctx) {
  control::ControllerSpec out = spec;
  auto value = [&](const std::string& name) -> std::optional<double> {
    if (auto i = space.index_of(name)) return point[*i];
    return std::nullopt;
  };
  for (const auto& d : space.dims) {
    static const std::vector<std::string> known = {"sigma_in", "sigma_c", "ridge_lambda", "k_c",
                                                   "k_p",      "k_d",     "k_i",          "tau_i"};
    if (std::find(known.begin(), known.end(), d.name) == known.end()) {
      throw ConfigError("unknown tuning dimension '" + d.name + "'");
    }
  }
  const auto s_in = value("sigma_in");
  const auto s_c = value("sigma_c");
  const auto lam = value("ridge_lambda");
  if (s_in || s_c || lam) {
    if (!spec.model) throw ConfigError("tuning ESN parameters needs a model");
    if (ctx.training == nullptr) throw ConfigError("tuning ESN parameters needs training data");
    const auto& mp = spec.model->params();
    auto fresh = spec.model->with_gains(s_in.value_or(mp.sigma_in), s_c.value_or(mp.sigma_c),
                                        lam.value_or(mp.ridge_lambda));
    out.model = std::make_shared<const reservoir::EsnModel>(reservoir::train(fresh, *ctx.training));
  }
  const bool any_gain = value("k_c") || value("k_p") || value("k_d") || value("k_i") || value("tau_i");
  if (any_gain) {
    control::PidGains g = spec.gains.value_or(control::PidGains{});
    g.k_c = value("k_c").value_or(g.k_c);
    g.k_p = value("k_p").value_or(g.k_p);
    g.k_d = value("k_d").value_or(g.k_d);
    g.k_i = value("k_i").value_or(g.k_i);
    g.tau_i = value("tau_i").value_or(g.tau_i);
    out.gains = g;
  }
  return out;
}

double validation_reward(const control::ControllerSpec& spec, const TuneContext& ctx) {
  const auto n = static_cast<long>(ctx.validation_ics.size());
  if (n == 0) throw ConfigError("validation set is empty");
  std::vector<double> rewards(static_cast<std::size_t>(n), 0.0);
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(dynamic, 1)
  for (long i = 0; i < n; ++i) {
    try {
      const auto res = control::run_episode(ctx.validation_ics[static_cast<std::size_t>(i)], spec,
                                            ctx.episode_lt, ctx.mfe, ctx.reward,
                                            static_cast<std::uint64_t>(i));
      rewards[static_cast<std::size_t>(i)] = res.metrics.avg_reward;
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  double sum = 0.0;
  for (double r : rewards) sum += r;  // fixed order keeps the mean reproducible
  return sum / static_cast<double>(n);
}

TuneResult tune_controller(const control::ControllerSpec& spec_template, const SearchSpace& space,
                           int n_val_episodes, int budget, std::uint64_t seed, TuneContext ctx) {
  if (ctx.validation_ics.empty()) {
    for (int i = 0; i < n_val_episodes; ++i) {
      ctx.validation_ics.push_back(
          control::episode_ic(derive_seed(seed, 1000 + static_cast<std::uint64_t>(i)), ctx.mfe, {}, ctx.reward.k_e));
    }
  }
  const Objective objective = [&](const std::vector<double>& point, std::uint64_t) {
    return validation_reward(apply_point(spec_template, space, point, ctx), ctx);
  };
  TuneResult out;
  out.search = optimize(objective, space, budget, seed, ctx.options);
  out.spec = apply_point(spec_template, space, out.search.best_point, ctx);
  return out;
}

std::string history_csv(const SearchSpace& space, const std::vector<EvalRecord>& history) {
  std::string out = "eval";
  for (const auto& d : space.dims) out += "," + d.name;
  out += ",objective,noise_est,seed,failed,wall_time_s\n";
  for (std::size_t i = 0; i < history.size(); ++i) {
    const auto& r = history[i];
    out += std::to_string(i);
    for (double v : r.point) out += "," + reward::fmt_real(v);
    out += "," + reward::fmt_real(r.objective) + "," + reward::fmt_real(r.noise_est) + "," +
           std::to_string(r.seed) + "," + (r.failed ? "1" : "0") + "," +
           reward::fmt_real(r.wall_time_s) + "\n";
  }
  return out;
}

}  // namespace caesn::hyperopt
