#include "doctest.h"

#include "caesn/errors.hpp"
#include "caesn/hyperopt.hpp"
#include "support.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

using namespace caesn;
using namespace caesn::hyperopt;

namespace {

SearchSpace one_dim(double lo, double hi, Scale scale = Scale::kLinear) {
  SearchSpace s;
  s.dims.push_back({"x", lo, hi, scale});
  return s;
}

double parabola(const std::vector<double>& x, std::uint64_t) {
  return -(x[0] - 0.3) * (x[0] - 0.3);
}

control::ControllerSpec p_esn_template(std::shared_ptr<const reservoir::EsnModel> model) {
  control::ControllerSpec s;
  s.kind = control::ControllerKind::kPEsn;
  s.gains = control::PidGains{};
  s.horizon = control::HorizonConfig{};
  s.model = std::move(model);
  return s;
}

}  // namespace

TEST_SUITE("hyperopt") {

TEST_CASE("bayesian search finds the maximum of a parabola") {
  const auto r = optimize(parabola, one_dim(0.0, 1.0), 30, 11);
  CHECK(r.history.size() == 30);
  CHECK(std::abs(r.best_point[0] - 0.3) <= 0.05);
}

TEST_CASE("explicit grid returns its argmax") {
  OptimizeOptions opts;
  opts.mode = Mode::kGrid;
  opts.grid = {{0.9}, {0.25}, {0.6}};
  const auto r = optimize(parabola, one_dim(0.0, 1.0), 3, 1, opts);
  CHECK(r.best_point == std::vector<double>{0.25});
  CHECK(r.best_objective == parabola({0.25}, 0));
  CHECK(r.history.size() == 3);
}

TEST_CASE("factorial grid fits the budget") {
  SearchSpace s;
  s.dims = {{"a", 0.0, 1.0, Scale::kLinear}, {"b", 1e-3, 1e-1, Scale::kLog}};
  OptimizeOptions opts;
  opts.mode = Mode::kGrid;
  const auto r = optimize([](const std::vector<double>& x, std::uint64_t) { return x[0] - x[1]; }, s, 10, 1, opts);
  CHECK(r.history.size() == 9);
  CHECK(r.best_point[0] == 1.0);
  CHECK(r.best_point[1] == doctest::Approx(1e-3).epsilon(1e-12));
}

TEST_CASE("same seed gives the same history") {
  SearchSpace s;
  s.dims = {{"a", -1.0, 1.0, Scale::kLinear}, {"b", 1e-4, 1.0, Scale::kLog}};
  const Objective f = [](const std::vector<double>& x, std::uint64_t) {
    return std::sin(3.0 * x[0]) - std::log10(x[1]) * 0.1;
  };
  const auto a = optimize(f, s, 15, 5);
  const auto b = optimize(f, s, 15, 5);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].point == b.history[i].point);
    CHECK(a.history[i].objective == b.history[i].objective);
    CHECK(a.history[i].seed == b.history[i].seed);
  }
  CHECK(history_csv(s, a.history) == history_csv(s, b.history));
  CHECK(optimize(f, s, 15, 6).history[0].point != a.history[0].point);
}

TEST_CASE("budget one returns the evaluated point") {
  const auto r = optimize(parabola, one_dim(0.0, 1.0), 1, 3);
  REQUIRE(r.history.size() == 1);
  CHECK(r.best_point == r.history[0].point);
  CHECK(r.best_objective == r.history[0].objective);
  CHECK_THROWS_AS((void)optimize(parabola, one_dim(0.0, 1.0), 0, 3), ConfigError);
}

TEST_CASE("best point is always one that was evaluated") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto r = optimize(parabola, one_dim(-2.0, 2.0), 10, seed);
    bool found = false;
    for (const auto& h : r.history) {
      CHECK(h.objective <= r.best_objective);
      found = found || (h.point == r.best_point && h.objective == r.best_objective);
    }
    CHECK(found);
  }
}

TEST_CASE("failed evaluations get the worst objective and the search continues") {
  const Objective f = [](const std::vector<double>& x, std::uint64_t) -> double {
    if (x[0] > 0.5) throw std::runtime_error("unstable");
    return x[0];
  };
  const auto r = optimize(f, one_dim(0.0, 1.0), 12, 4);
  CHECK(r.history.size() == 12);
  double worst = 1.0;
  int failed = 0;
  for (const auto& h : r.history) {
    if (!h.failed) worst = std::min(worst, h.objective);
  }
  for (const auto& h : r.history) {
    if (h.failed) {
      ++failed;
      CHECK(h.objective == worst);
    }
  }
  CHECK(failed > 0);
  CHECK(r.best_point[0] <= 0.5);
  const Objective never = [](const std::vector<double>&, std::uint64_t) -> double {
    throw std::runtime_error("no");
  };
  CHECK_THROWS_AS((void)optimize(never, one_dim(0.0, 1.0), 3, 1), Error);
}

TEST_CASE("gaussian process interpolates noise-free data") {
  GaussianProcess gp;
  std::vector<std::vector<double>> x;
  std::vector<double> y;
  for (int i = 0; i <= 8; ++i) {
    x.push_back({i / 8.0});
    y.push_back(std::sin(4.0 * i / 8.0));
  }
  gp.fit(x, y);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto [m, sd] = gp.predict(x[i]);
    CHECK(m == doctest::Approx(y[i]).epsilon(1e-2).scale(1.0));
    CHECK(sd < 0.05);
  }
  const auto [m, sd] = gp.predict({0.5625});
  CHECK(m == doctest::Approx(std::sin(4.0 * 0.5625)).epsilon(0.05).scale(1.0));
  CHECK(sd >= 0.0);
}

TEST_CASE("expected improvement properties") {
  CHECK(expected_improvement(1.0, 0.0, 0.5) == 0.5);
  CHECK(expected_improvement(0.2, 0.0, 0.5) == 0.0);
  // at mean = best, EI = sd * phi(0)
  CHECK(expected_improvement(0.0, 2.0, 0.0) == doctest::Approx(2.0 / std::sqrt(2.0 * M_PI)).epsilon(1e-14));
  double prev = 0.0;
  for (double sd = 0.1; sd < 3.0; sd += 0.1) {
    const double ei = expected_improvement(-0.5, sd, 0.0);
    CHECK(ei > prev);
    CHECK(ei >= 0.0);
    prev = ei;
  }
}

TEST_CASE("search space mapping") {
  SearchSpace s;
  s.dims = {{"lin", -2.0, 2.0, Scale::kLinear}, {"log", 1e-6, 1e-2, Scale::kLog}, {"pin", 0.4, 0.4, Scale::kLinear}};
  CHECK_NOTHROW(s.validate());
  const auto nat = s.to_natural({0.5, 0.5, 0.7});
  CHECK(nat[0] == 0.0);
  CHECK(nat[1] == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(nat[2] == 0.4);
  const auto back = s.to_unit(nat);
  CHECK(back[0] == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(back[1] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(back[2] == 0.0);
  CHECK(s.index_of("log") == std::optional<std::size_t>{1});
  CHECK_FALSE(s.index_of("nope").has_value());
  CHECK_THROWS_AS(one_dim(1.0, 0.0).validate(), ConfigError);
  CHECK_THROWS_AS(one_dim(0.0, 1.0, Scale::kLog).validate(), ConfigError);
  CHECK_THROWS_AS(SearchSpace{}.validate(), ConfigError);
}

TEST_CASE("history table") {
  SearchSpace s;
  s.dims = {{"k_c", 0.0, 1.0, Scale::kLinear}};
  const auto r = optimize(parabola, s, 2, 1);
  const auto csv = history_csv(s, r.history);
  CHECK(csv.rfind("eval,k_c,objective,noise_est,seed,failed,wall_time_s\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}

TEST_CASE("applying points to a controller") {
  const auto model = std::make_shared<const reservoir::EsnModel>(testing::zero_model());
  SearchSpace s;
  s.dims = {{"k_c", 0.0, 1.0, Scale::kLinear}, {"k_p", 0.5, 2.0, Scale::kLinear}};
  const TuneContext ctx;
  const auto spec = apply_point(p_esn_template(model), s, {0.07, 1.5}, ctx);
  CHECK(spec.gains->k_c == 0.07);
  CHECK(spec.gains->k_p == 1.5);
  CHECK(spec.model == model);
  SearchSpace bad;
  bad.dims = {{"leak", 0.0, 1.0, Scale::kLinear}};
  CHECK_THROWS_AS((void)apply_point(p_esn_template(model), bad, {0.5}, ctx), ConfigError);
}

TEST_CASE("reservoir dimensions retrain the readout") {
  const dynsys::MfeParams p;
  dynsys::DatasetOptions opts;
  opts.actuation_probability = 0.3;
  const auto data = dynsys::generate_dataset(2, 5.0, 3, p, opts);
  reservoir::EsnParams ep;
  ep.n_reservoir = 30;
  const auto pairs = reservoir::make_pairs(data, ep.esn_dt);
  const auto model = std::make_shared<const reservoir::EsnModel>(reservoir::train(reservoir::build(ep), pairs));
  TuneContext ctx;
  ctx.training = &pairs;
  SearchSpace s;
  s.dims = {{"sigma_in", 0.01, 1.0, Scale::kLog}, {"ridge_lambda", 1e-8, 1e-2, Scale::kLog}};
  const auto spec = apply_point(p_esn_template(model), s, {0.3, 1e-4}, ctx);
  REQUIRE(spec.model);
  CHECK(spec.model->trained());
  CHECK(spec.model->params().sigma_in == 0.3);
  CHECK(spec.model->params().ridge_lambda == 1e-4);
  CHECK(spec.model->params().sigma_c == ep.sigma_c);
  // same random matrices
  CHECK((spec.model->w_in().array() == model->w_in().array()).all());
  const auto direct = reservoir::train(model->with_gains(0.3, ep.sigma_c, 1e-4), pairs);
  CHECK((spec.model->w_out()->array() == direct.w_out()->array()).all());
  TuneContext no_data;
  CHECK_THROWS((void)apply_point(p_esn_template(model), s, {0.3, 1e-4}, no_data));
}

TEST_CASE("pinned threshold is carried into the tuned controller") {
  const auto model = std::make_shared<const reservoir::EsnModel>(testing::zero_model());
  SearchSpace s;
  s.dims = {{"k_c", 0.042, 0.042, Scale::kLinear}};
  TuneContext ctx;
  ctx.episode_lt = 0.5;
  ctx.options.acquisition_samples = 64;
  const auto r = tune_controller(p_esn_template(model), s, 2, 3, 9, ctx);
  CHECK(r.spec.gains->k_c == 0.042);
  for (const auto& h : r.search.history) CHECK(h.point[0] == 0.042);
}

TEST_CASE("with nothing predicted and no events, tuning avoids needless control") {
  const dynsys::MfeParams p;
  const reward::RewardConfig rcfg;
  TuneContext ctx;
  ctx.episode_lt = 1.0;
  ctx.options.acquisition_samples = 256;
  double max_k = 0.0;
  for (std::uint64_t seed = 100; ctx.validation_ics.size() < 4 && seed < 400; ++seed) {
    const auto q0 = dynsys::attractor_state(seed, p);
    const auto ep = control::run_episode(q0, control::ControllerSpec{}, ctx.episode_lt, p, rcfg, 0);
    if (ep.metrics.n_event != 0) continue;
    ctx.validation_ics.push_back(q0);
    for (double k : ep.trajectory.k) max_k = std::max(max_k, k);
  }
  REQUIRE(ctx.validation_ics.size() == 4);
  const auto model = std::make_shared<const reservoir::EsnModel>(testing::zero_model());
  SearchSpace s;
  s.dims = {{"k_c", 0.0, 1.0, Scale::kLinear}};
  const auto r = tune_controller(p_esn_template(model), s, 4, 10, 2, ctx);
  CHECK(r.search.best_objective == 0.0);
  CHECK(r.spec.gains->k_c > 0.0);
  for (const auto& q0 : ctx.validation_ics) {
    const auto ep = control::run_episode(q0, r.spec, ctx.episode_lt, p, rcfg, 0);
    CHECK(ep.metrics.p_control == 0.0);
  }
  // a threshold of zero controls every step and scores strictly worse
  const auto always = apply_point(p_esn_template(model), s, {0.0}, ctx);
  CHECK(validation_reward(always, ctx) == doctest::Approx(-0.15).epsilon(1e-12));
  CHECK(max_k < 0.1);
}

}  // TEST_SUITE
