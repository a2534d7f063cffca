#include "doctest.h"

#include "caesn/errors.hpp"
#include "caesn/reservoir.hpp"
#include "support.hpp"

#include <Eigen/Eigenvalues>
#include <omp.h>

#include <cmath>

using namespace caesn;
using namespace caesn::reservoir;
using dynsys::StateVector;

namespace {

StateVector random_state(Rng& rng, double scale) {
  StateVector q;
  for (int m = 0; m < 9; ++m) q[m] = scale * rng.uniform(-1.0, 1.0);
  return q;
}

TrainingPairs random_pairs(Rng& rng, std::size_t n) {
  TrainingPairs pairs;
  for (std::size_t i = 0; i < n; ++i) {
    pairs.inputs.push_back(random_state(rng, 0.5));
    pairs.actions.push_back({rng.uniform() < 0.5 ? 400.0 : 2000.0});
    pairs.targets.push_back(random_state(rng, 0.5));
  }
  pairs.series_start = {0};
  return pairs;
}

EsnParams small_params(int n, std::uint64_t seed) {
  EsnParams p;
  p.n_reservoir = n;
  p.sigma_in = 0.7;
  p.sigma_c = 0.4;
  p.seed = seed;
  p.input_scaling.assign(9, 1.0);
  return p;
}

bool same(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
}

}  // namespace

TEST_SUITE("reservoir") {

TEST_CASE("build is deterministic under the seed") {
  EsnParams p;
  p.n_reservoir = 50;
  p.seed = 9;
  const auto a = build(p);
  const auto b = build(p);
  CHECK(same(a.w_in(), b.w_in()));
  CHECK(same(a.w_c(), b.w_c()));
  CHECK(same(Eigen::MatrixXd(a.w()), Eigen::MatrixXd(b.w())));
  p.seed = 10;
  CHECK_FALSE(same(build(p).w_in(), a.w_in()));
  CHECK_FALSE(a.trained());
}

TEST_CASE("one-unit reservoir has one-row matrices") {
  EsnParams p;
  p.n_reservoir = 1;
  const auto m = build(p);
  CHECK(m.w_in().rows() == 1);
  CHECK(m.w_in().cols() == 10);
  CHECK(m.w_c().rows() == 1);
  CHECK(m.w().rows() == 1);
  CHECK(m.w().cols() == 1);
}

TEST_CASE("input and control weights lie in [-1, 1]") {
  EsnParams p;
  p.n_reservoir = 300;
  const auto m = build(p);
  CHECK(m.w_in().cwiseAbs().maxCoeff() <= 1.0);
  CHECK(m.w_c().cwiseAbs().maxCoeff() <= 1.0);
  const double fill = static_cast<double>(m.w().nonZeros()) / (300.0 * 300.0);
  CHECK(fill == doctest::Approx(p.density).epsilon(0.1));
}

TEST_CASE("recurrent matrix is normalized to unit spectral radius when used") {
  EsnParams p;
  p.n_reservoir = 40;
  p.density = 0.2;
  p.rho = 0.9;
  const auto m = build(p);
  Eigen::EigenSolver<Eigen::MatrixXd> es(Eigen::MatrixXd(m.w()));
  CHECK(es.eigenvalues().cwiseAbs().maxCoeff() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("zero gains without bias predict the zero vector") {
  EsnParams p;
  p.n_reservoir = 20;
  p.sigma_in = 0.0;
  p.sigma_c = 0.0;
  p.bias = false;
  p.input_scaling.assign(9, 1.0);
  Rng rng(2);
  Eigen::MatrixXd w_out = Eigen::MatrixXd::Random(20, 9);
  const auto m = build(p).with_readout(w_out, p.input_scaling);
  for (int t = 0; t < 10; ++t) {
    const auto q = random_state(rng, 2.0);
    for (double re : {400.0, 2000.0}) {
      const auto r = m.activation(q, {re});
      CHECK(r.cwiseAbs().maxCoeff() == 0.0);
      CHECK(step(m, q, {re}).cwiseAbs().maxCoeff() == 0.0);
    }
  }
}

TEST_CASE("activations stay strictly inside (-1, 1)") {
  Rng rng(4);
  auto m = testing::random_model(rng, 50, 0.9, 0.9, 1.0);
  for (int t = 0; t < 50; ++t) {
    const auto r = m.activation(random_state(rng, 3.0), {rng.uniform() < 0.5 ? 400.0 : 2000.0});
    CHECK(r.cwiseAbs().maxCoeff() < 1.0);
  }
}

TEST_CASE("two-unit step matches a hand evaluation") {
  EsnParams p;
  p.n_reservoir = 2;
  p.sigma_in = 0.3;
  p.sigma_c = 0.7;
  p.input_scaling = {1.0, 2.0, 0.5, 1.5, 1.0, 1.0, 3.0, 0.25, 1.0};
  Eigen::MatrixXd w_in(2, 10);
  w_in << 0.1, -0.2, 0.3, 0.4, -0.5, 0.6, -0.7, 0.8, 0.9, -0.15,
          -0.9, 0.8, -0.7, 0.6, 0.5, -0.4, 0.3, -0.2, 0.1, 0.35;
  Eigen::MatrixXd w_c(2, 1);
  w_c << 0.45, -0.65;
  Eigen::MatrixXd w_out(2, 9);
  w_out << 1, 2, 3, 4, 5, 6, 7, 8, 9,
           -1, 0.5, -0.25, 0.125, 2, -3, 0.75, 1.25, -0.5;
  const EsnModel m(p, w_in, Eigen::SparseMatrix<double>(2, 2), w_c, w_out);
  StateVector q;
  q << 0.9, -0.1, 0.05, 0.2, -0.3, 0.15, 0.0, -0.05, 0.1;
  for (double re : {400.0, 2000.0, 1200.0}) {
    const double u = (re - 400.0) / 1600.0;
    double r[2];
    for (int i = 0; i < 2; ++i) {
      double s = w_in(i, 9);
      for (int j = 0; j < 9; ++j) s += w_in(i, j) * p.input_scaling[static_cast<std::size_t>(j)] * q[j];
      r[i] = std::tanh(0.3 * s + 0.7 * w_c(i, 0) * u);
    }
    const auto pred = step(m, q, {re});
    for (int k = 0; k < 9; ++k) {
      CHECK(pred[k] == doctest::Approx(w_out(0, k) * r[0] + w_out(1, k) * r[1]).epsilon(1e-12).scale(1e-12));
    }
  }
}

TEST_CASE("huge ridge penalty drives the readout to zero") {
  Rng rng(5);
  const auto pairs = random_pairs(rng, 200);
  auto p = small_params(20, 3);
  p.ridge_lambda = 1e12;
  const auto m = train(build(p), pairs);
  CHECK(m.w_out()->cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("readout is recovered from targets generated by a known map") {
  Rng rng(6);
  auto p = small_params(12, 4);
  p.ridge_lambda = 1e-12;
  const auto untrained = build(p);
  Eigen::MatrixXd g(12, 9);
  for (int i = 0; i < 12; ++i) {
    for (int m = 0; m < 9; ++m) g(i, m) = rng.uniform(-1.0, 1.0);
  }
  auto pairs = random_pairs(rng, 400);
  for (std::size_t i = 0; i < pairs.inputs.size(); ++i) {
    const auto r = untrained.activation(pairs.inputs[i], pairs.actions[i]);
    pairs.targets[i] = g.transpose() * r;
  }
  TrainReport rep;
  const auto m = train(untrained, pairs, &rep);
  CHECK((*m.w_out() - g).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(rep.normal_residual <= 1e-8);
  CHECK(rep.n_samples == 400);
}

TEST_CASE("small instance matches a dense normal-equation oracle") {
  Rng rng(7);
  auto p = small_params(5, 8);
  p.ridge_lambda = 1e-3;
  const auto pairs = random_pairs(rng, 20);
  const auto m = train(build(p), pairs);
  testing::Matrix h, y;
  for (std::size_t i = 0; i < pairs.inputs.size(); ++i) {
    h.push_back(testing::hand_activation(m, pairs.inputs[i], pairs.actions[i].re));
    y.emplace_back(pairs.targets[i].data(), pairs.targets[i].data() + 9);
  }
  const auto x = testing::dense_ridge(h, y, p.ridge_lambda);
  double num = 0.0, den = 0.0;
  for (int i = 0; i < 5; ++i) {
    for (int k = 0; k < 9; ++k) {
      const double d = (*m.w_out())(i, k) - x[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
      num += d * d;
      den += x[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] * x[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
    }
  }
  CHECK(std::sqrt(num / den) <= 1e-10);
}

TEST_CASE("training is idempotent") {
  Rng rng(8);
  const auto pairs = random_pairs(rng, 300);
  const auto base = build(small_params(30, 1));
  const auto a = train(base, pairs);
  const auto b = train(base, pairs);
  const auto c = train(a, pairs);
  CHECK(same(*a.w_out(), *b.w_out()));
  CHECK(same(*a.w_out(), *c.w_out()));
}

TEST_CASE("training does not depend on the thread count") {
  Rng rng(41);
  const auto pairs = random_pairs(rng, 600);
  const auto base = build(small_params(300, 4));
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const auto one = train(base, pairs);
  omp_set_num_threads(4);
  const auto four = train(base, pairs);
  omp_set_num_threads(saved);
  CHECK(same(*one.w_out(), *four.w_out()));
}

TEST_CASE("training errors") {
  const auto base = build(small_params(10, 1));
  CHECK_THROWS_AS((void)train(base, TrainingPairs{}), TrainingError);
  CHECK_THROWS_AS((void)train(base, std::vector<dynsys::Trajectory>{}), TrainingError);
  Rng rng(9);
  auto pairs = random_pairs(rng, 30);
  pairs.inputs[3][2] = std::nan("");
  CHECK_THROWS_AS((void)train(base, pairs), DataError);
}

TEST_CASE("input scaling defaults to the inverse training spread") {
  Rng rng(10);
  const auto pairs = random_pairs(rng, 500);
  EsnParams p = small_params(10, 2);
  p.input_scaling.clear();
  const auto m = train(build(p), pairs);
  const auto s = input_scaling_from(pairs);
  REQUIRE(m.params().input_scaling.size() == 9);
  for (int k = 0; k < 9; ++k) CHECK(m.params().input_scaling[static_cast<std::size_t>(k)] == s[static_cast<std::size_t>(k)]);
  // uniform on [-0.5, 0.5] has std 1/sqrt(12)
  CHECK(s[0] == doctest::Approx(std::sqrt(12.0)).epsilon(0.1));
}

TEST_CASE("untrained model refuses to predict") {
  const auto m = build(small_params(4, 1));
  CHECK_THROWS_AS((void)step(m, StateVector::Zero(), {400.0}), NotTrainedError);
  CHECK_THROWS_AS((void)rollout(m, StateVector::Zero(), {{400.0}}, 1), NotTrainedError);
}

TEST_CASE("rollout basics") {
  Rng rng(11);
  const auto m = testing::random_model(rng, 20, 0.5, 0.5, 0.3, 0.25);
  const auto q0 = random_state(rng, 0.3);
  const auto r0 = rollout(m, q0, {}, 0);
  REQUIRE(r0.states.size() == 1);
  CHECK((r0.states[0] - q0).cwiseAbs().maxCoeff() == 0.0);
  CHECK(r0.k[0] == dynsys::kinetic_energy(q0));
  const auto r1 = rollout(m, q0, {{2000.0}}, 1);
  REQUIRE(r1.states.size() == 2);
  CHECK((r1.states[1] - step(m, q0, {2000.0})).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS((void)rollout(m, q0, {{400.0}}, 2), ConfigError);
}

TEST_CASE("rollout predictions depend only on their inputs") {
  Rng rng(12);
  const auto m = testing::random_model(rng, 30, 0.6, 0.6, 0.3, 0.25);
  const auto qa = random_state(rng, 0.3);
  const auto qb = random_state(rng, 0.3);
  std::vector<dynsys::ControlAction> sa, sb;
  for (int i = 0; i < 50; ++i) {
    sa.push_back({rng.uniform() < 0.3 ? 2000.0 : 400.0});
    sb.push_back({rng.uniform() < 0.7 ? 2000.0 : 400.0});
  }
  const auto iso_a = rollout(m, qa, sa, 50);
  const auto iso_b = rollout(m, qb, sb, 50);
  // interleave single steps of the two rollouts
  StateVector xa = qa, xb = qb;
  for (int i = 0; i < 50; ++i) {
    xa = step(m, xa, sa[static_cast<std::size_t>(i)]);
    xb = step(m, xb, sb[static_cast<std::size_t>(i)]);
    if (static_cast<std::size_t>(i + 1) < iso_a.states.size()) {
      CHECK((xa - iso_a.states[static_cast<std::size_t>(i + 1)]).cwiseAbs().maxCoeff() == 0.0);
    }
    if (static_cast<std::size_t>(i + 1) < iso_b.states.size()) {
      CHECK((xb - iso_b.states[static_cast<std::size_t>(i + 1)]).cwiseAbs().maxCoeff() == 0.0);
    }
  }
}

TEST_CASE("divergence is signalled") {
  Rng rng(13);
  const auto m = testing::random_model(rng, 10, 0.5, 0.5, 5.0, 0.25, 0.5);
  const auto r = rollout(m, random_state(rng, 0.1), std::vector<dynsys::ControlAction>(20, {400.0}), 20);
  REQUIRE(r.diverged());
  CHECK(r.states.size() == static_cast<std::size_t>(*r.diverged_at));
}

TEST_CASE("activation argument is Lipschitz in the action encoding") {
  Rng rng(14);
  for (int t = 0; t < 50; ++t) {
    const auto m = testing::random_model(rng, 25, rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0), 1.0);
    const auto q = random_state(rng, 1.0);
    const double re1 = rng.uniform(400.0, 2000.0);
    const double re2 = rng.uniform(400.0, 2000.0);
    const double du = std::abs(m.params().encode({re1}) - m.params().encode({re2}));
    const double diff = (m.preactivation(q, {re1}) - m.preactivation(q, {re2})).norm();
    CHECK(diff <= m.params().sigma_c * m.w_c().norm() * du * (1.0 + 1e-12) + 1e-15);
  }
}

TEST_CASE("pairs follow the ESN step") {
  dynsys::MfeParams p;
  const auto data = dynsys::generate_dataset(2, 1.0, 3, p);
  const auto one = make_pairs(data, 0.25);
  CHECK(one.inputs.size() == (data[0].size() - 1) + (data[1].size() - 1));
  CHECK(one.series_start == std::vector<std::size_t>{0, data[0].size() - 1});
  const auto two = make_pairs(data, 0.5);
  CHECK((two.targets[0] - data[0].states[2]).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS((void)make_pairs(data, 0.3), DataError);
}

TEST_CASE("model file round trip gives bit-identical predictions") {
  Rng rng(15);
  const auto data = dynsys::generate_dataset(3, 3.0, 5, dynsys::MfeParams{});
  EsnParams p;
  p.n_reservoir = 40;
  p.rho = 0.0;
  const auto m = train(build(p), data);
  const auto dir = testing::scratch_dir("model");
  save_model(m, dir + "/m.json");
  const auto back = load_model(dir + "/m.json");
  CHECK(same(m.w_in(), back.w_in()));
  CHECK(same(*m.w_out(), *back.w_out()));
  CHECK(m.params().input_scaling == back.params().input_scaling);
  for (int t = 0; t < 20; ++t) {
    const auto q = random_state(rng, 0.4);
    const dynsys::ControlAction a{t % 2 == 0 ? 400.0 : 2000.0};
    CHECK((step(m, q, a) - step(back, q, a)).cwiseAbs().maxCoeff() == 0.0);
  }
  save_model(build(p), dir + "/u.json");
  CHECK_FALSE(load_model(dir + "/u.json").trained());
}

TEST_CASE("trained surrogate tracks the one-step map") {
  dynsys::DatasetOptions opts;
  opts.actuation_probability = 0.3;
  const dynsys::MfeParams p;
  const auto train_set = dynsys::generate_dataset(5, 20.0, 21, p, opts);
  const auto test_set = dynsys::generate_dataset(2, 10.0, 22, p);
  EsnParams ep;
  ep.n_reservoir = 200;
  const auto m = train(build(ep), train_set);
  const auto pairs = make_pairs(test_set, ep.esn_dt);
  std::vector<double> err;
  for (std::size_t i = 0; i < pairs.inputs.size(); ++i) {
    err.push_back((step(m, pairs.inputs[i], pairs.actions[i]) - pairs.targets[i]).norm() /
                  pairs.targets[i].norm());
  }
  std::nth_element(err.begin(), err.begin() + static_cast<long>(err.size() / 2), err.end());
  CHECK(err[err.size() / 2] < 0.05);
}

TEST_CASE("parameter validation") {
  EsnParams p;
  p.n_reservoir = 0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = EsnParams{};
  p.ridge_lambda = 0.0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = EsnParams{};
  p.sigma_in = -1.0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  nlohmann::json j = esn_params_to_json(EsnParams{});
  CHECK(esn_params_from_json(j).n_reservoir == EsnParams{}.n_reservoir);
  j["leak"] = 0.5;
  CHECK_THROWS_AS((void)esn_params_from_json(j), ConfigError);
}

}  // TEST_SUITE
