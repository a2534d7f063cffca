// Times the OpenMP kernels against their serial references and checks that
// both produce the same answer. Prints a CSV table. The MPC production search
// also prunes exactly, so its speedup is not from threads alone.

#include "caesn/control.hpp"
#include "caesn/dynsys.hpp"
#include "caesn/harness.hpp"
#include "caesn/random.hpp"
#include "caesn/reservoir.hpp"

#include <CLI11.hpp>
#include <omp.h>

#include <chrono>
#include <cstdio>
#include <memory>
#include <vector>

using namespace caesn;

namespace {

template <class F>
double best_of(int reps, F&& f) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

bool same_outcomes(const std::vector<harness::EpisodeOutcome>& a, const std::vector<harness::EpisodeOutcome>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& x = a[i].result.metrics;
    const auto& y = b[i].result.metrics;
    if (a[i].failed != b[i].failed || x.avg_reward != y.avg_reward || x.p_event != y.p_event ||
        x.p_control != y.p_control) {
      return false;
    }
  }
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"serial vs OpenMP kernel timings"};
  int workers = omp_get_max_threads();
  int reps = 3;
  int n_reservoir = 300;
  int n_states = 4;
  int n_episodes = 8;
  app.add_option("-w,--workers", workers, "OpenMP threads for the parallel variants")->check(CLI::PositiveNumber);
  app.add_option("--reps", reps, "repetitions; the fastest is reported")->check(CLI::PositiveNumber);
  app.add_option("--n-reservoir", n_reservoir, "reservoir size")->check(CLI::PositiveNumber);
  app.add_option("--mpc-states", n_states, "states searched per MPC timing")->check(CLI::PositiveNumber);
  app.add_option("--episodes", n_episodes, "P_ESN episodes per batch timing")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);
  omp_set_num_threads(workers);

  const dynsys::MfeParams p;
  const reward::RewardConfig rcfg;
  const auto data = dynsys::generate_dataset(10, 10.0, 11, p);
  reservoir::EsnParams ep;
  ep.n_reservoir = n_reservoir;
  const auto model = std::make_shared<const reservoir::EsnModel>(reservoir::train(reservoir::build(ep), data));

  std::vector<dynsys::StateVector> states;
  for (int i = 0; i < n_states; ++i) states.push_back(data[static_cast<std::size_t>(i) % data.size()].states[40]);

  std::printf("kernel,variant,workers,seconds,speedup,identical\n");

  const control::HorizonConfig horizon;
  std::vector<control::MpcResult> serial_mpc, parallel_mpc;
  const double t_serial = best_of(reps, [&] {
    serial_mpc.clear();
    for (const auto& q : states) serial_mpc.push_back(control::mpc_search_serial(*model, q, horizon, rcfg));
  });
  const double t_parallel = best_of(reps, [&] {
    parallel_mpc.clear();
    for (const auto& q : states) parallel_mpc.push_back(control::mpc_search(*model, q, horizon, rcfg));
  });
  bool mpc_same = true;
  for (std::size_t i = 0; i < states.size(); ++i) {
    mpc_same = mpc_same && serial_mpc[i].sequence == parallel_mpc[i].sequence &&
               serial_mpc[i].score == parallel_mpc[i].score;
  }
  std::printf("mpc_search,serial,1,%.6f,1,%d\n", t_serial, mpc_same ? 1 : 0);
  std::printf("mpc_search,pruned_openmp,%d,%.6f,%.3f,%d\n", workers, t_parallel, t_serial / t_parallel, mpc_same ? 1 : 0);

  control::ControllerSpec spec;
  spec.kind = control::ControllerKind::kPEsn;
  spec.gains = control::PidGains{};
  spec.horizon = horizon;
  spec.model = model;
  std::vector<dynsys::StateVector> ics;
  for (int i = 0; i < n_episodes; ++i) ics.push_back(dynsys::attractor_state(derive_seed(5, static_cast<std::uint64_t>(i)), p));
  std::vector<harness::BatchTask> tasks;
  for (std::size_t i = 0; i < ics.size(); ++i) tasks.push_back({&spec, i, &ics[i]});

  std::vector<harness::EpisodeOutcome> serial_batch, parallel_batch;
  const double b_serial =
      best_of(reps, [&] { serial_batch = harness::run_batch_serial(tasks, 10.0, p, rcfg, {}, false); });
  const double b_parallel =
      best_of(reps, [&] { parallel_batch = harness::run_batch(tasks, 10.0, p, rcfg, {}, false, workers); });
  const bool batch_same = same_outcomes(serial_batch, parallel_batch);
  std::printf("run_batch,serial,1,%.6f,1,%d\n", b_serial, batch_same ? 1 : 0);
  std::printf("run_batch,openmp,%d,%.6f,%.3f,%d\n", workers, b_parallel, b_serial / b_parallel, batch_same ? 1 : 0);
  return mpc_same && batch_same ? 0 : 2;
}
