#pragma once

// Nine-mode (Moehlis-Faisst-Eckhardt) model of sinusoidal shear flow with the
// Reynolds number as the actuation input, a fixed-step RK4 integrator, the
// kinetic-energy observable and training-set generation.

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

namespace caesn::dynsys {

inline constexpr int kModes = 9;

using StateVector = Eigen::Matrix<double, kModes, 1>;

// Leading Lyapunov exponent of the flow at the default geometry; 1 LT = 1/0.0163
// time units.
inline constexpr double kLyapunovExponent = 0.0163;

[[nodiscard]] inline double lt_to_time(double lt) { return lt / kLyapunovExponent; }
[[nodiscard]] inline double time_to_lt(double t) { return t * kLyapunovExponent; }

[[nodiscard]] StateVector laminar_state();

struct ControlAction {
  double re = 400.0;

  friend bool operator==(const ControlAction&, const ControlAction&) = default;
};

struct MfeParams {
  double re_base = 400.0;
  double re_ctrl = 2000.0;
  double lx = 4.0 * std::numbers::pi;
  double lz = 2.0 * std::numbers::pi;
  double integrator_dt = 0.05;
  double sample_dt = 0.25;
  double blowup_bound = 1e3;

  [[nodiscard]] double alpha() const { return 2.0 * std::numbers::pi / lx; }
  [[nodiscard]] double beta() const { return std::numbers::pi / 2.0; }
  [[nodiscard]] double gamma() const { return 2.0 * std::numbers::pi / lz; }

  [[nodiscard]] ControlAction base_action() const { return {re_base}; }
  [[nodiscard]] ControlAction ctrl_action() const { return {re_ctrl}; }

  // Integrator steps per sample; sample_dt must be an integer multiple of
  // integrator_dt.
  [[nodiscard]] long steps_per_sample() const;

  // Number of whole samples covering a time span (rounded to the nearest sample).
  [[nodiscard]] long sample_count(double t_span) const;

  // Throws ConfigError when an invariant is violated.
  void validate() const;
};

// One quadratic interaction: d q[out]/dt += coeff * q[i] * q[j].
struct QuadraticTerm {
  int out = 0;
  int i = 0;
  int j = 0;
  double coeff = 0.0;
};

// Galerkin coefficients of the nine-mode model for one box geometry:
//   dq/dt = (forcing * e_1 - damping .* q) / Re + quadratic(q)
struct MfeCoefficients {
  std::array<double, kModes> damping{};
  double forcing = 0.0;
  std::vector<QuadraticTerm> quadratic;

  [[nodiscard]] static MfeCoefficients from_geometry(double alpha, double beta,
                                                     double gamma);
};

class MfeSystem {
 public:
  explicit MfeSystem(const MfeParams& params);

  [[nodiscard]] const MfeParams& params() const { return params_; }
  [[nodiscard]] const MfeCoefficients& coefficients() const { return coeffs_; }

  [[nodiscard]] StateVector rhs(const StateVector& q, double re) const;
  // Re-independent part of the right-hand side.
  [[nodiscard]] StateVector quadratic(const StateVector& q) const;
  // The 1/Re part: forcing and linear damping.
  [[nodiscard]] StateVector viscous(const StateVector& q, double re) const;

  // One classical RK4 step of size h at fixed Reynolds number.
  void rk4_step(StateVector& q, double re, double h) const;

 private:
  MfeParams params_;
  MfeCoefficients coeffs_;
};

// Time derivative of the modal amplitudes. Throws InvalidStateError on
// non-finite input or a non-positive Reynolds number.
[[nodiscard]] StateVector mfe_rhs(const StateVector& q, ControlAction a,
                                  const MfeParams& p);

[[nodiscard]] double kinetic_energy(const StateVector& q);

// Piecewise-constant actuation. Segment i applies from start_i until the next
// segment's start; the first segment extends backwards to -inf.
class Schedule {
 public:
  struct Segment {
    double start = 0.0;
    ControlAction action;
  };

  explicit Schedule(ControlAction constant);
  explicit Schedule(std::vector<Segment> segments);

  [[nodiscard]] ControlAction at(double t) const;
  [[nodiscard]] const std::vector<Segment>& segments() const { return segments_; }

 private:
  std::vector<Segment> segments_;
};

struct Trajectory {
  std::vector<double> times;
  std::vector<StateVector> states;
  std::vector<ControlAction> actions;
  std::vector<double> k;

  [[nodiscard]] std::size_t size() const { return times.size(); }
  [[nodiscard]] bool empty() const { return times.empty(); }

  void push_back(double t, const StateVector& q, ControlAction a);
  // Appends other, skipping its first sample when it duplicates our last time.
  void append(const Trajectory& other);
};

// Integrates n_samples sample intervals starting from q0 at sample index
// first_sample (time first_sample * sample_dt). Times are always index * sample_dt,
// so integrating in consecutive pieces reproduces one long run bit for bit. The
// returned trajectory holds n_samples + 1 samples including the initial one. The
// action for each integrator step is the schedule value at the step's left
// endpoint. Throws BlowUpError when any |q_i| exceeds p.blowup_bound.
[[nodiscard]] Trajectory integrate_samples(const StateVector& q0, const Schedule& schedule,
                                           long first_sample, long n_samples,
                                           const MfeParams& p);

[[nodiscard]] Trajectory integrate(const StateVector& q0, const Schedule& schedule,
                                   double t_span, const MfeParams& p);

struct DatasetOptions {
  double washout_lt = 10.0;
  // Amplitude of the uniform random perturbation applied to the laminar state.
  double perturbation = 0.3;
  // A series counts as relaminarized when k stays within this distance of the
  // laminar value for longer than relaminar_lt.
  double relaminar_tol = 1e-6;
  double relaminar_lt = 1.0;
  int max_attempts_per_series = 50;
  // Probability of actuating (re_ctrl) during each control interval of a recorded
  // series. Zero records purely uncontrolled data.
  double actuation_probability = 0.0;
  double control_interval = 10.0;
};

// True when k stays within tol of the laminar energy for longer than span_time.
[[nodiscard]] bool relaminarizes(const Trajectory& traj, double tol, double span_time);

// Draws an initial condition on the attractor: perturb the laminar state, integrate
// through the washout, reject relaminarized transients. Deterministic under seed.
[[nodiscard]] StateVector attractor_state(std::uint64_t seed, const MfeParams& p,
                                          const DatasetOptions& opts = {});

[[nodiscard]] std::vector<Trajectory> generate_dataset(int n_series, double length_lt,
                                                       std::uint64_t seed,
                                                       const MfeParams& p,
                                                       const DatasetOptions& opts = {});

}  // namespace caesn::dynsys
