#include "caesn/reservoir.hpp"

#include "caesn/errors.hpp"
#include "caesn/io.hpp"
#include "caesn/random.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <iostream>

namespace caesn::reservoir {

void EsnParams::validate() const {
  if (n_reservoir < 1) throw ConfigError("n_reservoir must be >= 1");
  if (!(sigma_in >= 0.0) || !(sigma_c >= 0.0)) throw ConfigError("sigma_in, sigma_c must be >= 0");
  if (!(ridge_lambda > 0.0)) throw ConfigError("ridge_lambda must be > 0");
  if (!(density > 0.0) || density > 1.0) throw ConfigError("density must be in (0, 1]");
  if (!(esn_dt > 0.0)) throw ConfigError("esn_dt must be > 0");
  if (re_ctrl == re_base) throw ConfigError("re_ctrl must differ from re_base");
  if (!input_scaling.empty() && input_scaling.size() != static_cast<std::size_t>(dynsys::kModes)) {
    throw ConfigError("input_scaling needs one entry per mode");
  }
  if (!(divergence_bound > 0.0)) throw ConfigError("divergence_bound must be > 0");
}

EsnModel::EsnModel(EsnParams params, Eigen::MatrixXd w_in, Eigen::SparseMatrix<double> w,
                   Eigen::MatrixXd w_c, std::optional<Eigen::MatrixXd> w_out)
    : params_(std::move(params)),
      w_in_(std::move(w_in)),
      w_(std::move(w)),
      w_c_(std::move(w_c)),
      w_out_(std::move(w_out)) {
  params_.validate();
  const int n = params_.n_reservoir;
  if (w_in_.rows() != n || w_in_.cols() != params_.input_dim()) throw ConfigError("w_in shape");
  if (w_.rows() != n || w_.cols() != n) throw ConfigError("w shape");
  if (w_c_.rows() != n || w_c_.cols() != 1) throw ConfigError("w_c shape");
  if (w_out_ && (w_out_->rows() != n || w_out_->cols() != dynsys::kModes)) {
    throw ConfigError("w_out shape");
  }
  refresh_cache();
}

void EsnModel::refresh_cache() {
  in_gain_ = params_.sigma_in * w_in_;
  if (!params_.input_scaling.empty()) {
    for (int m = 0; m < dynsys::kModes; ++m) in_gain_.col(m) *= params_.input_scaling[m];
  }
  ctrl_gain_ = params_.sigma_c * w_c_.col(0);
  if (w_out_) {
    readout_t_ = w_out_->transpose();
  } else {
    readout_t_.resize(dynsys::kModes, 0);
  }
}

EsnModel EsnModel::with_readout(Eigen::MatrixXd w_out, std::vector<double> input_scaling) const {
  EsnParams p = params_;
  p.input_scaling = std::move(input_scaling);
  return EsnModel(std::move(p), w_in_, w_, w_c_, std::move(w_out));
}

EsnModel EsnModel::with_gains(double sigma_in, double sigma_c, double ridge_lambda) const {
  EsnParams p = params_;
  p.sigma_in = sigma_in;
  p.sigma_c = sigma_c;
  p.ridge_lambda = ridge_lambda;
  return EsnModel(std::move(p), w_in_, w_, w_c_, std::nullopt);
}

Eigen::VectorXd EsnModel::input_vector(const StateVector& q) const {
  Eigen::VectorXd x(params_.input_dim());
  for (int m = 0; m < dynsys::kModes; ++m) {
    x[m] = params_.input_scaling.empty() ? q[m] : q[m] * params_.input_scaling[m];
  }
  if (params_.bias) x[dynsys::kModes] = 1.0;
  return x;
}

Eigen::VectorXd EsnModel::preactivation(const StateVector& q, ControlAction a,
                                        const Eigen::VectorXd* r_prev) const {
  // same arithmetic as Stepper::advance, so step() and rollout() agree bit for bit
  Eigen::VectorXd x(params_.input_dim());
  x.head<dynsys::kModes>() = q;
  if (params_.bias) x[dynsys::kModes] = 1.0;
  Eigen::VectorXd z(params_.n_reservoir);
  z.noalias() = in_gain_ * x;
  z += params_.encode(a) * ctrl_gain_;
  if (params_.rho != 0.0 && r_prev != nullptr) z += params_.rho * (w_ * *r_prev);
  return z;
}

Eigen::VectorXd EsnModel::activation(const StateVector& q, ControlAction a,
                                     const Eigen::VectorXd* r_prev) const {
  return preactivation(q, a, r_prev).array().tanh().matrix();
}

StateVector EsnModel::readout(const Eigen::VectorXd& r) const {
  if (!w_out_) throw NotTrainedError("ESN readout used before training");
  return readout_t_ * r;
}

EsnModel build(const EsnParams& params) {
  params.validate();
  const int n = params.n_reservoir;
  Rng rng(params.seed);

  Eigen::MatrixXd w_in(n, params.input_dim());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < w_in.cols(); ++j) w_in(i, j) = rng.uniform(-1.0, 1.0);
  }
  Eigen::MatrixXd w_c(n, 1);
  for (int i = 0; i < n; ++i) w_c(i, 0) = rng.uniform(-1.0, 1.0);

  std::vector<Eigen::Triplet<double>> entries;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double keep = rng.uniform();
      const double value = rng.uniform(-1.0, 1.0);
      if (keep < params.density) entries.emplace_back(i, j, value);
    }
  }
  Eigen::SparseMatrix<double> w(n, n);
  w.setFromTriplets(entries.begin(), entries.end());
  if (params.rho != 0.0 && w.nonZeros() > 0) {
    const Eigen::MatrixXd dense(w);
    Eigen::EigenSolver<Eigen::MatrixXd> es(dense, false);
    const double radius = es.eigenvalues().cwiseAbs().maxCoeff();
    if (radius > 0.0) w /= radius;
  }
  return EsnModel(params, std::move(w_in), std::move(w), std::move(w_c));
}

StateVector step(const EsnModel& model, const StateVector& q, ControlAction a) {
  if (!model.trained()) throw NotTrainedError("step: model is not trained");
  if (!q.allFinite()) throw InvalidStateError("step: non-finite state");
  return model.readout(model.activation(q, a));
}

TrainingPairs make_pairs(const std::vector<Trajectory>& dataset, double esn_dt) {
  TrainingPairs pairs;
  for (const auto& t : dataset) {
    if (t.size() < 2) continue;
    const double dt = t.times[1] - t.times[0];
    const long stride = std::lround(esn_dt / dt);
    if (stride < 1 || std::abs(stride * dt - esn_dt) > 1e-9 * esn_dt) {
      throw DataError("dataset sampling interval does not divide esn_dt");
    }
    pairs.series_start.push_back(pairs.inputs.size());
    for (std::size_t i = 0; i + stride < t.size(); i += static_cast<std::size_t>(stride)) {
      pairs.inputs.push_back(t.states[i]);
      pairs.actions.push_back(t.actions[i]);
      pairs.targets.push_back(t.states[i + static_cast<std::size_t>(stride)]);
    }
  }
  return pairs;
}

std::vector<double> input_scaling_from(const TrainingPairs& pairs) {
  std::vector<double> scale(dynsys::kModes, 1.0);
  const auto n = static_cast<double>(pairs.inputs.size());
  if (pairs.inputs.size() < 2) return scale;
  StateVector mean = StateVector::Zero();
  for (const auto& q : pairs.inputs) mean += q;
  mean /= n;
  StateVector var = StateVector::Zero();
  for (const auto& q : pairs.inputs) var += (q - mean).cwiseAbs2();
  var /= n;
  for (int m = 0; m < dynsys::kModes; ++m) {
    if (var[m] > 0.0) scale[m] = 1.0 / std::sqrt(var[m]);
  }
  return scale;
}

Eigen::MatrixXd ridge_solve(const Eigen::MatrixXd& gram, const Eigen::MatrixXd& rhs,
                            double lambda) {
  Eigen::MatrixXd a = gram;
  a.diagonal().array() += lambda;
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) throw TrainingError("ridge system is not positive definite");
  Eigen::MatrixXd x = llt.solve(rhs);
  // one or two refinement sweeps bring the residual to working precision
  for (int it = 0; it < 3; ++it) {
    const Eigen::MatrixXd r = rhs - a * x;
    if (r.norm() <= 1e-13 * std::max(rhs.norm(), 1e-300)) break;
    x += llt.solve(r);
  }
  return x;
}

Eigen::MatrixXd ridge_regression(const Eigen::MatrixXd& h, const Eigen::MatrixXd& y,
                                 double lambda) {
  if (h.rows() != y.rows()) throw TrainingError("ridge_regression: row mismatch");
  return ridge_solve(h.transpose() * h, h.transpose() * y, lambda);
}

EsnModel train(const EsnModel& model, const std::vector<Trajectory>& dataset,
               TrainReport* report) {
  return train(model, make_pairs(dataset, model.params().esn_dt), report);
}

EsnModel train(const EsnModel& model, const TrainingPairs& pairs, TrainReport* report) {
  if (pairs.inputs.empty()) throw TrainingError("train: empty dataset");
  const int n = model.size();
  const auto n_pairs = pairs.inputs.size();

  auto scaling = model.params().input_scaling.empty() ? input_scaling_from(pairs)
                                                      : model.params().input_scaling;
  // Placeholder readout so the scaled model can evaluate activations.
  const EsnModel scaled = model.with_readout(Eigen::MatrixXd::Zero(n, dynsys::kModes), scaling);

  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(n, n);
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n, dynsys::kModes);
  constexpr std::size_t kChunk = 1024;
  Eigen::MatrixXd h(kChunk, n);
  Eigen::MatrixXd y(kChunk, dynsys::kModes);
  Eigen::VectorXd r_prev = Eigen::VectorXd::Zero(n);
  std::size_t next_series = 0;

  for (std::size_t start = 0; start < n_pairs; start += kChunk) {
    const std::size_t rows = std::min(kChunk, n_pairs - start);
    for (std::size_t i = 0; i < rows; ++i) {
      const std::size_t idx = start + i;
      if (next_series < pairs.series_start.size() && pairs.series_start[next_series] == idx) {
        r_prev.setZero();
        ++next_series;
      }
      const Eigen::VectorXd r = scaled.activation(pairs.inputs[idx], pairs.actions[idx], &r_prev);
      if (!r.allFinite()) throw DataError("train: non-finite reservoir activation");
      h.row(static_cast<Eigen::Index>(i)) = r.transpose();
      y.row(static_cast<Eigen::Index>(i)) = pairs.targets[idx].transpose();
      r_prev = r;
    }
    const auto hr = h.topRows(static_cast<Eigen::Index>(rows));
    gram.selfadjointView<Eigen::Lower>().rankUpdate(hr.transpose());
    rhs.noalias() += hr.transpose() * y.topRows(static_cast<Eigen::Index>(rows));
  }
  gram.triangularView<Eigen::StrictlyUpper>() = gram.transpose();

  const double lambda = model.params().ridge_lambda;
  Eigen::MatrixXd w_out = ridge_solve(gram, rhs, lambda);

  Eigen::MatrixXd a = gram;
  a.diagonal().array() += lambda;
  const double residual = (a * w_out - rhs).norm() / std::max(rhs.norm(), 1e-300);
  if (residual > 1e-8) {
    throw TrainingError("ridge solve residual " + std::to_string(residual) + " exceeds 1e-8");
  }
  if (report != nullptr) {
    report->n_samples = n_pairs;
    report->normal_residual = residual;
    report->underdetermined = n_pairs < static_cast<std::size_t>(n);
  }
  if (n_pairs < static_cast<std::size_t>(n)) {
    std::cerr << "warning: training on " << n_pairs << " samples for " << n
              << " reservoir units\n";
  }
  return model.with_readout(std::move(w_out), std::move(scaling));
}

Trajectory Rollout::to_trajectory(const std::vector<ControlAction>& schedule, double t0,
                                  double dt) const {
  Trajectory t;
  for (std::size_t i = 0; i < states.size(); ++i) {
    const ControlAction a = i < schedule.size() ? schedule[i] : schedule.back();
    t.push_back(t0 + static_cast<double>(i) * dt, states[i], a);
  }
  return t;
}

Rollout rollout(const EsnModel& model, const StateVector& q0,
                const std::vector<ControlAction>& schedule, long n_steps) {
  if (!model.trained()) throw NotTrainedError("rollout: model is not trained");
  if (n_steps < 0 || schedule.size() < static_cast<std::size_t>(n_steps)) {
    throw ConfigError("rollout: schedule shorter than n_steps");
  }
  Rollout out;
  out.states.reserve(static_cast<std::size_t>(n_steps) + 1);
  out.k.reserve(static_cast<std::size_t>(n_steps) + 1);
  out.states.push_back(q0);
  out.k.push_back(dynsys::kinetic_energy(q0));
  Stepper stepper(model);
  StateVector q = q0;
  for (long i = 0; i < n_steps; ++i) {
    if (!stepper.advance(q, model.params().encode(schedule[static_cast<std::size_t>(i)]))) {
      out.diverged_at = i + 1;
      break;
    }
    out.states.push_back(q);
    out.k.push_back(dynsys::kinetic_energy(q));
  }
  return out;
}

Stepper::Stepper(const EsnModel& model)
    : model_(model),
      in_(model.params().input_dim()),
      r_(model.size()),
      r_prev_(Eigen::VectorXd::Zero(model.size())),
      bound_(model.params().divergence_bound) {
  if (!model.trained()) throw NotTrainedError("Stepper: model is not trained");
  if (model.params().bias) in_[dynsys::kModes] = 1.0;
}

void Stepper::reset() { r_prev_.setZero(); }

bool Stepper::advance(StateVector& q, double u) {
  in_.head<dynsys::kModes>() = q;
  r_.noalias() = model_.in_gain_ * in_;
  r_ += u * model_.ctrl_gain_;
  if (model_.params().rho != 0.0) {
    r_ += model_.params().rho * (model_.w() * r_prev_);
  }
  r_ = r_.array().tanh();
  if (model_.params().rho != 0.0) r_prev_ = r_;
  q.noalias() = model_.readout_t_ * r_;
  return q.allFinite() && q.cwiseAbs().maxCoeff() <= bound_;
}

// ---------------------------------------------------------------------------
// persistence

namespace {

constexpr int kModelVersion = 1;

io::json dense_json(const Eigen::MatrixXd& m) {
  std::vector<double> data(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      data[static_cast<std::size_t>(i * m.cols() + j)] = m(i, j);
    }
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", io::hex_array(data)}};
}

Eigen::MatrixXd dense_from(const io::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = io::read_real_array(j.at("data"));
  if (data.size() != static_cast<std::size_t>(rows * cols)) throw FormatError("matrix size");
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j2 = 0; j2 < cols; ++j2) m(i, j2) = data[static_cast<std::size_t>(i * cols + j2)];
  }
  return m;
}

io::json params_json(const EsnParams& p) {
  return {{"n_reservoir", p.n_reservoir},
          {"sigma_in", io::hex(p.sigma_in)},
          {"sigma_c", io::hex(p.sigma_c)},
          {"rho", io::hex(p.rho)},
          {"density", io::hex(p.density)},
          {"ridge_lambda", io::hex(p.ridge_lambda)},
          {"bias", p.bias},
          {"input_scaling", io::hex_array(p.input_scaling)},
          {"seed", p.seed},
          {"esn_dt", io::hex(p.esn_dt)},
          {"re_base", io::hex(p.re_base)},
          {"re_ctrl", io::hex(p.re_ctrl)},
          {"divergence_bound", io::hex(p.divergence_bound)}};
}

}  // namespace

EsnParams esn_params_from_json(const io::json& j) {
  EsnParams p;
  for (const auto& [key, v] : j.items()) {
    if (key == "n_reservoir") p.n_reservoir = v.get<int>();
    else if (key == "sigma_in") p.sigma_in = io::read_real(v);
    else if (key == "sigma_c") p.sigma_c = io::read_real(v);
    else if (key == "rho") p.rho = io::read_real(v);
    else if (key == "density") p.density = io::read_real(v);
    else if (key == "ridge_lambda") p.ridge_lambda = io::read_real(v);
    else if (key == "bias") p.bias = v.get<bool>();
    else if (key == "input_scaling") p.input_scaling = io::read_real_array(v);
    else if (key == "seed") p.seed = v.get<std::uint64_t>();
    else if (key == "esn_dt") p.esn_dt = io::read_real(v);
    else if (key == "re_base") p.re_base = io::read_real(v);
    else if (key == "re_ctrl") p.re_ctrl = io::read_real(v);
    else if (key == "divergence_bound") p.divergence_bound = io::read_real(v);
    else throw ConfigError("unknown esn parameter '" + key + "'");
  }
  return p;
}

io::json esn_params_to_json(const EsnParams& p) { return params_json(p); }

void save_model(const EsnModel& model, const std::string& path) {
  io::json j;
  j["format"] = "caesn.esn";
  j["version"] = kModelVersion;
  j["params"] = params_json(model.params());
  j["w_in"] = dense_json(model.w_in());
  io::json trip = io::json::array();
  for (int col = 0; col < model.w().outerSize(); ++col) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(model.w(), col); it; ++it) {
      trip.push_back({it.row(), it.col(), io::hex(it.value())});
    }
  }
  j["w"] = {{"rows", model.w().rows()}, {"cols", model.w().cols()}, {"triplets", trip}};
  j["w_c"] = dense_json(model.w_c());
  j["w_out"] = model.w_out() ? dense_json(*model.w_out()) : io::json(nullptr);
  io::write_text_file(path, j.dump(1) + "\n");
}

EsnModel load_model(const std::string& path) {
  const auto j = io::read_json_file(path);
  if (j.value("format", "") != "caesn.esn") throw FormatError(path + ": not an ESN model file");
  if (j.value("version", 0) != kModelVersion) throw FormatError(path + ": unsupported model version");
  EsnParams p = esn_params_from_json(j.at("params"));
  const auto& jw = j.at("w");
  Eigen::SparseMatrix<double> w(jw.at("rows").get<Eigen::Index>(), jw.at("cols").get<Eigen::Index>());
  std::vector<Eigen::Triplet<double>> entries;
  for (const auto& t : jw.at("triplets")) {
    entries.emplace_back(t.at(0).get<int>(), t.at(1).get<int>(), io::read_real(t.at(2)));
  }
  w.setFromTriplets(entries.begin(), entries.end());
  std::optional<Eigen::MatrixXd> w_out;
  if (!j.at("w_out").is_null()) w_out = dense_from(j.at("w_out"));
  return EsnModel(std::move(p), dense_from(j.at("w_in")), std::move(w), dense_from(j.at("w_c")),
                  std::move(w_out));
}

}  // namespace caesn::reservoir
