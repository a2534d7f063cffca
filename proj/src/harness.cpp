#include "caesn/harness.hpp"

#include "caesn/errors.hpp"
#include "caesn/io.hpp"
#include "caesn/random.hpp"

#include <omp.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

namespace caesn::harness {

namespace fs = std::filesystem;
using io::json;
using reward::fmt_real;

// ---------------------------------------------------------------------------
// config parsing

namespace {

// Reads one JSON object, remembering which keys were consumed so leftovers can be
// reported as typos.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  void real(const std::string& key, double& out) {
    if (const auto* v = find(key)) out = io::read_real(*v);
  }
  void integer(const std::string& key, int& out) {
    if (const auto* v = find(key)) out = v->get<int>();
  }
  void boolean(const std::string& key, bool& out) {
    if (const auto* v = find(key)) out = v->get<bool>();
  }
  void text(const std::string& key, std::string& out) {
    if (const auto* v = find(key)) out = v->get<std::string>();
  }
  [[nodiscard]] std::string child(const std::string& key) const { return path_ + "." + key; }

  void done() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) throw ConfigError("unknown config key '" + child(key) + "'");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_gains(const json& j, const std::string& path, control::PidGains& g) {
  Section s(j, path);
  s.real("k_p", g.k_p);
  s.real("k_d", g.k_d);
  s.real("k_i", g.k_i);
  s.real("tau_i", g.tau_i);
  s.real("k_c", g.k_c);
  s.done();
}

json gains_json(const control::PidGains& g) {
  return {{"k_p", g.k_p}, {"k_d", g.k_d}, {"k_i", g.k_i}, {"tau_i", g.tau_i}, {"k_c", g.k_c}};
}

hyperopt::Scale scale_from(const std::string& s) {
  if (s == "linear") return hyperopt::Scale::kLinear;
  if (s == "log") return hyperopt::Scale::kLog;
  throw ConfigError("unknown scale '" + s + "' (expected linear or log)");
}

}  // namespace

void RunConfig::validate() const {
  if (schema_version != kSchemaVersion) {
    throw ConfigError("unsupported schema_version " + std::to_string(schema_version));
  }
  mfe.validate();
  esn.validate();
  horizon.validate(esn.esn_dt);
  reward.validate();
  pid_gains.validate();
  p_esn_gains.validate();
  if (esn.re_base != mfe.re_base || esn.re_ctrl != mfe.re_ctrl || reward.re_base != mfe.re_base) {
    throw ConfigError("re_base/re_ctrl must agree across mfe, esn and reward");
  }
  if (dataset.n_series < 0 || dataset.n_validation < 0) throw ConfigError("series counts must be >= 0");
  if (!(dataset.length_lt > 0.0) || !(dataset.validation_length_lt > 0.0)) {
    throw ConfigError("series lengths must be positive");
  }
  if (evaluation.n_episodes < 0) throw ConfigError("evaluation.n_episodes must be >= 0");
  if (!(evaluation.episode_lt > 0.0)) throw ConfigError("evaluation.episode_lt must be positive");
  if (evaluation.strategies.empty()) throw ConfigError("evaluation.strategies is empty");
  std::set<std::string> labels;
  for (const auto& s : evaluation.strategies) {
    const auto label = control::to_string(control::controller_kind_from(s));
    if (!labels.insert(label).second) throw ConfigError("duplicate strategy '" + s + "'");
  }
  (void)control::controller_kind_from(tuning.strategy);
  tuning.space.validate();
  if (tuning.budget < 1 || tuning.n_val_episodes < 1) {
    throw ConfigError("tuning.budget and tuning.n_val_episodes must be >= 1");
  }
  if (pdf.bins < 1 || !(pdf.k_max > pdf.k_min)) throw ConfigError("pdf needs bins >= 1 and k_max > k_min");
}

RunConfig config_from_json(const json& j) {
  RunConfig cfg;
  try {
    Section root(j, "config");
    root.integer("schema_version", cfg.schema_version);
    if (const auto* v = root.find("seed")) cfg.seed = v->get<std::uint64_t>();
    root.text("output_dir", cfg.output_dir);
    if (const auto* v = root.find("mfe")) cfg.mfe = io::mfe_params_from_json(*v);
    if (const auto* v = root.find("esn")) {
      if (v->contains("seed")) throw ConfigError("esn.seed is derived from the run seed");
      cfg.esn = reservoir::esn_params_from_json(*v);
    }
    if (const auto* v = root.find("horizon")) {
      Section s(*v, "config.horizon");
      s.real("tau_hor_lt", cfg.horizon.tau_hor_lt);
      s.real("tau_opt_lt", cfg.horizon.tau_opt_lt);
      s.real("control_interval", cfg.horizon.control_interval);
      if (const auto* a = s.find("action_set")) {
        cfg.horizon.action_set.clear();
        for (double re : io::read_real_array(*a)) cfg.horizon.action_set.push_back({re});
      }
      s.done();
    }
    if (const auto* v = root.find("reward")) {
      Section s(*v, "config.reward");
      s.real("k_e", cfg.reward.k_e);
      s.real("r_event", cfg.reward.r_event);
      s.real("r_control", cfg.reward.r_control);
      s.real("re_base", cfg.reward.re_base);
      s.done();
    }
    if (const auto* v = root.find("pid_gains")) read_gains(*v, "config.pid_gains", cfg.pid_gains);
    if (const auto* v = root.find("p_esn_gains")) read_gains(*v, "config.p_esn_gains", cfg.p_esn_gains);
    if (const auto* v = root.find("dataset")) {
      Section s(*v, "config.dataset");
      auto& d = cfg.dataset;
      s.integer("n_series", d.n_series);
      s.real("length_lt", d.length_lt);
      s.integer("n_validation", d.n_validation);
      s.real("validation_length_lt", d.validation_length_lt);
      s.real("washout_lt", d.options.washout_lt);
      s.real("perturbation", d.options.perturbation);
      s.real("relaminar_tol", d.options.relaminar_tol);
      s.real("relaminar_lt", d.options.relaminar_lt);
      s.integer("max_attempts_per_series", d.options.max_attempts_per_series);
      s.real("actuation_probability", d.options.actuation_probability);
      s.real("control_interval", d.options.control_interval);
      s.done();
    }
    if (const auto* v = root.find("evaluation")) {
      Section s(*v, "config.evaluation");
      auto& e = cfg.evaluation;
      s.integer("n_episodes", e.n_episodes);
      s.real("episode_lt", e.episode_lt);
      if (const auto* st = s.find("strategies")) e.strategies = st->get<std::vector<std::string>>();
      s.real("max_failure_fraction", e.max_failure_fraction);
      s.boolean("save_trajectories", e.save_trajectories);
      s.boolean("decision_log", e.decision_log);
      s.boolean("measure_latency", e.measure_latency);
      s.done();
    }
    if (const auto* v = root.find("tuning")) {
      Section s(*v, "config.tuning");
      auto& t = cfg.tuning;
      s.text("strategy", t.strategy);
      s.integer("n_val_episodes", t.n_val_episodes);
      s.integer("budget", t.budget);
      s.real("episode_lt", t.episode_lt);
      std::string mode = t.options.mode == hyperopt::Mode::kGrid ? "grid" : "bayesian";
      s.text("mode", mode);
      if (mode == "grid") t.options.mode = hyperopt::Mode::kGrid;
      else if (mode == "bayesian") t.options.mode = hyperopt::Mode::kBayesian;
      else throw ConfigError("tuning.mode must be bayesian or grid");
      s.integer("acquisition_samples", t.options.acquisition_samples);
      if (const auto* g = s.find("grid")) {
        t.options.grid.clear();
        for (const auto& pt : *g) t.options.grid.push_back(io::read_real_array(pt));
      }
      if (const auto* sp = s.find("space")) {
        t.space.dims.clear();
        if (!sp->is_array()) throw ConfigError("tuning.space must be an array");
        for (const auto& dj : *sp) {
          Section ds(dj, "config.tuning.space[]");
          hyperopt::Dimension d;
          ds.text("name", d.name);
          ds.real("lower", d.lower);
          ds.real("upper", d.upper);
          std::string scale = "linear";
          ds.text("scale", scale);
          d.scale = scale_from(scale);
          ds.done();
          t.space.dims.push_back(d);
        }
      }
      s.done();
    }
    if (const auto* v = root.find("pdf")) {
      Section s(*v, "config.pdf");
      s.integer("bins", cfg.pdf.bins);
      s.real("k_min", cfg.pdf.k_min);
      s.real("k_max", cfg.pdf.k_max);
      s.done();
    }
    root.done();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  } catch (const FormatError& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

json config_to_json(const RunConfig& cfg) {
  const auto& m = cfg.mfe;
  const auto& e = cfg.esn;
  json esn = {{"n_reservoir", e.n_reservoir}, {"sigma_in", e.sigma_in},   {"sigma_c", e.sigma_c},
              {"rho", e.rho},                 {"density", e.density},     {"ridge_lambda", e.ridge_lambda},
              {"bias", e.bias},               {"esn_dt", e.esn_dt},       {"re_base", e.re_base},
              {"re_ctrl", e.re_ctrl},         {"divergence_bound", e.divergence_bound}};
  if (!e.input_scaling.empty()) esn["input_scaling"] = e.input_scaling;
  json actions = json::array();
  for (const auto& a : cfg.horizon.action_set) actions.push_back(a.re);
  json space = json::array();
  for (const auto& d : cfg.tuning.space.dims) {
    space.push_back({{"name", d.name},
                     {"lower", d.lower},
                     {"upper", d.upper},
                     {"scale", d.scale == hyperopt::Scale::kLog ? "log" : "linear"}});
  }
  const auto& d = cfg.dataset;
  const auto& ev = cfg.evaluation;
  const auto& t = cfg.tuning;
  json tuning = {{"strategy", t.strategy},
                 {"n_val_episodes", t.n_val_episodes},
                 {"budget", t.budget},
                 {"episode_lt", t.episode_lt},
                 {"mode", t.options.mode == hyperopt::Mode::kGrid ? "grid" : "bayesian"},
                 {"acquisition_samples", t.options.acquisition_samples},
                 {"space", space}};
  if (!t.options.grid.empty()) tuning["grid"] = t.options.grid;
  return {
      {"schema_version", cfg.schema_version},
      {"seed", cfg.seed},
      {"output_dir", cfg.output_dir},
      {"mfe",
       {{"re_base", m.re_base},
        {"re_ctrl", m.re_ctrl},
        {"lx", m.lx},
        {"lz", m.lz},
        {"integrator_dt", m.integrator_dt},
        {"sample_dt", m.sample_dt},
        {"blowup_bound", m.blowup_bound}}},
      {"esn", esn},
      {"horizon",
       {{"tau_hor_lt", cfg.horizon.tau_hor_lt},
        {"tau_opt_lt", cfg.horizon.tau_opt_lt},
        {"control_interval", cfg.horizon.control_interval},
        {"action_set", actions}}},
      {"reward",
       {{"k_e", cfg.reward.k_e},
        {"r_event", cfg.reward.r_event},
        {"r_control", cfg.reward.r_control},
        {"re_base", cfg.reward.re_base}}},
      {"pid_gains", gains_json(cfg.pid_gains)},
      {"p_esn_gains", gains_json(cfg.p_esn_gains)},
      {"dataset",
       {{"n_series", d.n_series},
        {"length_lt", d.length_lt},
        {"n_validation", d.n_validation},
        {"validation_length_lt", d.validation_length_lt},
        {"washout_lt", d.options.washout_lt},
        {"perturbation", d.options.perturbation},
        {"relaminar_tol", d.options.relaminar_tol},
        {"relaminar_lt", d.options.relaminar_lt},
        {"max_attempts_per_series", d.options.max_attempts_per_series},
        {"actuation_probability", d.options.actuation_probability},
        {"control_interval", d.options.control_interval}}},
      {"evaluation",
       {{"n_episodes", ev.n_episodes},
        {"episode_lt", ev.episode_lt},
        {"strategies", ev.strategies},
        {"max_failure_fraction", ev.max_failure_fraction},
        {"save_trajectories", ev.save_trajectories},
        {"decision_log", ev.decision_log},
        {"measure_latency", ev.measure_latency}}},
      {"tuning", tuning},
      {"pdf", {{"bins", cfg.pdf.bins}, {"k_min", cfg.pdf.k_min}, {"k_max", cfg.pdf.k_max}}},
  };
}

RunConfig load_config(const std::string& path) {
  return config_from_json(io::read_json_file(path));
}

std::string content_hash(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const RunConfig& cfg) {
  // output_dir does not influence results, so it stays out of the hash
  auto j = config_to_json(cfg);
  j.erase("output_dir");
  return content_hash(j.dump());
}

std::uint64_t stream_seed(const RunConfig& cfg, Stream s) {
  return derive_seed(cfg.seed, static_cast<std::uint64_t>(s));
}

dynsys::StateVector evaluation_ic(const RunConfig& cfg, std::size_t i) {
  return control::episode_ic(derive_seed(stream_seed(cfg, Stream::kEvaluation), i), cfg.mfe,
                             cfg.dataset.options, cfg.reward.k_e);
}

bool needs_model(control::ControllerKind kind) {
  using K = control::ControllerKind;
  return kind == K::kPEsn || kind == K::kMpc || kind == K::kLitThreshold;
}

control::ControllerSpec make_spec(const RunConfig& cfg, const std::string& label,
                                  std::shared_ptr<const reservoir::EsnModel> model) {
  using K = control::ControllerKind;
  control::ControllerSpec spec;
  spec.kind = control::controller_kind_from(label);
  if (spec.kind == K::kPidDirect) spec.gains = cfg.pid_gains;
  if (spec.kind == K::kPEsn) spec.gains = cfg.p_esn_gains;
  if (needs_model(spec.kind)) {
    spec.horizon = cfg.horizon;
    spec.model = std::move(model);
  }
  spec.validate();
  return spec;
}

// ---------------------------------------------------------------------------
// surrogate diagnostics

std::vector<double> one_step_relative_errors(const reservoir::EsnModel& model,
                                             const std::vector<dynsys::Trajectory>& series) {
  const auto pairs = reservoir::make_pairs(series, model.params().esn_dt);
  std::vector<double> err(pairs.inputs.size());
  for (std::size_t i = 0; i < err.size(); ++i) {
    const auto pred = reservoir::step(model, pairs.inputs[i], pairs.actions[i]);
    err[i] = (pred - pairs.targets[i]).norm() / pairs.targets[i].norm();
  }
  return err;
}

double EventSkill::recall() const {
  const auto pos = true_pos + false_neg;
  return pos == 0 ? 1.0 : static_cast<double>(true_pos) / static_cast<double>(pos);
}

double EventSkill::precision() const {
  const auto pred = true_pos + false_pos;
  return pred == 0 ? 1.0 : static_cast<double>(true_pos) / static_cast<double>(pred);
}

EventSkill event_skill(const reservoir::EsnModel& model,
                       const std::vector<dynsys::Trajectory>& series,
                       const control::HorizonConfig& horizon, const reward::RewardConfig& rcfg) {
  const double esn_dt = model.params().esn_dt;
  EventSkill skill;
  for (const auto& s : series) {
    if (s.size() < 2) continue;
    const double dt = s.times[1] - s.times[0];
    const long stride = std::lround(esn_dt / dt);
    if (stride < 1 || std::abs(static_cast<double>(stride) * dt - esn_dt) > 1e-9 * esn_dt) {
      throw DataError("event_skill: series spacing does not divide esn_dt");
    }
    const long hor = horizon.horizon_steps(esn_dt) * stride;
    const long every = horizon.slot_steps(esn_dt) * stride;
    const long n = static_cast<long>(s.size());
    for (long i = 0; i + hor < n; i += every) {
      double truth = 0.0;
      for (long j = i; j <= i + hor; ++j) truth = std::max(truth, s.k[static_cast<std::size_t>(j)]);
      const bool actual = truth > rcfg.k_e;
      const bool predicted =
          control::predicted_peak(model, s.states[static_cast<std::size_t>(i)], horizon) > rcfg.k_e;
      ++skill.n_points;
      if (actual && predicted) ++skill.true_pos;
      if (!actual && predicted) ++skill.false_pos;
      if (actual && !predicted) ++skill.false_neg;
    }
  }
  return skill;
}

double median(std::vector<double> v) {
  if (v.empty()) throw DataError("median of an empty set");
  const auto mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<long>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<long>(mid));
  return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------
// batch evaluation

namespace {

EpisodeOutcome run_task(const BatchTask& task, double episode_lt, const dynsys::MfeParams& p,
                        const reward::RewardConfig& rcfg, const control::EpisodeOptions& opts,
                        bool keep_trajectories) {
  EpisodeOutcome out;
  out.strategy = task.spec->label();
  out.episode = task.episode;
  try {
    out.result = control::run_episode(*task.ic, *task.spec, episode_lt, p, rcfg, task.episode, opts);
    if (!keep_trajectories) out.result.trajectory = {};
  } catch (const std::exception& e) {
    out.failed = true;
    out.error = e.what();
  }
  return out;
}

}  // namespace

std::vector<EpisodeOutcome> run_batch(const std::vector<BatchTask>& tasks, double episode_lt,
                                      const dynsys::MfeParams& p, const reward::RewardConfig& rcfg,
                                      const control::EpisodeOptions& opts, bool keep_trajectories,
                                      int workers) {
  std::vector<EpisodeOutcome> out(tasks.size());
  const long n = static_cast<long>(tasks.size());
  // each slot is written by exactly one worker, so the merge order is the task order
#pragma omp parallel for schedule(dynamic, 1) num_threads(std::max(workers, 1))
  for (long i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)] =
        run_task(tasks[static_cast<std::size_t>(i)], episode_lt, p, rcfg, opts, keep_trajectories);
  }
  return out;
}

std::vector<EpisodeOutcome> run_batch_serial(const std::vector<BatchTask>& tasks,
                                             double episode_lt, const dynsys::MfeParams& p,
                                             const reward::RewardConfig& rcfg,
                                             const control::EpisodeOptions& opts,
                                             bool keep_trajectories) {
  std::vector<EpisodeOutcome> out;
  out.reserve(tasks.size());
  for (const auto& t : tasks) out.push_back(run_task(t, episode_lt, p, rcfg, opts, keep_trajectories));
  return out;
}

double PairedDifference::t() const {
  if (se > 0.0) return mean / se;
  if (mean == 0.0) return 0.0;
  return mean > 0.0 ? std::numeric_limits<double>::infinity()
                    : -std::numeric_limits<double>::infinity();
}

PairedDifference paired_difference(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw DataError("paired_difference: length mismatch");
  PairedDifference d;
  d.n = a.size();
  if (d.n == 0) return d;
  double sum = 0.0;
  for (std::size_t i = 0; i < d.n; ++i) sum += a[i] - b[i];
  d.mean = sum / static_cast<double>(d.n);
  if (d.n > 1) {
    double ss = 0.0;
    for (std::size_t i = 0; i < d.n; ++i) {
      const double r = a[i] - b[i] - d.mean;
      ss += r * r;
    }
    d.se = std::sqrt(ss / static_cast<double>(d.n - 1) / static_cast<double>(d.n));
  }
  return d;
}

Histogram k_histogram(const std::vector<double>& k, const PdfConfig& cfg) {
  if (cfg.bins < 1 || !(cfg.k_max > cfg.k_min)) throw ConfigError("histogram needs bins >= 1 and k_max > k_min");
  Histogram h;
  const auto nb = static_cast<std::size_t>(cfg.bins);
  const double width = (cfg.k_max - cfg.k_min) / cfg.bins;
  h.edges.resize(nb + 1);
  for (std::size_t i = 0; i <= nb; ++i) h.edges[i] = cfg.k_min + width * static_cast<double>(i);
  h.edges[nb] = cfg.k_max;
  h.counts.assign(nb, 0);
  std::size_t in_range = 0;
  for (double v : k) {
    if (v < cfg.k_min) {
      ++h.below;
    } else if (v > cfg.k_max) {
      ++h.above;
    } else {
      auto idx = static_cast<std::size_t>((v - cfg.k_min) / width);
      idx = std::min(idx, nb - 1);
      ++h.counts[idx];
      ++in_range;
    }
  }
  h.density.assign(nb, 0.0);
  if (in_range > 0) {
    for (std::size_t i = 0; i < nb; ++i) {
      h.density[i] = static_cast<double>(h.counts[i]) / (static_cast<double>(in_range) * width);
    }
  }
  return h;
}

// ---------------------------------------------------------------------------
// commands

CommandPaths default_paths(const RunConfig& cfg) {
  const fs::path out(cfg.output_dir);
  CommandPaths p;
  p.dataset = (out / "dataset.json").string();
  p.validation = (out / "validation.json").string();
  p.model = (out / "model.json").string();
  return p;
}

namespace {

fs::path prepare_output(const RunConfig& cfg) {
  const fs::path out(cfg.output_dir);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw Error("cannot create output directory '" + cfg.output_dir + "': " + ec.message());
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty() || !fs::exists(path)) throw Error(what + " '" + path + "' does not exist");
}

json file_entry(const std::string& path, std::size_t n_series) {
  return {{"path", fs::path(path).filename().string()},
          {"n_series", n_series},
          {"hash", content_hash(read_file(path))}};
}

void write_json(const fs::path& path, const json& j) { io::write_text_file(path.string(), j.dump(1) + "\n"); }

std::vector<double> k_of(const std::vector<dynsys::Trajectory>& series) {
  std::vector<double> k;
  for (const auto& s : series) k.insert(k.end(), s.k.begin(), s.k.end());
  return k;
}

}  // namespace

int cmd_generate(const RunConfig& cfg, const CommandPaths& paths) {
  const auto out = prepare_output(cfg);
  const auto seed_train = stream_seed(cfg, Stream::kTraining);
  const auto seed_val = stream_seed(cfg, Stream::kValidation);
  if (cfg.dataset.n_series == 0) std::cerr << "warning: n_series = 0, writing an empty dataset\n";
  const auto train = dynsys::generate_dataset(cfg.dataset.n_series, cfg.dataset.length_lt, seed_train,
                                              cfg.mfe, cfg.dataset.options);
  io::save_dataset(train, cfg.mfe, seed_train, paths.dataset);

  // held-out series are uncontrolled so the no-control predicted peak is comparable
  auto val_opts = cfg.dataset.options;
  val_opts.actuation_probability = 0.0;
  const auto val = dynsys::generate_dataset(cfg.dataset.n_validation, cfg.dataset.validation_length_lt,
                                            seed_val, cfg.mfe, val_opts);
  io::save_dataset(val, cfg.mfe, seed_val, paths.validation);

  const json manifest = {{"format", "caesn.manifest"},
                         {"schema_version", kSchemaVersion},
                         {"command", "generate"},
                         {"config_hash", config_hash(cfg)},
                         {"seed", cfg.seed},
                         {"dataset", file_entry(paths.dataset, train.size())},
                         {"validation", file_entry(paths.validation, val.size())}};
  write_json(out / "manifest.json", manifest);
  return 0;
}

int cmd_train(const RunConfig& cfg, const CommandPaths& paths) {
  require_file(paths.dataset, "dataset");
  const auto out = prepare_output(cfg);
  const auto data = io::load_dataset(paths.dataset);
  if (data.params.sample_dt != cfg.mfe.sample_dt) {
    throw ConfigError("dataset sample_dt differs from the config");
  }
  auto params = cfg.esn;
  params.seed = stream_seed(cfg, Stream::kReservoir);
  reservoir::TrainReport report;
  const auto model = reservoir::train(reservoir::build(params), data.series, &report);
  reservoir::save_model(model, paths.model);

  std::string csv = "metric,value\n";
  csv += "n_series," + std::to_string(data.series.size()) + "\n";
  csv += "n_samples," + std::to_string(report.n_samples) + "\n";
  csv += "normal_residual," + fmt_real(report.normal_residual) + "\n";
  csv += std::string("underdetermined,") + (report.underdetermined ? "1" : "0") + "\n";
  if (!paths.validation.empty() && fs::exists(paths.validation)) {
    const auto val = io::load_dataset(paths.validation);
    if (!val.series.empty()) {
      auto err = one_step_relative_errors(model, val.series);
      const double mean =
          std::accumulate(err.begin(), err.end(), 0.0) / static_cast<double>(err.size());
      const double worst = *std::max_element(err.begin(), err.end());
      const auto skill = event_skill(model, val.series, cfg.horizon, cfg.reward);
      csv += "validation_series," + std::to_string(val.series.size()) + "\n";
      csv += "validation_steps," + std::to_string(err.size()) + "\n";
      csv += "one_step_median_rel_error," + fmt_real(median(err)) + "\n";
      csv += "one_step_mean_rel_error," + fmt_real(mean) + "\n";
      csv += "one_step_max_rel_error," + fmt_real(worst) + "\n";
      csv += "event_points," + std::to_string(skill.n_points) + "\n";
      csv += "event_recall," + fmt_real(skill.recall()) + "\n";
      csv += "event_precision," + fmt_real(skill.precision()) + "\n";
    }
  } else {
    std::cerr << "warning: no validation series at '" << paths.validation
              << "', skipping the one-step error report\n";
  }
  io::write_text_file((out / "train_report.csv").string(), csv);
  return 0;
}

int cmd_tune(const RunConfig& cfg, const CommandPaths& paths, int workers) {
  const auto out = prepare_output(cfg);
  omp_set_num_threads(std::max(workers, 1));
  const auto kind = control::controller_kind_from(cfg.tuning.strategy);
  std::shared_ptr<const reservoir::EsnModel> model;
  if (needs_model(kind)) {
    require_file(paths.model, "model");
    model = std::make_shared<const reservoir::EsnModel>(reservoir::load_model(paths.model));
  }
  bool esn_dims = false;
  for (const auto& d : cfg.tuning.space.dims) {
    esn_dims |= d.name == "sigma_in" || d.name == "sigma_c" || d.name == "ridge_lambda";
  }
  std::optional<reservoir::TrainingPairs> pairs;
  if (esn_dims) {
    require_file(paths.dataset, "dataset");
    pairs = reservoir::make_pairs(io::load_dataset(paths.dataset).series, cfg.esn.esn_dt);
  }
  hyperopt::TuneContext ctx;
  ctx.mfe = cfg.mfe;
  ctx.reward = cfg.reward;
  ctx.episode_lt = cfg.tuning.episode_lt;
  ctx.training = pairs ? &*pairs : nullptr;
  ctx.options = cfg.tuning.options;
  const auto tuning_seed = stream_seed(cfg, Stream::kTuning);
  for (int i = 0; i < cfg.tuning.n_val_episodes; ++i) {
    ctx.validation_ics.push_back(control::episode_ic(derive_seed(tuning_seed, 1000 + static_cast<std::uint64_t>(i)),
                                                     cfg.mfe, cfg.dataset.options, cfg.reward.k_e));
  }
  const auto spec = make_spec(cfg, cfg.tuning.strategy, model);
  const auto res = hyperopt::tune_controller(spec, cfg.tuning.space, cfg.tuning.n_val_episodes,
                                             cfg.tuning.budget, tuning_seed, ctx);
  io::write_text_file((out / "tune_history.csv").string(),
                      hyperopt::history_csv(cfg.tuning.space, res.search.history));
  json tuned = {{"format", "caesn.tuned"},
                {"schema_version", kSchemaVersion},
                {"config_hash", config_hash(cfg)},
                {"strategy", spec.label()},
                {"objective", res.search.best_objective},
                {"gains", res.spec.gains ? gains_json(*res.spec.gains) : json(nullptr)},
                {"model", nullptr}};
  json point = json::object();
  for (std::size_t i = 0; i < cfg.tuning.space.size(); ++i) {
    point[cfg.tuning.space.dims[i].name] = res.search.best_point[i];
  }
  tuned["point"] = point;
  if (esn_dims && res.spec.model) {
    reservoir::save_model(*res.spec.model, (out / "tuned_model.json").string());
    tuned["model"] = "tuned_model.json";
  }
  write_json(out / "tuned.json", tuned);
  return 0;
}

int cmd_evaluate(const RunConfig& cfg, const CommandPaths& paths, int workers) {
  const auto out = prepare_output(cfg);
  omp_set_num_threads(std::max(workers, 1));
  const auto& ev = cfg.evaluation;

  bool any_model = false;
  for (const auto& s : ev.strategies) any_model |= needs_model(control::controller_kind_from(s));
  std::shared_ptr<const reservoir::EsnModel> model;
  if (any_model) {
    require_file(paths.model, "model");
    model = std::make_shared<const reservoir::EsnModel>(reservoir::load_model(paths.model));
  }

  std::vector<control::ControllerSpec> specs;
  for (const auto& s : ev.strategies) specs.push_back(make_spec(cfg, s, model));
  if (!paths.tuned.empty()) {
    require_file(paths.tuned, "tuned parameter file");
    const auto tj = io::read_json_file(paths.tuned);
    const auto kind = control::controller_kind_from(tj.at("strategy").get<std::string>());
    std::shared_ptr<const reservoir::EsnModel> tuned_model;
    if (!tj.at("model").is_null()) {
      const auto mpath = fs::path(paths.tuned).parent_path() / tj.at("model").get<std::string>();
      tuned_model = std::make_shared<const reservoir::EsnModel>(reservoir::load_model(mpath.string()));
    }
    for (auto& spec : specs) {
      if (spec.kind != kind) continue;
      if (!tj.at("gains").is_null()) {
        control::PidGains g = spec.gains.value_or(control::PidGains{});
        read_gains(tj.at("gains"), "tuned.gains", g);
        spec.gains = g;
      }
      if (tuned_model) spec.model = tuned_model;
      spec.validate();
    }
  }

  const auto n_ep = static_cast<std::size_t>(ev.n_episodes);
  std::vector<dynsys::StateVector> ics(n_ep);
  std::vector<std::exception_ptr> ic_errors(n_ep);
#pragma omp parallel for schedule(dynamic, 1) num_threads(std::max(workers, 1))
  for (long i = 0; i < static_cast<long>(n_ep); ++i) {
    try {
      ics[static_cast<std::size_t>(i)] = evaluation_ic(cfg, static_cast<std::size_t>(i));
    } catch (...) {
      ic_errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (const auto& e : ic_errors) {
    if (e) std::rethrow_exception(e);
  }

  std::vector<BatchTask> tasks;
  for (const auto& spec : specs) {
    for (std::size_t i = 0; i < n_ep; ++i) tasks.push_back({&spec, i, &ics[i]});
  }
  control::EpisodeOptions opts;
  opts.measure_latency = ev.measure_latency;
  const auto outcomes =
      run_batch(tasks, ev.episode_lt, cfg.mfe, cfg.reward, opts, ev.save_trajectories, workers);

  std::string episodes = reward::metrics_csv_header() + ",status,error\n";
  std::string summary = reward::summary_csv_header() + ",n_failed\n";
  std::string decisions = "strategy,episode," + control::decisions_csv_header() + "\n";
  std::size_t n_failed = 0;
  // per strategy: avg_reward, p_event, p_control by episode (NaN when failed)
  std::vector<std::array<std::vector<double>, 3>> per(specs.size());
  for (std::size_t s = 0; s < specs.size(); ++s) {
    std::vector<reward::EpisodeMetrics> ok;
    std::size_t failed_here = 0;
    std::vector<dynsys::Trajectory> trajs;
    for (auto& v : per[s]) v.assign(n_ep, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t i = 0; i < n_ep; ++i) {
      const auto& o = outcomes[s * n_ep + i];
      if (o.failed) {
        ++failed_here;
        std::string msg = o.error;
        std::replace(msg.begin(), msg.end(), ',', ';');
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        episodes += o.strategy + "," + std::to_string(i) + ",,,,,,,failed," + msg + "\n";
        continue;
      }
      const auto& m = o.result.metrics;
      ok.push_back(m);
      per[s][0][i] = m.avg_reward;
      per[s][1][i] = m.p_event;
      per[s][2][i] = m.p_control;
      episodes += reward::metrics_csv_row(o.strategy, i, m) + ",ok,\n";
      if (ev.decision_log) {
        std::istringstream rows(control::decisions_csv_rows(o.result));
        for (std::string line; std::getline(rows, line);) {
          decisions += o.strategy + "," + std::to_string(i) + "," + line + "\n";
        }
      }
      if (ev.save_trajectories) trajs.push_back(o.result.trajectory);
    }
    n_failed += failed_here;
    summary += reward::summary_csv_row(specs[s].label(), reward::summarize(ok)) + "," +
               std::to_string(failed_here) + "\n";
    if (ev.save_trajectories) {
      io::save_dataset(trajs, cfg.mfe, stream_seed(cfg, Stream::kEvaluation),
                       (out / ("trajectories_" + specs[s].label() + ".json")).string());
    }
  }

  std::string paired = "strategy,reference,metric,n,mean_diff,se,t\n";
  static const char* metric_names[] = {"avg_reward", "p_event", "p_control"};
  for (std::size_t a = 0; a < specs.size(); ++a) {
    for (std::size_t b = 0; b < specs.size(); ++b) {
      if (a == b) continue;
      for (int m = 0; m < 3; ++m) {
        std::vector<double> xa;
        std::vector<double> xb;
        for (std::size_t i = 0; i < n_ep; ++i) {
          if (std::isnan(per[a][m][i]) || std::isnan(per[b][m][i])) continue;
          xa.push_back(per[a][m][i]);
          xb.push_back(per[b][m][i]);
        }
        const auto d = paired_difference(xa, xb);
        paired += specs[a].label() + "," + specs[b].label() + "," + metric_names[m] + "," +
                  std::to_string(d.n) + "," + fmt_real(d.mean) + "," + fmt_real(d.se) + "," +
                  fmt_real(d.t()) + "\n";
      }
    }
  }

  io::write_text_file((out / "episodes.csv").string(), episodes);
  io::write_text_file((out / "summary.csv").string(), summary);
  io::write_text_file((out / "paired.csv").string(), paired);
  if (ev.decision_log) io::write_text_file((out / "decisions.csv").string(), decisions);
  std::vector<std::string> labels;
  for (const auto& s : specs) labels.push_back(s.label());
  const json meta = {
      {"format", "caesn.evaluation"},
      {"schema_version", kSchemaVersion},
      {"config_hash", config_hash(cfg)},
      {"seed", cfg.seed},
      {"desk_scale", true},
      {"note", "desk-scale statistics; not comparable to large-ensemble results"},
      {"n_episodes", ev.n_episodes},
      {"episode_lt", ev.episode_lt},
      {"strategies", labels},
      {"n_failed", n_failed},
      {"standard_errors",
       "mean_reward: sample standard error over episodes; p_event and p_control: binomial "
       "sqrt(p(1-p)/n_steps) over pooled samples"},
      {"tuned", paths.tuned.empty() ? json(nullptr) : json(fs::path(paths.tuned).filename().string())},
  };
  write_json(out / "metadata.json", meta);

  const double total = static_cast<double>(tasks.size());
  if (total > 0 && static_cast<double>(n_failed) > ev.max_failure_fraction * total) {
    std::cerr << "error: " << n_failed << " of " << tasks.size() << " episodes failed\n";
    return 2;
  }
  return 0;
}

int cmd_pdf(const RunConfig& cfg, const CommandPaths& paths) {
  const auto out = prepare_output(cfg);
  auto inputs = paths.inputs;
  if (inputs.empty()) inputs.push_back(paths.dataset);
  std::vector<double> k;
  for (const auto& path : inputs) {
    require_file(path, "trajectory file");
    const auto part = k_of(io::load_dataset(path).series);
    k.insert(k.end(), part.begin(), part.end());
  }
  if (k.empty()) throw DataError("no samples in the trajectory files");
  const auto h = k_histogram(k, cfg.pdf);
  std::string csv = "bin_lower,bin_upper,bin_center,count,density\n";
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    csv += fmt_real(h.edges[i]) + "," + fmt_real(h.edges[i + 1]) + "," +
           fmt_real(0.5 * (h.edges[i] + h.edges[i + 1])) + "," + std::to_string(h.counts[i]) + "," +
           fmt_real(h.density[i]) + "\n";
  }
  std::size_t n_event = 0;
  for (double v : k) n_event += reward::is_event(v, cfg.reward) ? 1 : 0;
  std::string summary = "n_samples,n_in_range,n_below,n_above,event_fraction\n";
  summary += std::to_string(k.size()) + "," + std::to_string(k.size() - h.below - h.above) + "," +
             std::to_string(h.below) + "," + std::to_string(h.above) + "," +
             fmt_real(static_cast<double>(n_event) / static_cast<double>(k.size())) + "\n";
  io::write_text_file((out / "pdf.csv").string(), csv);
  io::write_text_file((out / "pdf_summary.csv").string(), summary);
  return 0;
}

}  // namespace caesn::harness
