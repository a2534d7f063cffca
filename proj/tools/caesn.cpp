// Command-line front end. Exit codes: 0 success, 1 usage or config error,
// 2 runtime failure.

#include "caesn/errors.hpp"
#include "caesn/harness.hpp"

#include "CLI11.hpp"

#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  int workers = 1;
  std::string out;
  std::string dataset;
  std::string validation;
  std::string model;
  std::string tuned;
  std::vector<std::string> inputs;
};

void common_flags(CLI::App* cmd, Flags& f) {
  cmd->add_option("-c,--config", f.config, "run configuration (JSON); defaults apply when omitted")
      ->check(CLI::ExistingFile);
  cmd->add_option("-s,--seed", f.seed, "overrides the configured seed");
  cmd->add_option("-w,--workers", f.workers, "worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("-o,--out", f.out, "output directory (overrides the configured one)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Extreme-event control of the nine-mode shear flow with a control-aware ESN"};
  app.require_subcommand(1);
  Flags f;

  auto* gen = app.add_subcommand("generate", "generate training and held-out datasets");
  auto* train = app.add_subcommand("train", "train the ESN readout and report validation error");
  auto* tune = app.add_subcommand("tune", "tune controller or ESN parameters on validation reward");
  auto* eval = app.add_subcommand("evaluate", "run paired episodes for every configured strategy");
  auto* pdf = app.add_subcommand("pdf", "kinetic-energy histogram of trajectory files");
  auto* cfg_cmd = app.add_subcommand("config", "print the effective configuration");
  for (auto* c : {gen, train, tune, eval, pdf, cfg_cmd}) common_flags(c, f);
  for (auto* c : {gen, train, tune}) c->add_option("--dataset", f.dataset, "training dataset file");
  for (auto* c : {gen, train}) c->add_option("--validation", f.validation, "held-out dataset file");
  for (auto* c : {train, tune, eval}) c->add_option("--model", f.model, "model file");
  eval->add_option("--tuned", f.tuned, "tuned parameter file written by tune");
  pdf->add_option("-i,--input", f.inputs, "trajectory files (dataset format)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  using namespace caesn;
  harness::RunConfig cfg;
  harness::CommandPaths paths;
  try {
    if (!f.config.empty()) cfg = harness::load_config(f.config);
    if (f.seed) cfg.seed = *f.seed;
    if (!f.out.empty()) cfg.output_dir = f.out;
    cfg.validate();
    paths = harness::default_paths(cfg);
    if (!f.dataset.empty()) paths.dataset = f.dataset;
    if (!f.validation.empty()) paths.validation = f.validation;
    if (!f.model.empty()) paths.model = f.model;
    paths.tuned = f.tuned;
    paths.inputs = f.inputs;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (*gen) return harness::cmd_generate(cfg, paths);
    if (*train) return harness::cmd_train(cfg, paths);
    if (*tune) return harness::cmd_tune(cfg, paths, f.workers);
    if (*eval) return harness::cmd_evaluate(cfg, paths, f.workers);
    if (*pdf) return harness::cmd_pdf(cfg, paths);
    if (*cfg_cmd) {
      std::cout << harness::config_to_json(cfg).dump(2) << "\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
