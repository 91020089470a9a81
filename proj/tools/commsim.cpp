#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "commsim/error.hpp"
#include "commsim/harness.hpp"
#include "commsim/parallel.hpp"

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw commsim::ConfigError("/", "cannot open '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulator for compressed distributed optimization methods"};
  app.require_subcommand(1);

  std::string config_path;
  std::string output_override;
  auto* run = app.add_subcommand("run", "Run one experiment with its repeats");
  run->add_option("config", config_path, "JSON experiment config")->required();
  run->add_option("-o,--output", output_override, "Override the output directory");
  std::string save_problem;
  run->add_option("--save-problem", save_problem,
                  "Write the quadratic ensemble as JSON (reload with family \"file\")");

  std::vector<std::string> axes;
  auto* sweep = app.add_subcommand("sweep", "Grid over n, gamma multipliers and methods");
  sweep->add_option("config", config_path, "JSON experiment config")->required();
  sweep->add_option("--axis", axes, "n, gamma or algorithm (repeatable)")->required();
  sweep->add_option("-o,--output", output_override, "Override the output directory");

  std::string suite = "all";
  auto* verify = app.add_subcommand("verify", "Run a property suite");
  verify->add_option("suite", suite, "Suite name")
      ->check(CLI::IsMember(commsim::verify_suites()));

  std::string estimate_path;
  auto* estimate = app.add_subcommand("estimate", "Monte-Carlo omega/theta of a compressor");
  estimate->add_option("spec", estimate_path, "JSON file with the compressor spec")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    const int threads = commsim::configure_threads_from_env();
    commsim::CommandReport report;
    if (run->parsed() || sweep->parsed()) {
      commsim::ExperimentConfig config = commsim::load_config(config_path);
      if (!output_override.empty()) config.output = output_override;
      std::clog << "threads: " << threads << "\n";
      if (!save_problem.empty()) {
        const auto problem = commsim::build_problem(config.problem);
        const auto* quad = dynamic_cast<const commsim::QuadraticEnsemble*>(problem.get());
        if (!quad) throw commsim::ConfigError("/problem/family", "only quadratics can be saved");
        commsim::save_quadratic(*quad, save_problem);
        std::clog << "wrote " << save_problem << "\n";
      }
      if (run->parsed()) {
        report = commsim::cmd_run(config, std::cout);
      } else {
        std::vector<commsim::SweepAxis> parsed;
        for (const auto& a : axes) parsed.push_back(commsim::parse_axis(a));
        report = commsim::cmd_sweep(config, parsed, std::cout);
      }
      for (const auto& f : report.files) std::clog << "wrote " << f << "\n";
    } else if (verify->parsed()) {
      report = commsim::cmd_verify(suite, std::cout);
    } else if (estimate->parsed()) {
      report = commsim::cmd_estimate(read_file(estimate_path), std::cout);
    }
    return report.ok ? 0 : kExitFailure;
  } catch (const commsim::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}
