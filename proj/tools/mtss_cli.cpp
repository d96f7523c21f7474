// Command-line front end: pretrain / eval / grad-check / simulate-schedule /
// report over the experiment-config format. Numeric precision is selected
// with MTSS_PRECISION=32|64 (default 64).

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "mtss/config.hpp"
#include "mtss/experiment.hpp"

namespace {

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) throw std::runtime_error("cannot open config: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct CliArgs {
  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  int parallel_evals = 1;
};

mtss::ExperimentConfig load_config(const CliArgs& args) {
  if (args.config_path.empty()) throw std::runtime_error("--config is required");
  auto cfg = mtss::parse_config(read_text_file(args.config_path));
  if (args.seed) cfg.seed = *args.seed;
  if (args.mode) cfg.mode = mtss::aggregation_mode_from_string(*args.mode);
  return cfg;
}

int precision_bits() {
  const char* env = std::getenv("MTSS_PRECISION");
  if (!env || std::string(env) == "64") return 64;
  if (std::string(env) == "32") return 32;
  throw std::runtime_error("MTSS_PRECISION must be 32 or 64");
}

template <typename T>
int run_typed(const std::string& cmd, const CliArgs& args) {
  if (cmd == "pretrain") {
    auto cfg = load_config(args);
    auto art = mtss::run_pretrain<T>(cfg, args.out_dir);
    std::printf("wrote %zu checkpoints, final state, and %s (total cost %g)\n",
                art.checkpoint_paths.size(), art.metrics_path.c_str(), art.total_cost);
    return 0;
  }
  if (cmd == "eval") {
    auto cfg = load_config(args);
    auto paths = mtss::run_eval<T>(cfg, args.out_dir, args.parallel_evals);
    std::printf("evaluated %zu checkpoints\n", paths.size());
    for (const auto& p : paths) std::printf("  %s\n", p.c_str());
    return 0;
  }
  if (cmd == "simulate-schedule") {
    auto cfg = load_config(args);
    std::fputs(mtss::simulate_schedule<T>(cfg).c_str(), stdout);
    return 0;
  }
  if (cmd == "report") {
    auto cfg = load_config(args);
    std::fputs(mtss::run_report(cfg, args.out_dir).c_str(), stdout);
    return 0;
  }
  if (cmd == "grad-check") {
    std::uint64_t seed = args.seed ? *args.seed : 1;
    if (!args.config_path.empty()) seed = load_config(args).seed;
    if (args.seed) seed = *args.seed;
    auto rows = mtss::run_grad_checks(seed);
    bool all = true;
    for (const auto& row : rows) {
      std::printf("%-24s %s\n", row.name.c_str(), row.report.summary().c_str());
      all = all && row.report.pass;
    }
    std::printf("%s\n", all ? "all gradients verified" : "GRADIENT CHECK FAILED");
    return all ? 0 : 1;
  }
  throw std::runtime_error("unknown subcommand: " + cmd);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-task self-supervised training sandbox"};
  app.require_subcommand(1);
  app.fallthrough();

  CliArgs args;
  app.add_option("--config", args.config_path, "experiment config file");
  app.add_option("--seed", args.seed, "override the config seed");
  app.add_option("--out", args.out_dir, "artifact directory (default: out)");
  app.add_option("--mode", args.mode, "override aggregation: async, sync, or hybrid")
      ->check(CLI::IsMember({"async", "sync", "hybrid"}));
  app.add_option("--parallel-evals", args.parallel_evals,
                 "evaluate this many checkpoints concurrently")
      ->check(CLI::PositiveNumber);

  app.add_subcommand("pretrain", "train and write cost-interval checkpoints");
  app.add_subcommand("eval", "score every checkpoint with the configured suites");
  app.add_subcommand("grad-check", "verify gradients against central differences");
  app.add_subcommand("simulate-schedule", "run the schedule and summarize aggregation");
  app.add_subcommand("report", "render curve and summary tables from the logs");

  CLI11_PARSE(app, argc, argv);
  const std::string cmd = app.get_subcommands().front()->get_name();

  try {
    if (precision_bits() == 32) return run_typed<float>(cmd, args);
    return run_typed<double>(cmd, args);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    std::fprintf(stderr, "partial outputs, if any, were left in %s\n", args.out_dir.c_str());
    return 1;
  }
}
