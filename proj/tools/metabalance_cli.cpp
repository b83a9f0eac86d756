// metabalance: dataset generation, training, evaluation, comparison and
// weight-net ablation from a single JSON config.
//
// Exit codes: 0 success, 2 configuration/input error, 3 numeric failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "metabalance/errors.hpp"
#include "metabalance/experiment.hpp"

namespace fs = std::filesystem;
using namespace metabalance;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

/// Duplicates everything into the log file, and onto stdout unless quiet.
class TeeBuf : public std::streambuf {
public:
  TeeBuf(std::streambuf *file, std::streambuf *console) : file_(file), console_(console) {}

protected:
  int overflow(int ch) override {
    if (ch == traits_type::eof())
      return traits_type::not_eof(ch);
    if (file_->sputc(static_cast<char>(ch)) == traits_type::eof())
      return traits_type::eof();
    if (console_)
      console_->sputc(static_cast<char>(ch));
    return ch;
  }
  int sync() override {
    file_->pubsync();
    if (console_)
      console_->pubsync();
    return 0;
  }

private:
  std::streambuf *file_;
  std::streambuf *console_;
};

struct Options {
  std::string config;
  std::string out;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> strategies;
  bool quiet = false;
  std::vector<std::string> inputs;
};

ExperimentConfig load_experiment(const Options &opt) {
  if (opt.config.empty())
    throw ConfigError("--config is required");
  ExperimentConfig cfg = parse_experiment_config(read_json_file(opt.config));
  if (!opt.out.empty())
    cfg.output_dir = opt.out;
  if (!opt.seeds.empty())
    cfg.seeds = opt.seeds;
  if (!opt.strategies.empty()) {
    cfg.strategies.clear();
    try {
      for (const auto &s : opt.strategies)
        cfg.strategies.push_back(parse_strategy(s));
    } catch (const ArgumentError &e) {
      throw ConfigError(e.what());
    }
  }
  apply_seed_env(cfg);
  return cfg;
}

fs::path output_root(const Options &opt) {
  if (!opt.out.empty())
    return opt.out;
  if (!opt.config.empty()) {
    const auto j = read_json_file(opt.config);
    if (j.contains("output_dir") && j["output_dir"].is_string())
      return j["output_dir"].get<std::string>();
  }
  return "out";
}

int run_gen(const Options &opt) {
  if (opt.config.empty())
    throw ConfigError("--config is required");
  const fs::path dir = output_root(opt) / "dataset";
  const auto result = cmd_gen(read_json_file(opt.config), dir);
  if (!opt.quiet)
    std::printf("dataset written to %s\n", result.dir.string().c_str());
  std::printf("imbalance_ratio %.6f\n", result.imbalance_ratio);
  return 0;
}

int run_train(const Options &opt, std::ostream &log) {
  const auto cfg = load_experiment(opt);
  const auto runs = cmd_train(cfg, log);
  bool diverged = false;
  for (const auto &run : runs) {
    diverged = diverged || run.diverged;
    if (!opt.quiet && !run.metrics.reports.empty()) {
      const auto &r = run.metrics.reports.front();
      std::printf("%s seed %llu: %s mR@%zu = %.4f%s\n", run.label.c_str(),
                  static_cast<unsigned long long>(run.seed), to_string(r.strategy).c_str(),
                  r.k_values.front(), 100.0 * r.mean_recall.front(),
                  run.diverged ? " (diverged)" : "");
    }
  }
  if (diverged) {
    std::fprintf(stderr, "error: training diverged; partial results kept under %s\n",
                 (cfg.output_dir / "runs").string().c_str());
    return kExitNumeric;
  }
  return 0;
}

int run_eval(const Options &opt) {
  if (opt.inputs.size() != 1)
    throw ConfigError("eval takes exactly one prediction dump");
  EvalConfig eval;
  if (!opt.config.empty())
    eval = load_experiment(opt).eval;
  const auto reports = cmd_eval(opt.inputs.front(), output_root(opt) / "reports", eval);
  if (!opt.quiet)
    for (const auto &r : reports)
      for (std::size_t ki = 0; ki < r.k_values.size(); ++ki)
        std::printf("%s mR@%zu = %.4f\n", to_string(r.strategy).c_str(), r.k_values[ki],
                    100.0 * r.mean_recall[ki]);
  return 0;
}

void print_comparison(const Comparison &cmp, bool quiet) {
  if (!quiet)
    std::fputs(cmp.to_csv().c_str(), stdout);
}

int run_compare(const Options &opt) {
  std::vector<fs::path> dirs(opt.inputs.begin(), opt.inputs.end());
  print_comparison(cmd_compare(dirs, output_root(opt) / "reports"), opt.quiet);
  return 0;
}

int run_ablate(const Options &opt, std::ostream &log) {
  const auto cfg = load_experiment(opt);
  print_comparison(cmd_ablate(cfg, log), opt.quiet);
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Meta-learned class reweighting for long-tailed multi-label data"};
  app.require_subcommand(1);
  Options opt;

  auto add_common = [&](CLI::App *cmd) {
    cmd->add_option("--config", opt.config, "JSON config file");
    cmd->add_option("--out", opt.out, "output directory (overrides output_dir)");
    cmd->add_flag("--quiet", opt.quiet, "only print errors and headline numbers");
  };
  auto add_run_flags = [&](CLI::App *cmd) {
    cmd->add_option("--seeds", opt.seeds, "comma-separated seeds")->delimiter(',');
    cmd->add_option("--strategy", opt.strategies,
                    "comma-separated: ml_mwn, mwnet_scalar, static_invfreq, unweighted")
        ->delimiter(',');
  };

  auto *gen = app.add_subcommand("gen", "generate a synthetic long-tailed dataset");
  add_common(gen);
  auto *train = app.add_subcommand("train", "train one run per strategy and seed");
  add_common(train);
  add_run_flags(train);
  auto *eval = app.add_subcommand("eval", "score a predictions.jsonl dump");
  add_common(eval);
  eval->add_option("predictions", opt.inputs, "prediction dump")->required();
  auto *compare = app.add_subcommand("compare", "tabulate mR@K across run directories");
  add_common(compare);
  compare->add_option("runs", opt.inputs, "run or strategy directories")->required();
  auto *ablate = app.add_subcommand("ablate", "weight-net architecture ablation");
  add_common(ablate);
  add_run_flags(ablate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*gen)
      return run_gen(opt);
    if (*eval)
      return run_eval(opt);
    if (*compare)
      return run_compare(opt);

    const fs::path root = output_root(opt);
    fs::create_directories(root);
    std::ofstream log_file(root / "log.txt", std::ios::app);
    if (!log_file)
      throw IoError("cannot open " + (root / "log.txt").string());
    TeeBuf tee(log_file.rdbuf(), opt.quiet ? nullptr : std::cerr.rdbuf());
    std::ostream log(&tee);
    return *train ? run_train(opt, log) : run_ablate(opt, log);
  } catch (const DivergenceError &e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitNumeric;
  } catch (const EvaluationError &e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitNumeric;
  } catch (const std::exception &e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  }
}
