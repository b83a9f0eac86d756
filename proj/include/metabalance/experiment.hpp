#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "metabalance/datagen.hpp"
#include "metabalance/models.hpp"
#include "metabalance/trainer.hpp"

namespace metabalance {

struct DatasetSpec {
  GenConfig gen;
  /// Size of the generated held-out evaluation split; defaults to N.
  std::optional<std::size_t> eval_instances;
};

/// Every knob of a training experiment, read from one JSON document.
struct ExperimentConfig {
  /// Generation parameters, or the directory of a saved dataset (whose
  /// `test/` subdirectory holds the evaluation split).
  std::variant<DatasetSpec, std::filesystem::path> dataset;
  ClassifierConfig classifier;
  WeightNetConfig weightnet;
  TrainerConfig trainer;
  std::vector<Strategy> strategies{Strategy::MlMwn};
  EvalConfig eval;
  std::filesystem::path output_dir = "out";
  std::vector<std::uint64_t> seeds{0};
  /// Weight-net hidden layouts for the architecture ablation.
  std::vector<std::vector<std::size_t>> ablation_architectures;
};

/// Default ablation layouts: C-50-C, C-100-C, C-200-C, C-100-100-C,
/// C-10-10-C, C-10-10-10-C.
std::vector<std::vector<std::size_t>> default_ablation_architectures();
std::string architecture_name(const std::vector<std::size_t> &hidden, bool scalar_mode);

/// Throw ConfigError on malformed or out-of-range fields.
GenConfig parse_gen_config(const nlohmann::json &j);
ExperimentConfig parse_experiment_config(const nlohmann::json &j);
nlohmann::json to_json(const ExperimentConfig &cfg);
nlohmann::json read_json_file(const std::filesystem::path &path);

/// Applies METABALANCE_SEED, if set, as the only seed.
void apply_seed_env(ExperimentConfig &cfg);

struct GenOutcome {
  std::filesystem::path dir;
  double imbalance_ratio = 0.0;
};

/// Generates the dataset described by `config` (a bare generation config or
/// an experiment config) into `out_dir`, with its evaluation split in
/// `out_dir/test`.
GenOutcome cmd_gen(const nlohmann::json &config, const std::filesystem::path &out_dir);

struct RunOutcome {
  Strategy strategy = Strategy::MlMwn;
  std::string label;
  std::uint64_t seed = 0;
  std::filesystem::path dir;
  MetricsReport metrics;
  bool diverged = false;
  std::string error;
};

/// Trains every (strategy, seed) into output_dir/runs/<strategy>/<seed>.
std::vector<RunOutcome> cmd_train(const ExperimentConfig &cfg, std::ostream &log);

struct ComparisonRow {
  std::string label;
  std::size_t runs = 0;
  /// Keyed "<constraint>/mR@<K>".
  std::vector<std::pair<std::string, double>> mean;
  std::vector<std::pair<std::string, double>> stddev;
};

struct Comparison {
  std::vector<std::size_t> k_values;
  std::vector<ComparisonRow> rows;

  std::string to_csv() const;
  nlohmann::json to_json() const;
};

/// Each directory is either one seed's run (holding metrics.json) or a
/// strategy directory of seed subdirectories. Throws ConfigError when the
/// runs disagree on K values.
Comparison cmd_compare(const std::vector<std::filesystem::path> &run_dirs,
                       const std::filesystem::path &out_dir);

/// Trains ml_mwn once per weight-net architecture and seed, and tabulates
/// mR@K per architecture into output_dir/reports/ablation.{csv,json}.
Comparison cmd_ablate(const ExperimentConfig &cfg, std::ostream &log);

/// Scores a prediction dump: metrics.json, per_class.csv and chart.svg in
/// `out_dir`.
std::vector<RecallReport> cmd_eval(const std::filesystem::path &predictions,
                                   const std::filesystem::path &out_dir,
                                   const EvalConfig &eval_cfg);

} // namespace metabalance
