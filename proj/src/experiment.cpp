#include "metabalance/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "metabalance/errors.hpp"
#include "metabalance/io.hpp"

namespace metabalance {

namespace {

using nlohmann::json;

void require_known_keys(const json &j, const std::set<std::string> &known, const char *where) {
  if (!j.is_object())
    throw ConfigError(std::string(where) + " must be a JSON object");
  for (const auto &[key, value] : j.items())
    if (!known.count(key))
      throw ConfigError(std::string("unknown key '") + key + "' in " + where);
}

template <typename T> T get_or(const json &j, const char *key, T fallback) {
  if (!j.contains(key))
    return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception &e) {
    throw ConfigError(std::string("field '") + key + "': " + e.what());
  }
}

std::vector<std::size_t> positive_list(const json &j, const char *key,
                                       std::vector<std::size_t> fallback) {
  auto v = get_or(j, key, fallback);
  for (std::size_t x : v)
    if (x == 0)
      throw ConfigError(std::string("field '") + key + "' must hold positive integers");
  return v;
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", std::gmtime(&now));
  return buf;
}

} // namespace

std::vector<std::vector<std::size_t>> default_ablation_architectures() {
  return {{50}, {100}, {200}, {100, 100}, {10, 10}, {10, 10, 10}};
}

std::string architecture_name(const std::vector<std::size_t> &hidden, bool scalar_mode) {
  const std::string io = scalar_mode ? "1" : "C";
  std::string name = io;
  for (std::size_t h : hidden)
    name += "-" + std::to_string(h);
  return name + "-" + io;
}

json read_json_file(const std::filesystem::path &path) {
  std::string text;
  try {
    text = io::read_text(path);
  } catch (const IoError &e) {
    throw ConfigError(e.what());
  }
  try {
    return json::parse(text);
  } catch (const json::exception &e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

GenConfig parse_gen_config(const json &j) {
  require_known_keys(j,
                     {"num_classes", "c", "C", "feature_dim", "d", "num_instances", "n", "N",
                      "zipf_s", "target_ir", "cooccur_p", "noise_sigma", "scene_size", "seed",
                      "eval_instances"},
                     "dataset config");
  GenConfig g;
  auto pick = [&](std::initializer_list<const char *> keys, std::size_t fallback) {
    for (const char *k : keys)
      if (j.contains(k))
        return get_or<std::size_t>(j, k, fallback);
    return fallback;
  };
  g.num_classes = pick({"num_classes", "c", "C"}, g.num_classes);
  g.feature_dim = pick({"feature_dim", "d"}, g.feature_dim);
  g.num_instances = pick({"num_instances", "n", "N"}, g.num_instances);
  g.zipf_s = get_or(j, "zipf_s", g.zipf_s);
  if (j.contains("target_ir") && !j["target_ir"].is_null())
    g.target_ir = get_or(j, "target_ir", 0.0);
  g.cooccur_p = get_or(j, "cooccur_p", g.cooccur_p);
  g.noise_sigma = get_or(j, "noise_sigma", g.noise_sigma);
  g.scene_size = get_or(j, "scene_size", g.scene_size);
  g.seed = get_or<std::uint64_t>(j, "seed", g.seed);
  return g;
}

ExperimentConfig parse_experiment_config(const json &j) {
  require_known_keys(j,
                     {"dataset", "classifier", "weightnet", "trainer", "eval", "output_dir",
                      "seeds", "ablation"},
                     "experiment config");
  ExperimentConfig cfg;
  if (!j.contains("dataset"))
    throw ConfigError("experiment config needs a 'dataset' entry");
  if (j["dataset"].is_string()) {
    cfg.dataset = std::filesystem::path(j["dataset"].get<std::string>());
  } else {
    DatasetSpec spec;
    spec.gen = parse_gen_config(j["dataset"]);
    if (j["dataset"].contains("eval_instances"))
      spec.eval_instances = get_or<std::size_t>(j["dataset"], "eval_instances", 0);
    cfg.dataset = spec;
  }

  if (j.contains("classifier")) {
    const auto &c = j["classifier"];
    require_known_keys(c, {"hidden_sizes"}, "classifier config");
    cfg.classifier.hidden_sizes = positive_list(c, "hidden_sizes", cfg.classifier.hidden_sizes);
  }
  if (j.contains("weightnet")) {
    const auto &w = j["weightnet"];
    require_known_keys(w, {"hidden_sizes", "scalar_mode"}, "weightnet config");
    cfg.weightnet.hidden_sizes = positive_list(w, "hidden_sizes", cfg.weightnet.hidden_sizes);
    cfg.weightnet.scalar_mode = get_or(w, "scalar_mode", false);
  }
  if (j.contains("trainer")) {
    const auto &t = j["trainer"];
    require_known_keys(t,
                       {"alpha", "beta", "batch_size", "epochs", "weightnet_momentum",
                        "weightnet_weight_decay", "classifier_momentum",
                        "classifier_weight_decay", "meta_fraction", "strategy",
                        "hypergrad_check_fraction"},
                       "trainer config");
    TrainerConfig &tc = cfg.trainer;
    tc.alpha = get_or(t, "alpha", tc.alpha);
    tc.beta = get_or(t, "beta", tc.beta);
    tc.batch_size = get_or(t, "batch_size", tc.batch_size);
    tc.epochs = get_or(t, "epochs", tc.epochs);
    tc.weightnet_momentum = get_or(t, "weightnet_momentum", tc.weightnet_momentum);
    tc.weightnet_weight_decay = get_or(t, "weightnet_weight_decay", tc.weightnet_weight_decay);
    tc.classifier_momentum = get_or(t, "classifier_momentum", tc.classifier_momentum);
    tc.classifier_weight_decay = get_or(t, "classifier_weight_decay", tc.classifier_weight_decay);
    tc.meta_fraction = get_or(t, "meta_fraction", tc.meta_fraction);
    tc.hypergrad_check_fraction =
        get_or(t, "hypergrad_check_fraction", tc.hypergrad_check_fraction);
    if (t.contains("strategy")) {
      std::vector<std::string> names;
      if (t["strategy"].is_string())
        names.push_back(t["strategy"].get<std::string>());
      else
        names = get_or<std::vector<std::string>>(t, "strategy", {});
      if (names.empty())
        throw ConfigError("trainer.strategy must name at least one strategy");
      cfg.strategies.clear();
      try {
        for (const auto &n : names)
          cfg.strategies.push_back(parse_strategy(n));
      } catch (const ArgumentError &e) {
        throw ConfigError(e.what());
      }
    }
    cfg.trainer.strategy = cfg.strategies.front();
    try {
      validate(cfg.trainer);
    } catch (const ArgumentError &e) {
      throw ConfigError(std::string("trainer config: ") + e.what());
    }
  }
  if (j.contains("eval")) {
    const auto &e = j["eval"];
    require_known_keys(e, {"k_values", "strategies"}, "eval config");
    cfg.eval.k_values = positive_list(e, "k_values", cfg.eval.k_values);
    if (e.contains("strategies")) {
      cfg.eval.strategies.clear();
      try {
        for (const auto &name : get_or<std::vector<std::string>>(e, "strategies", {}))
          cfg.eval.strategies.push_back(parse_constraint(name));
      } catch (const ArgumentError &err) {
        throw ConfigError(err.what());
      }
    }
  }
  if (cfg.eval.k_values.empty() || cfg.eval.strategies.empty())
    throw ConfigError("eval needs at least one K and one strategy");
  for (std::size_t i = 1; i < cfg.eval.k_values.size(); ++i)
    if (cfg.eval.k_values[i] <= cfg.eval.k_values[i - 1])
      throw ConfigError("eval.k_values must be strictly increasing");

  cfg.output_dir = get_or<std::string>(j, "output_dir", cfg.output_dir.string());
  cfg.seeds = get_or(j, "seeds", cfg.seeds);
  if (cfg.seeds.empty())
    throw ConfigError("seeds must not be empty");
  if (j.contains("ablation")) {
    const auto &a = j["ablation"];
    require_known_keys(a, {"architectures"}, "ablation config");
    cfg.ablation_architectures =
        get_or<std::vector<std::vector<std::size_t>>>(a, "architectures", {});
    for (const auto &arch : cfg.ablation_architectures)
      for (std::size_t h : arch)
        if (h == 0)
          throw ConfigError("ablation layer widths must be positive");
  }
  return cfg;
}

json to_json(const ExperimentConfig &cfg) {
  json j;
  if (const auto *spec = std::get_if<DatasetSpec>(&cfg.dataset)) {
    const GenConfig &g = spec->gen;
    j["dataset"] = {{"num_classes", g.num_classes}, {"feature_dim", g.feature_dim},
                    {"num_instances", g.num_instances}, {"zipf_s", g.zipf_s},
                    {"cooccur_p", g.cooccur_p}, {"noise_sigma", g.noise_sigma},
                    {"scene_size", g.scene_size}, {"seed", g.seed}};
    if (g.target_ir)
      j["dataset"]["target_ir"] = *g.target_ir;
    if (spec->eval_instances)
      j["dataset"]["eval_instances"] = *spec->eval_instances;
  } else {
    j["dataset"] = std::get<std::filesystem::path>(cfg.dataset).string();
  }
  j["classifier"] = {{"hidden_sizes", cfg.classifier.hidden_sizes}};
  j["weightnet"] = {{"hidden_sizes", cfg.weightnet.hidden_sizes},
                    {"scalar_mode", cfg.weightnet.scalar_mode}};
  std::vector<std::string> strategies;
  for (Strategy s : cfg.strategies)
    strategies.push_back(to_string(s));
  const TrainerConfig &t = cfg.trainer;
  j["trainer"] = {{"alpha", t.alpha},
                  {"beta", t.beta},
                  {"batch_size", t.batch_size},
                  {"epochs", t.epochs},
                  {"weightnet_momentum", t.weightnet_momentum},
                  {"weightnet_weight_decay", t.weightnet_weight_decay},
                  {"classifier_momentum", t.classifier_momentum},
                  {"classifier_weight_decay", t.classifier_weight_decay},
                  {"meta_fraction", t.meta_fraction},
                  {"hypergrad_check_fraction", t.hypergrad_check_fraction},
                  {"strategy", strategies}};
  std::vector<std::string> constraints;
  for (Constraint c : cfg.eval.strategies)
    constraints.push_back(to_string(c));
  j["eval"] = {{"k_values", cfg.eval.k_values}, {"strategies", constraints}};
  j["output_dir"] = cfg.output_dir.string();
  j["seeds"] = cfg.seeds;
  if (!cfg.ablation_architectures.empty())
    j["ablation"] = {{"architectures", cfg.ablation_architectures}};
  return j;
}

void apply_seed_env(ExperimentConfig &cfg) {
  const char *env = std::getenv("METABALANCE_SEED");
  if (!env || !*env)
    return;
  char *end = nullptr;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (*end != '\0')
    throw ConfigError("METABALANCE_SEED must be an unsigned integer");
  cfg.seeds = {static_cast<std::uint64_t>(v)};
}

// ---------------------------------------------------------------------------

namespace {

struct LoadedData {
  Dataset train;
  Dataset eval;
};

void save_with_holdout(const DatasetSpec &spec, const std::filesystem::path &dir,
                       LoadedData *out) {
  Dataset ds = generate(spec.gen);
  Dataset holdout = generate_holdout(spec.gen, ds, spec.eval_instances.value_or(ds.size()));
  save_dataset(ds, dir);
  save_dataset(holdout, dir / "test");
  if (out)
    *out = {std::move(ds), std::move(holdout)};
}

LoadedData resolve_dataset(const ExperimentConfig &cfg, std::ostream &log) {
  if (const auto *path = std::get_if<std::filesystem::path>(&cfg.dataset)) {
    if (!std::filesystem::exists(*path / "test" / "manifest.json"))
      throw ConfigError("dataset " + path->string() + " has no test/ evaluation split");
    return {load_dataset(*path), load_dataset(*path / "test")};
  }
  LoadedData data;
  const auto dir = cfg.output_dir / "dataset";
  save_with_holdout(std::get<DatasetSpec>(cfg.dataset), dir, &data);
  log << timestamp() << " generated dataset in " << dir.string()
      << " (imbalance ratio " << imbalance_ratio(data.train.labels) << ")\n";
  return data;
}

RunOutcome run_one(const LoadedData &data, const ExperimentConfig &cfg, Strategy strategy,
                   const WeightNetConfig &wn_cfg, std::uint64_t seed, const std::string &label,
                   std::ostream &log) {
  ClassifierConfig clf = cfg.classifier;
  clf.input_dim = data.train.feature_dim();
  clf.num_classes = data.train.num_classes();
  clf.seed = derive_seed(seed, 10);
  WeightNetConfig wn = wn_cfg;
  wn.seed = derive_seed(seed, 11);
  TrainerConfig tc = cfg.trainer;
  tc.strategy = strategy;
  tc.seed = seed;

  RunOutcome out;
  out.strategy = strategy;
  out.label = label;
  out.seed = seed;
  out.dir = cfg.output_dir / "runs" / label / std::to_string(seed);
  std::filesystem::create_directories(out.dir);
  log << timestamp() << " training " << label << " seed " << seed << "\n";

  TrainResult result = train(data.train, data.eval, clf, wn, tc, cfg.eval);
  out.metrics = result.metrics;
  out.diverged = result.diverged;
  out.error = result.error;

  save_checkpoint(result.state, out.dir);
  json metrics = result.metrics.to_json();
  metrics["strategy"] = to_string(strategy);
  metrics["label"] = label;
  metrics["seed"] = seed;
  metrics["diverged"] = result.diverged;
  metrics["steps"] = result.state.step;
  io::write_text(out.dir / "metrics.json", metrics.dump(2) + "\n");
  io::write_text(out.dir / "per_class.csv", per_class_table(result.metrics.reports));
  io::write_text(out.dir / "predictions.jsonl",
                 write_prediction_dump(predict_episodes(Classifier(clf), result.state.theta,
                                                        data.eval)));
  if (!result.metrics.reports.empty())
    write_bar_chart_svg(result.metrics.reports.front(), cfg.eval.k_values.front(),
                        out.dir / "chart.svg");
  ExperimentConfig resolved = cfg;
  resolved.strategies = {strategy};
  resolved.weightnet = wn_cfg;
  resolved.seeds = {seed};
  io::write_text(out.dir / "config.json", to_json(resolved).dump(2) + "\n");

  if (result.diverged)
    log << timestamp() << " " << label << " seed " << seed << " diverged: " << result.error
        << "\n";
  for (const auto &r : result.metrics.reports)
    log << timestamp() << "   " << to_string(r.strategy) << " mR@" << r.k_values.front()
        << " = " << r.mean_recall.front() << "\n";
  return out;
}

} // namespace

GenOutcome cmd_gen(const json &config, const std::filesystem::path &out_dir) {
  DatasetSpec spec;
  if (config.contains("dataset")) {
    const auto cfg = parse_experiment_config(config);
    if (!std::holds_alternative<DatasetSpec>(cfg.dataset))
      throw ConfigError("config's dataset is a path, nothing to generate");
    spec = std::get<DatasetSpec>(cfg.dataset);
  } else {
    spec.gen = parse_gen_config(config);
    if (config.contains("eval_instances"))
      spec.eval_instances = config["eval_instances"].get<std::size_t>();
  }
  LoadedData data;
  save_with_holdout(spec, out_dir, &data);
  return {out_dir, imbalance_ratio(data.train.labels)};
}

std::vector<RunOutcome> cmd_train(const ExperimentConfig &cfg, std::ostream &log) {
  const LoadedData data = resolve_dataset(cfg, log);
  std::vector<RunOutcome> out;
  for (Strategy s : cfg.strategies)
    for (std::uint64_t seed : cfg.seeds)
      out.push_back(run_one(data, cfg, s, cfg.weightnet, seed, to_string(s), log));
  return out;
}

// ---------------------------------------------------------------------------

std::string Comparison::to_csv() const {
  std::ostringstream out;
  out << "method,runs";
  if (!rows.empty())
    for (const auto &[key, v] : rows.front().mean)
      out << "," << key << "," << key << "_std";
  out << "\n";
  char buf[64];
  for (const auto &row : rows) {
    out << row.label << "," << row.runs;
    for (std::size_t i = 0; i < row.mean.size(); ++i) {
      std::snprintf(buf, sizeof buf, ",%.4f,%.4f", 100.0 * row.mean[i].second,
                    100.0 * row.stddev[i].second);
      out << buf;
    }
    out << "\n";
  }
  return out.str();
}

json Comparison::to_json() const {
  json j;
  j["k_values"] = k_values;
  j["rows"] = json::array();
  for (const auto &row : rows) {
    json r;
    r["method"] = row.label;
    r["runs"] = row.runs;
    r["mean"] = json::object();
    r["std"] = json::object();
    for (const auto &[k, v] : row.mean)
      r["mean"][k] = v;
    for (const auto &[k, v] : row.stddev)
      r["std"][k] = v;
    j["rows"].push_back(r);
  }
  return j;
}

namespace {

std::vector<std::filesystem::path> metric_files(const std::filesystem::path &dir) {
  if (std::filesystem::exists(dir / "metrics.json"))
    return {dir / "metrics.json"};
  std::vector<std::filesystem::path> files;
  if (std::filesystem::is_directory(dir))
    for (const auto &entry : std::filesystem::directory_iterator(dir))
      if (std::filesystem::exists(entry.path() / "metrics.json"))
        files.push_back(entry.path() / "metrics.json");
  std::sort(files.begin(), files.end());
  if (files.empty())
    throw ConfigError("no metrics.json under " + dir.string());
  return files;
}

ComparisonRow summarize(const std::string &label, const std::vector<json> &metrics,
                        std::vector<std::size_t> &k_values) {
  ComparisonRow row;
  row.label = label;
  row.runs = metrics.size();
  std::map<std::string, std::vector<double>> samples;
  std::vector<std::string> order;
  for (const json &m : metrics) {
    const auto ks = m.at("k_values").get<std::vector<std::size_t>>();
    if (k_values.empty())
      k_values = ks;
    else if (ks != k_values)
      throw ConfigError("runs were evaluated with different K values");
    for (const auto &[constraint, report] : m.at("strategies").items())
      for (std::size_t k : ks) {
        const std::string key = constraint + "/mR@" + std::to_string(k);
        if (!samples.count(key))
          order.push_back(key);
        samples[key].push_back(report.at("mR").at(std::to_string(k)).get<double>());
      }
  }
  for (const auto &key : order) {
    const auto &v = samples[key];
    double mean = 0.0;
    for (double x : v)
      mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v)
      var += (x - mean) * (x - mean);
    const double sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
    row.mean.emplace_back(key, mean);
    row.stddev.emplace_back(key, sd);
  }
  return row;
}

void write_comparison(const Comparison &cmp, const std::filesystem::path &out_dir,
                      const std::string &stem) {
  std::filesystem::create_directories(out_dir);
  io::write_text(out_dir / (stem + ".csv"), cmp.to_csv());
  io::write_text(out_dir / (stem + ".json"), cmp.to_json().dump(2) + "\n");
}

} // namespace

Comparison cmd_compare(const std::vector<std::filesystem::path> &run_dirs,
                       const std::filesystem::path &out_dir) {
  if (run_dirs.size() < 2)
    throw ConfigError("compare needs at least two run directories");
  Comparison cmp;
  for (const auto &dir : run_dirs) {
    std::vector<json> metrics;
    std::string label;
    for (const auto &file : metric_files(dir)) {
      json m;
      try {
        m = json::parse(io::read_text(file));
      } catch (const json::exception &e) {
        throw ConfigError(file.string() + ": " + e.what());
      }
      if (label.empty())
        label = m.value("label", dir.filename().string());
      metrics.push_back(std::move(m));
    }
    try {
      cmp.rows.push_back(summarize(label, metrics, cmp.k_values));
    } catch (const json::exception &e) {
      throw ConfigError(dir.string() + ": malformed metrics: " + e.what());
    }
  }
  write_comparison(cmp, out_dir, "compare");
  return cmp;
}

Comparison cmd_ablate(const ExperimentConfig &cfg, std::ostream &log) {
  const LoadedData data = resolve_dataset(cfg, log);
  const auto archs = cfg.ablation_architectures.empty() ? default_ablation_architectures()
                                                        : cfg.ablation_architectures;
  Comparison cmp;
  for (const auto &arch : archs) {
    WeightNetConfig wn = cfg.weightnet;
    wn.hidden_sizes = arch;
    const std::string name = architecture_name(arch, wn.scalar_mode);
    std::vector<json> metrics;
    for (std::uint64_t seed : cfg.seeds) {
      const auto run = run_one(data, cfg, Strategy::MlMwn, wn, seed, "ml_mwn@" + name, log);
      metrics.push_back(json::parse(io::read_text(run.dir / "metrics.json")));
    }
    cmp.rows.push_back(summarize(name, metrics, cmp.k_values));
  }
  write_comparison(cmp, cfg.output_dir / "reports", "ablation");
  return cmp;
}

std::vector<RecallReport> cmd_eval(const std::filesystem::path &predictions,
                                   const std::filesystem::path &out_dir,
                                   const EvalConfig &eval_cfg) {
  const auto episodes = read_prediction_dump(io::read_text(predictions));
  if (episodes.empty())
    throw ConfigError("prediction dump " + predictions.string() + " is empty");
  std::vector<RecallReport> reports;
  for (Constraint c : eval_cfg.strategies)
    reports.push_back(recall_at_k(episodes, eval_cfg.k_values, c));
  std::filesystem::create_directories(out_dir);
  io::write_text(out_dir / "metrics.json", metrics_json(reports).dump(2) + "\n");
  io::write_text(out_dir / "per_class.csv", per_class_table(reports));
  write_bar_chart_svg(reports.front(), eval_cfg.k_values.front(), out_dir / "chart.svg");
  return reports;
}

} // namespace metabalance
