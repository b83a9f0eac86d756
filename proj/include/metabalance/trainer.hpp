#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "metabalance/autodiff.hpp"
#include "metabalance/datagen.hpp"
#include "metabalance/losses.hpp"
#include "metabalance/metrics.hpp"
#include "metabalance/models.hpp"

namespace metabalance {

enum class Strategy {
  MlMwn,          ///< bilevel meta weighting, one weight per (instance, class)
  MwNetScalar,    ///< bilevel meta weighting, one weight per instance from its mean loss
  StaticInvFreq,  ///< fixed per-class weights 1/freq, normalised to mean 1
  Unweighted,     ///< every weight 1
};

std::string to_string(Strategy s);
/// Throws ArgumentError for unknown names.
Strategy parse_strategy(const std::string &name);

struct TrainerConfig {
  double alpha = 1e-3;  ///< classifier step size (pseudo and real updates)
  double beta = 0.01;   ///< weight-net step size
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  double weightnet_momentum = 0.9;
  double weightnet_weight_decay = 0.01;
  double classifier_momentum = 0.0;
  double classifier_weight_decay = 0.0;
  double meta_fraction = 0.1;
  Strategy strategy = Strategy::MlMwn;
  std::uint64_t seed = 0;
  /// Fraction of meta steps whose hypergradient is spot-checked against
  /// central differences (debug aid; 0 disables).
  double hypergrad_check_fraction = 0.0;
};

/// Throws ArgumentError when a field is out of range.
void validate(const TrainerConfig &cfg);

struct Batch {
  Matrix x;  ///< n x d
  Matrix y;  ///< n x C
};

Batch make_batch(const Dataset &ds, std::span<const std::size_t> indices);

/// SGD with heavy-ball momentum and L2 weight decay:
/// v <- momentum * v + (g + decay * p);  p <- p - lr * v.
class SgdMomentum {
public:
  SgdMomentum() = default;
  SgdMomentum(double lr, double momentum, double weight_decay)
      : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {}

  void step(ParamSet &params, const ParamSet &grad);

  double lr() const noexcept { return lr_; }
  const std::optional<ParamSet> &velocity() const noexcept { return velocity_; }

private:
  double lr_ = 0.0;
  double momentum_ = 0.0;
  double weight_decay_ = 0.0;
  std::optional<ParamSet> velocity_;
};

struct StepRecord {
  std::size_t step = 0;
  double train_loss = 0.0;
  double meta_loss = 0.0;
  /// Version of phi whose weights fed the real classifier update.
  std::uint64_t phi_version = 0;
};

struct TrainState {
  ParamSet theta;
  ParamSet phi;
  std::uint64_t phi_version = 0;
  std::size_t epoch = 0;
  std::size_t step = 0;
  std::mt19937_64 rng;
  SgdMomentum theta_optimizer;
  SgdMomentum phi_optimizer;
  std::vector<StepRecord> history;
  std::size_t hypergrad_checks = 0;
  double hypergrad_worst_error = 0.0;
};

struct MetaSplit {
  Dataset train;
  Dataset meta;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> meta_indices;
};

/// Disjoint split with round(fraction * N) meta instances, stratified so the
/// meta set holds every class at least once and the train set keeps every
/// class. Throws StratificationError naming the offending class.
MetaSplit split_meta_validation(const Dataset &ds, double fraction, std::uint64_t seed);

/// Produces per-entry weights for a batch from its (detached) loss matrix.
/// Strategy-specific; the weight-net parameters are tape nodes so the
/// weights stay differentiable with respect to them.
class WeightRule {
public:
  WeightRule(Strategy strategy, WeightNet net, std::vector<double> class_weights = {});

  Strategy strategy() const noexcept { return strategy_; }
  const WeightNet &net() const noexcept { return net_; }
  bool learned() const noexcept {
    return strategy_ == Strategy::MlMwn || strategy_ == Strategy::MwNetScalar;
  }

  ad::Var weights(std::span<const ad::Var> phi, ad::Var losses) const;
  Matrix weights(const ParamSet &phi, const Matrix &losses) const;

private:
  Strategy strategy_;
  WeightNet net_;
  std::vector<double> class_weights_;
};

/// theta - alpha * grad_theta mean(w * l), weights held constant in theta.
/// Plain gradient step. Throws DivergenceError on a non-finite loss.
ParamSet pseudo_update(const Classifier &clf, const WeightRule &rule, const ParamSet &theta,
                       const ParamSet &phi, const Batch &batch, double alpha);

/// Tape version of pseudo_update: returns the stepped classifier parameters
/// as nodes depending on `phi`.
std::vector<ad::Var> pseudo_update_graph(ad::Tape &tape, const Classifier &clf,
                                         const WeightRule &rule, const ParamSet &theta,
                                         std::span<const ad::Var> phi, const Batch &batch,
                                         double alpha);

/// Meta loss of the pseudo-updated classifier and its gradient in phi.
ad::ValueAndGrad hypergradient(const Classifier &clf, const WeightRule &rule,
                               const ParamSet &theta, const ParamSet &phi, const Batch &batch,
                               const Batch &meta_batch, const ClassStats &meta_stats,
                               double alpha);

/// Meta loss of the pseudo-updated classifier, evaluated without gradients.
double meta_objective(const Classifier &clf, const WeightRule &rule, const ParamSet &theta,
                      const ParamSet &phi, const Batch &batch, const Batch &meta_batch,
                      const ClassStats &meta_stats, double alpha);

struct MetaStep {
  ParamSet phi;
  ParamSet hypergradient;
  double meta_loss = 0.0;
};

/// One weight-net update on the inverse-frequency meta loss. Throws
/// MissingClassError when the meta batch lacks a class.
MetaStep meta_update_phi(const Classifier &clf, const WeightRule &rule, const ParamSet &theta,
                         const ParamSet &phi, const Batch &batch, const Batch &meta_batch,
                         double alpha, SgdMomentum &optimizer);

struct ThetaStep {
  ParamSet theta;
  double train_loss = 0.0;
};

/// The retained classifier update with weights from `phi_new`.
ThetaStep final_update_theta(const Classifier &clf, const WeightRule &rule, const ParamSet &theta,
                             const ParamSet &phi_new, const Batch &batch, SgdMomentum &optimizer);

struct EvalConfig {
  std::vector<std::size_t> k_values{10, 20, 50};
  std::vector<Constraint> strategies{Constraint::With, Constraint::Semi, Constraint::None};
};

struct MetricsReport {
  std::vector<RecallReport> reports;    ///< one per constraint strategy
  std::vector<std::size_t> head_classes;
  /// Mean R@K over head classes, [strategy][k].
  std::vector<std::vector<double>> head_recall;

  const RecallReport &report(Constraint c) const;
  double head_recall_at(Constraint c, std::size_t k) const;
  nlohmann::json to_json() const;
};

/// Scores every instance of `ds` with the classifier, grouped by scene.
std::vector<EpisodeScores> predict_episodes(const Classifier &clf, const ParamSet &theta,
                                            const Dataset &ds);

MetricsReport evaluate(const Classifier &clf, const ParamSet &theta, const Dataset &eval_set,
                       const EvalConfig &cfg, std::span<const std::size_t> head_classes);

/// Runs the per-batch loop over a fixed train/meta split.
class Trainer {
public:
  Trainer(const Dataset &dataset, ClassifierConfig clf_cfg, WeightNetConfig wn_cfg,
          TrainerConfig cfg);

  const TrainState &state() const noexcept { return state_; }
  const MetaSplit &split() const noexcept { return split_; }
  const Classifier &classifier() const noexcept { return classifier_; }
  const WeightRule &rule() const noexcept { return rule_; }
  const TrainerConfig &config() const noexcept { return cfg_; }
  /// Top 20% classes by training-set frequency.
  const std::vector<std::size_t> &head_classes() const noexcept { return head_classes_; }

  /// Meta batch of batch_size instances resampled until every class is
  /// present (10 attempts), else the whole meta set.
  Batch sample_meta_batch();

  /// One pass of the three-step update on `batch`. Throws DivergenceError
  /// without touching the state if anything becomes non-finite.
  void step(const Batch &batch);
  void run_epoch();
  void fit();

private:
  void spot_check_hypergradient(const Batch &batch, const Batch &meta_batch,
                                const ParamSet &analytic);

  TrainerConfig cfg_;
  MetaSplit split_;
  Classifier classifier_;
  WeightRule rule_;
  std::vector<std::size_t> head_classes_;
  TrainState state_;
};

struct TrainResult {
  TrainState state;
  MetricsReport metrics;
  bool diverged = false;
  std::string error;
};

/// Trains with `cfg.strategy`, then evaluates the final classifier on
/// `eval_set`. Divergence stops training and keeps the last good state.
TrainResult train(const Dataset &dataset, const Dataset &eval_set,
                  const ClassifierConfig &clf_cfg, const WeightNetConfig &wn_cfg,
                  const TrainerConfig &cfg, const EvalConfig &eval_cfg);

/// state.json, theta.{json,bin}, phi.{json,bin}, history.csv.
void save_checkpoint(const TrainState &state, const std::filesystem::path &dir);
std::string history_csv(const std::vector<StepRecord> &history);

/// Independent 64-bit seed for a named sub-stream of a run seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

} // namespace metabalance
