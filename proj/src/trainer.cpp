#include "metabalance/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

#include "metabalance/errors.hpp"
#include "metabalance/io.hpp"

namespace metabalance {

std::string to_string(Strategy s) {
  switch (s) {
  case Strategy::MlMwn:
    return "ml_mwn";
  case Strategy::MwNetScalar:
    return "mwnet_scalar";
  case Strategy::StaticInvFreq:
    return "static_invfreq";
  case Strategy::Unweighted:
    return "unweighted";
  }
  return "unknown";
}

Strategy parse_strategy(const std::string &name) {
  for (Strategy s : {Strategy::MlMwn, Strategy::MwNetScalar, Strategy::StaticInvFreq,
                     Strategy::Unweighted})
    if (to_string(s) == name)
      return s;
  throw ArgumentError("unknown strategy '" + name + "'");
}

void validate(const TrainerConfig &cfg) {
  if (!(cfg.alpha > 0.0) || !std::isfinite(cfg.alpha))
    throw ArgumentError("alpha must be positive");
  if (!(cfg.beta > 0.0) || !std::isfinite(cfg.beta))
    throw ArgumentError("beta must be positive");
  if (!(cfg.meta_fraction > 0.0 && cfg.meta_fraction < 1.0))
    throw ArgumentError("meta_fraction must lie strictly between 0 and 1");
  if (cfg.batch_size == 0)
    throw ArgumentError("batch_size must be at least 1");
  if (cfg.weightnet_momentum < 0.0 || cfg.classifier_momentum < 0.0)
    throw ArgumentError("momentum must be non-negative");
  if (cfg.weightnet_weight_decay < 0.0 || cfg.classifier_weight_decay < 0.0)
    throw ArgumentError("weight decay must be non-negative");
  if (cfg.hypergrad_check_fraction < 0.0 || cfg.hypergrad_check_fraction > 1.0)
    throw ArgumentError("hypergrad_check_fraction must lie in [0, 1]");
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  // splitmix64 finaliser
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Batch make_batch(const Dataset &ds, std::span<const std::size_t> indices) {
  return {ds.features.select_rows(indices), ds.labels.select_rows(indices)};
}

void SgdMomentum::step(ParamSet &params, const ParamSet &grad) {
  ParamSet direction = grad;
  if (weight_decay_ != 0.0)
    direction.axpy(weight_decay_, params);
  if (momentum_ != 0.0) {
    if (velocity_)
      velocity_->scale(momentum_).axpy(1.0, direction);
    else
      velocity_ = direction;
    params.axpy(-lr_, *velocity_);
  } else {
    params.axpy(-lr_, direction);
  }
}

// ---------------------------------------------------------------------------

MetaSplit split_meta_validation(const Dataset &ds, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw ArgumentError("meta fraction must lie strictly between 0 and 1");
  const std::size_t n = ds.size(), classes = ds.num_classes();
  const auto meta_size = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (meta_size == 0 || meta_size >= n)
    throw ArgumentError("meta fraction leaves an empty train or meta set");

  std::vector<std::vector<std::size_t>> members(classes);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < classes; ++c)
      if (ds.labels(i, c) > 0.5)
        members[c].push_back(i);
  for (std::size_t c = 0; c < classes; ++c)
    if (members[c].size() < 2)
      throw StratificationError(c, "needs at least two instances, has " +
                                       std::to_string(members[c].size()));

  std::mt19937_64 rng(seed);
  std::vector<char> in_meta(n, 0);
  std::vector<std::size_t> train_count(classes), meta_count(classes, 0);
  for (std::size_t c = 0; c < classes; ++c)
    train_count[c] = members[c].size();
  std::size_t taken = 0;
  auto take = [&](std::size_t i) {
    in_meta[i] = 1;
    ++taken;
    for (std::size_t c = 0; c < classes; ++c)
      if (ds.labels(i, c) > 0.5) {
        --train_count[c];
        ++meta_count[c];
      }
  };
  auto keeps_train_classes = [&](std::size_t i) {
    for (std::size_t c = 0; c < classes; ++c)
      if (ds.labels(i, c) > 0.5 && train_count[c] <= 1)
        return false;
    return true;
  };

  // Rarest classes first, one random instance each.
  std::vector<std::size_t> by_rarity(classes);
  std::iota(by_rarity.begin(), by_rarity.end(), 0);
  std::stable_sort(by_rarity.begin(), by_rarity.end(), [&](std::size_t a, std::size_t b) {
    return members[a].size() < members[b].size();
  });
  for (std::size_t c : by_rarity) {
    if (meta_count[c] > 0)
      continue;
    std::vector<std::size_t> options;
    for (std::size_t i : members[c])
      if (!in_meta[i] && keeps_train_classes(i))
        options.push_back(i);
    if (options.empty())
      throw StratificationError(c, "no instance can move to the meta set without "
                                   "emptying a class in the train set");
    if (taken == meta_size)
      throw StratificationError(c, "meta set of " + std::to_string(meta_size) +
                                       " instances is too small to hold every class");
    std::uniform_int_distribution<std::size_t> pick(0, options.size() - 1);
    take(options[pick(rng)]);
  }

  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < n; ++i)
    if (!in_meta[i])
      rest.push_back(i);
  std::shuffle(rest.begin(), rest.end(), rng);
  for (std::size_t i : rest) {
    if (taken == meta_size)
      break;
    if (keeps_train_classes(i))
      take(i);
  }
  if (taken != meta_size)
    throw StratificationError(0, "could not fill the meta set without emptying a train class");

  MetaSplit split;
  for (std::size_t i = 0; i < n; ++i)
    (in_meta[i] ? split.meta_indices : split.train_indices).push_back(i);
  split.train = ds.subset(split.train_indices);
  split.meta = ds.subset(split.meta_indices);
  return split;
}

// ---------------------------------------------------------------------------

WeightRule::WeightRule(Strategy strategy, WeightNet net, std::vector<double> class_weights)
    : strategy_(strategy), net_(std::move(net)), class_weights_(std::move(class_weights)) {
  if (strategy_ == Strategy::MwNetScalar && !net_.config().scalar_mode)
    throw ArgumentError("mwnet_scalar needs a scalar-mode weight net");
  if (strategy_ == Strategy::StaticInvFreq && class_weights_.empty())
    throw ArgumentError("static_invfreq needs per-class weights");
}

ad::Var WeightRule::weights(std::span<const ad::Var> phi, ad::Var losses) const {
  ad::Tape &tape = losses.tape();
  const std::size_t classes = losses.cols();
  switch (strategy_) {
  case Strategy::MlMwn:
    return net_.forward(phi, losses);
  case Strategy::MwNetScalar: {
    const auto per_instance =
        ad::matmul(losses, tape.constant(Matrix(classes, 1, 1.0 / static_cast<double>(classes))));
    const auto w = net_.forward(phi, per_instance);
    return ad::matmul(w, tape.constant(Matrix(1, classes, 1.0)));
  }
  case Strategy::StaticInvFreq:
  case Strategy::Unweighted:
    return tape.constant(weights(ParamSet{}, losses.value()));
  }
  throw ArgumentError("unknown strategy");
}

Matrix WeightRule::weights(const ParamSet &phi, const Matrix &losses) const {
  const std::size_t n = losses.rows(), classes = losses.cols();
  switch (strategy_) {
  case Strategy::MlMwn:
    return net_.forward(phi, losses);
  case Strategy::MwNetScalar: {
    Matrix per_instance(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (double v : losses.row(i))
        acc += v;
      per_instance(i, 0) = acc / static_cast<double>(classes);
    }
    const Matrix w = net_.forward(phi, per_instance);
    Matrix out(n, classes);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < classes; ++c)
        out(i, c) = w(i, 0);
    return out;
  }
  case Strategy::StaticInvFreq: {
    if (class_weights_.size() != classes)
      throw ShapeError("static weights cover a different class count");
    Matrix out(n, classes);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < classes; ++c)
        out(i, c) = class_weights_[c];
    return out;
  }
  case Strategy::Unweighted:
    return Matrix(n, classes, 1.0);
  }
  throw ArgumentError("unknown strategy");
}

// ---------------------------------------------------------------------------

namespace {

void require_nonempty(const Batch &batch) {
  if (batch.x.rows() == 0)
    throw ArgumentError("empty batch");
  if (batch.x.rows() != batch.y.rows())
    throw ShapeError("batch features and labels disagree on row count");
}

ad::Var batch_losses(const Classifier &clf, std::span<const ad::Var> theta, ad::Tape &tape,
                     const Batch &batch) {
  const auto x = tape.constant(batch.x);
  const auto y = tape.constant(batch.y);
  return ad::bce_per_class(y, clf.forward(theta, x));
}

void require_finite(double v, const char *what) {
  if (!std::isfinite(v))
    throw DivergenceError(std::string(what) + " is not finite");
}

void require_finite(const ParamSet &p, const char *what) {
  if (!p.all_finite())
    throw DivergenceError(std::string(what) + " has non-finite entries");
}

} // namespace

std::vector<ad::Var> pseudo_update_graph(ad::Tape &tape, const Classifier &clf,
                                         const WeightRule &rule, const ParamSet &theta,
                                         std::span<const ad::Var> phi, const Batch &batch,
                                         double alpha) {
  require_nonempty(batch);
  const auto theta_vars = tape.variables(theta);
  const auto losses = batch_losses(clf, theta_vars, tape, batch);
  const auto w = rule.weights(phi, ad::detach(losses));
  const auto loss = ad::weighted_train_loss(w, losses);
  require_finite(loss.scalar(), "training loss");
  const auto grads = tape.gradients(loss, theta_vars, /*create_graph=*/true);
  std::vector<ad::Var> stepped;
  stepped.reserve(theta_vars.size());
  for (std::size_t k = 0; k < theta_vars.size(); ++k)
    stepped.push_back(theta_vars[k] - ad::scale(grads[k], alpha));
  return stepped;
}

ParamSet pseudo_update(const Classifier &clf, const WeightRule &rule, const ParamSet &theta,
                       const ParamSet &phi, const Batch &batch, double alpha) {
  ad::Tape tape;
  const auto phi_vars = tape.constants(phi);
  const auto stepped = pseudo_update_graph(tape, clf, rule, theta, phi_vars, batch, alpha);
  ParamSet out = ad::to_param_set(theta, stepped);
  require_finite(out, "pseudo-updated classifier");
  return out;
}

namespace {

ad::ScalarFunction meta_loss_fn(const Classifier &clf, const Batch &meta_batch,
                                const ClassStats &stats) {
  return [&clf, &meta_batch, &stats](ad::Tape &tape, std::span<const ad::Var> theta_hat) {
    return ad::inv_freq_meta_loss(batch_losses(clf, theta_hat, tape, meta_batch), stats);
  };
}

} // namespace

ad::ValueAndGrad hypergradient(const Classifier &clf, const WeightRule &rule,
                               const ParamSet &theta, const ParamSet &phi, const Batch &batch,
                               const Batch &meta_batch, const ClassStats &meta_stats,
                               double alpha) {
  require_nonempty(meta_batch);
  const ad::StepFunction inner = [&](ad::Tape &tape, std::span<const ad::Var> phi_vars) {
    return pseudo_update_graph(tape, clf, rule, theta, phi_vars, batch, alpha);
  };
  try {
    return ad::value_and_grad_through_step(meta_loss_fn(clf, meta_batch, meta_stats), inner, phi);
  } catch (const EvaluationError &e) {
    throw DivergenceError(e.what());
  }
}

double meta_objective(const Classifier &clf, const WeightRule &rule, const ParamSet &theta,
                      const ParamSet &phi, const Batch &batch, const Batch &meta_batch,
                      const ClassStats &meta_stats, double alpha) {
  const ParamSet theta_hat = pseudo_update(clf, rule, theta, phi, batch, alpha);
  return inv_freq_meta_loss(bce_per_class(meta_batch.y, clf.forward(theta_hat, meta_batch.x)),
                            meta_stats);
}

MetaStep meta_update_phi(const Classifier &clf, const WeightRule &rule, const ParamSet &theta,
                         const ParamSet &phi, const Batch &batch, const Batch &meta_batch,
                         double alpha, SgdMomentum &optimizer) {
  const ClassStats stats = class_stats(meta_batch.y);
  auto hg = hypergradient(clf, rule, theta, phi, batch, meta_batch, stats, alpha);
  MetaStep out{phi, std::move(hg.grad), hg.value};
  optimizer.step(out.phi, out.hypergradient);
  require_finite(out.phi, "weight-net parameters");
  return out;
}

ThetaStep final_update_theta(const Classifier &clf, const WeightRule &rule, const ParamSet &theta,
                             const ParamSet &phi_new, const Batch &batch, SgdMomentum &optimizer) {
  require_nonempty(batch);
  ad::Tape tape;
  const auto theta_vars = tape.variables(theta);
  const auto phi_vars = tape.constants(phi_new);
  const auto losses = batch_losses(clf, theta_vars, tape, batch);
  const auto w = rule.weights(phi_vars, ad::detach(losses));
  const auto loss = ad::weighted_train_loss(w, losses);
  ThetaStep out{theta, loss.scalar()};
  require_finite(out.train_loss, "training loss");
  const auto grads = tape.gradients(loss, theta_vars);
  const ParamSet g = ad::to_param_set(theta, grads);
  optimizer.step(out.theta, g);
  require_finite(out.theta, "classifier parameters");
  return out;
}

// ---------------------------------------------------------------------------

const RecallReport &MetricsReport::report(Constraint c) const {
  for (const auto &r : reports)
    if (r.strategy == c)
      return r;
  throw ArgumentError("no report for " + to_string(c));
}

double MetricsReport::head_recall_at(Constraint c, std::size_t k) const {
  for (std::size_t s = 0; s < reports.size(); ++s)
    if (reports[s].strategy == c)
      return head_recall[s][reports[s].k_index(k)];
  throw ArgumentError("no report for " + to_string(c));
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j = metrics_json(reports);
  j["head_classes"] = head_classes;
  nlohmann::json head = nlohmann::json::object();
  for (std::size_t s = 0; s < reports.size(); ++s) {
    nlohmann::json per_k = nlohmann::json::object();
    for (std::size_t ki = 0; ki < reports[s].k_values.size(); ++ki)
      per_k[std::to_string(reports[s].k_values[ki])] = head_recall[s][ki];
    head[to_string(reports[s].strategy)] = per_k;
  }
  j["head_recall"] = head;
  return j;
}

std::vector<EpisodeScores> predict_episodes(const Classifier &clf, const ParamSet &theta,
                                            const Dataset &ds) {
  const Matrix scores = clf.forward(theta, ds.features);
  std::map<std::size_t, EpisodeScores> by_scene;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    PairScores p;
    p.pair_id = i;
    p.scores.assign(scores.row(i).begin(), scores.row(i).end());
    for (std::size_t c = 0; c < ds.num_classes(); ++c)
      if (ds.labels(i, c) > 0.5)
        p.gt.push_back(c);
    auto &ep = by_scene[ds.scene_of[i]];
    ep.scene_id = ds.scene_of[i];
    ep.pairs.push_back(std::move(p));
  }
  std::vector<EpisodeScores> out;
  out.reserve(by_scene.size());
  for (auto &[id, ep] : by_scene)
    out.push_back(std::move(ep));
  return out;
}

MetricsReport evaluate(const Classifier &clf, const ParamSet &theta, const Dataset &eval_set,
                       const EvalConfig &cfg, std::span<const std::size_t> head_classes) {
  const auto episodes = predict_episodes(clf, theta, eval_set);
  MetricsReport out;
  out.head_classes.assign(head_classes.begin(), head_classes.end());
  for (Constraint c : cfg.strategies) {
    out.reports.push_back(recall_at_k(episodes, cfg.k_values, c));
    std::vector<double> head;
    for (std::size_t k : cfg.k_values)
      head.push_back(mean_recall_over(out.reports.back(), head_classes, k));
    out.head_recall.push_back(std::move(head));
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<double> normalized_inverse_freq(const ClassStats &stats) {
  std::vector<double> w(stats.freqs.size());
  double mean = 0.0;
  for (std::size_t c = 0; c < w.size(); ++c) {
    w[c] = 1.0 / stats.freqs[c];
    mean += w[c];
  }
  mean /= static_cast<double>(w.size());
  for (double &v : w)
    v /= mean;
  return w;
}

std::vector<std::size_t> top_classes(const Matrix &labels) {
  const auto counts = class_counts(labels);
  std::vector<std::size_t> order(counts.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return counts[a] > counts[b]; });
  order.resize(head_class_count(counts.size()));
  std::sort(order.begin(), order.end());
  return order;
}

WeightRule make_rule(Strategy strategy, WeightNetConfig wn_cfg, const Dataset &train) {
  if (strategy == Strategy::MwNetScalar)
    wn_cfg.scalar_mode = true;
  std::vector<double> class_weights;
  if (strategy == Strategy::StaticInvFreq)
    class_weights = normalized_inverse_freq(class_stats(train.labels));
  return WeightRule(strategy, WeightNet(std::move(wn_cfg)), std::move(class_weights));
}

ClassifierConfig checked(ClassifierConfig cfg, const Dataset &ds) {
  if (cfg.input_dim == 0)
    cfg.input_dim = ds.feature_dim();
  if (cfg.num_classes == 0)
    cfg.num_classes = ds.num_classes();
  if (cfg.input_dim != ds.feature_dim() || cfg.num_classes != ds.num_classes())
    throw ShapeError("classifier config does not match the dataset");
  return cfg;
}

WeightNetConfig checked(WeightNetConfig cfg, const Dataset &ds) {
  if (cfg.num_classes == 0)
    cfg.num_classes = ds.num_classes();
  if (cfg.num_classes != ds.num_classes())
    throw ShapeError("weight-net config does not match the dataset");
  return cfg;
}

} // namespace

Trainer::Trainer(const Dataset &dataset, ClassifierConfig clf_cfg, WeightNetConfig wn_cfg,
                 TrainerConfig cfg)
    : cfg_((validate(cfg), cfg)),
      split_(split_meta_validation(dataset, cfg.meta_fraction, derive_seed(cfg.seed, 1))),
      classifier_(checked(std::move(clf_cfg), dataset)),
      rule_(make_rule(cfg.strategy, checked(std::move(wn_cfg), dataset), split_.train)),
      head_classes_(top_classes(split_.train.labels)) {
  state_.theta = classifier_.init_params();
  state_.phi = rule_.net().init_params();
  state_.rng.seed(derive_seed(cfg_.seed, 2));
  state_.theta_optimizer =
      SgdMomentum(cfg_.alpha, cfg_.classifier_momentum, cfg_.classifier_weight_decay);
  state_.phi_optimizer =
      SgdMomentum(cfg_.beta, cfg_.weightnet_momentum, cfg_.weightnet_weight_decay);
}

Batch Trainer::sample_meta_batch() {
  const std::size_t m = split_.meta.size();
  std::vector<std::size_t> all(m);
  std::iota(all.begin(), all.end(), 0);
  if (m > cfg_.batch_size) {
    for (int attempt = 0; attempt < 10; ++attempt) {
      std::vector<std::size_t> pool = all;
      // Partial Fisher-Yates: the first batch_size slots become the sample.
      for (std::size_t k = 0; k < cfg_.batch_size; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, m - 1);
        std::swap(pool[k], pool[pick(state_.rng)]);
      }
      pool.resize(cfg_.batch_size);
      Batch b = make_batch(split_.meta, pool);
      const auto counts = class_counts(b.y);
      if (std::find(counts.begin(), counts.end(), 0) == counts.end())
        return b;
    }
  }
  return make_batch(split_.meta, all);
}

void Trainer::step(const Batch &batch) {
  const Batch meta_batch = sample_meta_batch();
  // Work on copies; the state is only committed once every update is finite.
  SgdMomentum phi_opt = state_.phi_optimizer;
  SgdMomentum theta_opt = state_.theta_optimizer;
  ParamSet phi = state_.phi;
  std::uint64_t phi_version = state_.phi_version;
  double meta_loss = 0.0;

  if (rule_.learned()) {
    MetaStep meta = meta_update_phi(classifier_, rule_, state_.theta, state_.phi, batch,
                                    meta_batch, cfg_.alpha, phi_opt);
    meta_loss = meta.meta_loss;
    if (cfg_.hypergrad_check_fraction > 0.0)
      spot_check_hypergradient(batch, meta_batch, meta.hypergradient);
    phi = std::move(meta.phi);
    ++phi_version;
  } else {
    const ClassStats stats = class_stats(meta_batch.y);
    meta_loss = inv_freq_meta_loss(
        bce_per_class(meta_batch.y, classifier_.forward(state_.theta, meta_batch.x)), stats);
    require_finite(meta_loss, "meta loss");
  }

  ThetaStep theta_step =
      final_update_theta(classifier_, rule_, state_.theta, phi, batch, theta_opt);

  state_.theta = std::move(theta_step.theta);
  state_.phi = std::move(phi);
  state_.phi_version = phi_version;
  state_.phi_optimizer = std::move(phi_opt);
  state_.theta_optimizer = std::move(theta_opt);
  ++state_.step;
  state_.history.push_back({state_.step, theta_step.train_loss, meta_loss, phi_version});
}

void Trainer::spot_check_hypergradient(const Batch &batch, const Batch &meta_batch,
                                       const ParamSet &analytic) {
  std::mt19937_64 check_rng(derive_seed(cfg_.seed, 1000 + state_.step));
  if (std::uniform_real_distribution<double>(0.0, 1.0)(check_rng) >= cfg_.hypergrad_check_fraction)
    return;
  const ClassStats stats = class_stats(meta_batch.y);
  const double h = 1e-4;
  double scale = 0.0;
  for (double v : analytic.values())
    scale = std::max(scale, std::abs(v));
  std::uniform_int_distribution<std::size_t> coord(0, state_.phi.total_len() - 1);
  for (int probe = 0; probe < 4; ++probe) {
    const std::size_t k = coord(check_rng);
    ParamSet plus = state_.phi, minus = state_.phi;
    plus.values()[k] += h;
    minus.values()[k] -= h;
    const double fd = (meta_objective(classifier_, rule_, state_.theta, plus, batch, meta_batch,
                                      stats, cfg_.alpha) -
                       meta_objective(classifier_, rule_, state_.theta, minus, batch, meta_batch,
                                      stats, cfg_.alpha)) /
                      (2 * h);
    const double an = analytic.values()[k];
    const double denom = std::max({std::abs(fd), std::abs(an), 1e-6 * scale, 1e-300});
    state_.hypergrad_worst_error = std::max(state_.hypergrad_worst_error, std::abs(fd - an) / denom);
  }
  ++state_.hypergrad_checks;
}

void Trainer::run_epoch() {
  std::vector<std::size_t> order(split_.train.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), state_.rng);
  for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
    const std::size_t end = std::min(order.size(), start + cfg_.batch_size);
    const std::span<const std::size_t> idx(order.data() + start, end - start);
    step(make_batch(split_.train, idx));
  }
  ++state_.epoch;
}

void Trainer::fit() {
  while (state_.epoch < cfg_.epochs)
    run_epoch();
}

TrainResult train(const Dataset &dataset, const Dataset &eval_set,
                  const ClassifierConfig &clf_cfg, const WeightNetConfig &wn_cfg,
                  const TrainerConfig &cfg, const EvalConfig &eval_cfg) {
  Trainer trainer(dataset, clf_cfg, wn_cfg, cfg);
  TrainResult result;
  try {
    trainer.fit();
  } catch (const DivergenceError &e) {
    result.diverged = true;
    result.error = e.what();
  }
  result.state = trainer.state();
  result.metrics = evaluate(trainer.classifier(), result.state.theta, eval_set, eval_cfg,
                            trainer.head_classes());
  return result;
}

// ---------------------------------------------------------------------------

std::string history_csv(const std::vector<StepRecord> &history) {
  std::string out = "step,train_loss,meta_loss\n";
  char buf[96];
  for (const auto &r : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", r.step, r.train_loss, r.meta_loss);
    out += buf;
  }
  return out;
}

void save_checkpoint(const TrainState &state, const std::filesystem::path &dir) {
  std::filesystem::create_directories(dir);
  std::ostringstream rng;
  rng << state.rng;
  nlohmann::json j;
  j["epoch"] = state.epoch;
  j["step"] = state.step;
  j["phi_version"] = state.phi_version;
  j["rng"] = rng.str();
  io::write_text(dir / "state.json", j.dump(2) + "\n");
  save_params(state.theta, dir / "theta");
  save_params(state.phi, dir / "phi");
  io::write_text(dir / "history.csv", history_csv(state.history));
}

} // namespace metabalance
