// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "metabalance/datagen.hpp"
#include "metabalance/errors.hpp"
#include "metabalance/experiment.hpp"
#include "metabalance/io.hpp"
#include "metabalance/losses.hpp"
#include "metabalance/metrics.hpp"
#include "metabalance/trainer.hpp"
#include "oracles.hpp"

using namespace metabalance;
namespace fs = std::filesystem;

#ifndef METABALANCE_FIXTURE
#error "METABALANCE_FIXTURE must point at configs/fixture.json"
#endif

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

int failures = 0;

void report(int id, const char *name, double limit_s, const std::function<Outcome()> &body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception &e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (limit_s > 0 && secs > limit_s) {
    o.pass = false;
    o.detail += " [over time budget]";
  }
  if (!o.pass)
    ++failures;
  std::printf("criterion %2d %-28s %s  %s (%.1fs)\n", id, name, o.pass ? "PASS" : "FAIL",
              o.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string fmt(const char *f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

struct TinyProblem {
  Classifier clf;
  WeightNet wn;
  WeightRule rule;
  ParamSet theta, phi;
  Batch batch, meta;

  explicit TinyProblem(std::uint64_t seed)
      : clf(ClassifierConfig{8, {8}, 4, seed}), wn(WeightNetConfig{4, {8}, false, seed + 1}),
        rule(Strategy::MlMwn, wn), theta(clf.init_params()), phi(wn.init_params()) {
    std::mt19937_64 rng(seed);
    batch = {oracle::random_matrix(4, 8, rng), Matrix(4, 4)};
    meta = {oracle::random_matrix(4, 8, rng), Matrix(4, 4)};
    std::bernoulli_distribution coin(0.3);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t c = 0; c < 4; ++c) {
        batch.y(i, c) = (c == i || coin(rng)) ? 1.0 : 0.0;
        meta.y(i, c) = (c == i || coin(rng)) ? 1.0 : 0.0;
      }
    // weight-net parameters away from the initialisation
    std::normal_distribution<double> n(0.0, 0.5);
    for (std::size_t k = 0; k < phi.total_len(); ++k)
      phi.values()[k] += n(rng);
  }
};

Outcome hypergradient_check() {
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TinyProblem t(seed);
    const double alpha = 1.0;
    const ClassStats stats = class_stats(t.meta.y);
    const auto vg = hypergradient(t.clf, t.rule, t.theta, t.phi, t.batch, t.meta, stats, alpha);
    // Independent objective: hand-derived pseudo step and meta loss.
    const Matrix l = bce_per_class(t.batch.y, t.clf.forward(t.theta, t.batch.x));
    const auto objective = [&](const ParamSet &phi) {
      const Matrix w = t.rule.weights(phi, l);
      return oracle::hand_meta_loss(oracle::hand_pseudo_step(t.theta, t.batch.x, t.batch.y, w, alpha),
                                    t.meta.x, t.meta.y);
    };
    const ParamSet fd = oracle::central_differences(objective, t.phi, 1e-5);
    worst = std::max(worst, oracle::worst_relative_error(vg.grad, fd, 1e-6 * oracle::max_abs(fd)));
  }
  return {worst <= 1e-4, fmt("max relative error %.3g over 5 problems (tol 1e-4)", worst)};
}

Outcome descent_check() {
  std::size_t violations = 0;
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> alpha_dist(0.05, 1.0);
  for (std::uint64_t s = 0; s < 100; ++s) {
    TinyProblem t(1000 + s);
    const double alpha = alpha_dist(rng);
    const ClassStats stats = class_stats(t.meta.y);
    SgdMomentum opt(1e-6, 0.0, 0.0);
    const MetaStep step = meta_update_phi(t.clf, t.rule, t.theta, t.phi, t.batch, t.meta, alpha, opt);
    const double before = meta_objective(t.clf, t.rule, t.theta, t.phi, t.batch, t.meta, stats, alpha);
    const double after = meta_objective(t.clf, t.rule, t.theta, step.phi, t.batch, t.meta, stats, alpha);
    violations += after > before ? 1 : 0;
  }
  return {violations == 0, fmt("%.0f violations in 100 random states", static_cast<double>(violations))};
}

Outcome loss_check() {
  double worst = 0.0;
  worst = std::max(worst, std::abs(bce_per_class(Matrix{{1.0}}, Matrix{{0.5}})(0, 0) - 0.6931471805599453));
  const Matrix perfect = bce_per_class(Matrix{{1.0, 0.0}}, Matrix{{1.0, 0.0}});
  for (double v : perfect.data())
    worst = std::max(worst, v);
  const bool closed = worst <= 2e-12;
  double naive = 0.0;
  std::mt19937_64 rng(9);
  std::bernoulli_distribution coin(0.4);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix y(8, 4);
    for (std::size_t i = 0; i < 8; ++i) {
      for (std::size_t c = 0; c < 4; ++c)
        y(i, c) = coin(rng) ? 1.0 : 0.0;
      y(i, i % 4) = 1.0;
    }
    const Matrix p = oracle::random_matrix(8, 4, rng, 0.01, 0.99);
    const Matrix w = oracle::random_matrix(8, 4, rng, 0.0, 1.0);
    const Matrix l = bce_per_class(y, p);
    double wsum = 0.0, meta = 0.0;
    for (std::size_t c = 0; c < 4; ++c) {
      double count = 0.0;
      for (std::size_t i = 0; i < 8; ++i)
        count += y(i, c);
      for (std::size_t i = 0; i < 8; ++i) {
        naive = std::max(naive, std::abs(l(i, c) - oracle::bce(y(i, c), p(i, c))));
        wsum += w(i, c) * l(i, c);
        meta += l(i, c) * 8.0 / count;
      }
    }
    naive = std::max(naive, std::abs(weighted_train_loss(w, l) - wsum / 32.0));
    naive = std::max(naive, std::abs(inv_freq_meta_loss(l, class_stats(y)) - meta / 8.0));
  }
  return {closed && naive <= 1e-12,
          fmt("closed-form error %.2g (tol 2e-12), naive-sum error %.2g (tol 1e-12)", worst, naive)};
}

Outcome recall_oracle_check() {
  std::mt19937_64 rng(2024);
  std::size_t mismatches = 0, compared = 0;
  const std::vector<std::size_t> ks{1, 2, 5};
  for (std::size_t C = 2; C <= 5; ++C) {
    const auto episodes = oracle::random_episodes(50, C, 4, rng);
    for (Constraint s : {Constraint::With, Constraint::Semi, Constraint::None}) {
      const RecallReport r = recall_at_k(episodes, ks, s);
      for (std::size_t ki = 0; ki < ks.size(); ++ki) {
        const auto expect = oracle::brute_recall(episodes, C, ks[ki], s);
        for (std::size_t c = 0; c < C; ++c, ++compared)
          mismatches += r.per_class[c].recall[ki] == expect[c] ? 0 : 1;
      }
    }
  }
  return {mismatches == 0, fmt("%.0f mismatches in %.0f per-class values", static_cast<double>(mismatches),
                               static_cast<double>(compared))};
}

Outcome constraint_check() {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> width(1, 15);
  std::size_t bad = 0;
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> s(width(rng));
    for (double &v : s)
      v = u(rng) < 0.2 ? 0.9 + 0.1 * u(rng) : u(rng);
    const auto with = apply_constraint(s, Constraint::With);
    const auto semi = apply_constraint(s, Constraint::Semi);
    const auto none = apply_constraint(s, Constraint::None);
    std::vector<std::size_t> semi_ids, with_ids, none_ids;
    for (const auto &c : semi)
      semi_ids.push_back(c.class_id);
    for (const auto &c : with)
      with_ids.push_back(c.class_id);
    for (const auto &c : none)
      none_ids.push_back(c.class_id);
    bool ok = with.size() == 1 && none.size() == s.size();
    ok = ok && semi_ids == oracle::brute_constraint(s, Constraint::Semi);
    ok = ok && with_ids == oracle::brute_constraint(s, Constraint::With);
    // nesting: semi within none, and the argmax within semi when it clears the threshold
    for (std::size_t id : semi_ids)
      ok = ok && std::find(none_ids.begin(), none_ids.end(), id) != none_ids.end();
    if (with[0].score > 0.9)
      ok = ok && std::find(semi_ids.begin(), semi_ids.end(), with_ids[0]) != semi_ids.end();
    bad += ok ? 0 : 1;
  }
  return {bad == 0, fmt("%.0f contract violations in 1000 score vectors", static_cast<double>(bad))};
}

struct FixtureRuns {
  // mR@10 and head recall@10 (with constraint), 3-seed means
  double mr[3] = {0, 0, 0};
  double head[3] = {0, 0, 0};
  bool ok = false;
  std::string error;
  std::filesystem::path out;
  ExperimentConfig cfg;
};

FixtureRuns run_fixture() {
  FixtureRuns f;
  f.cfg = parse_experiment_config(read_json_file(METABALANCE_FIXTURE));
  f.cfg.strategies = {Strategy::MlMwn, Strategy::MwNetScalar, Strategy::Unweighted};
  f.cfg.seeds = {0, 1, 2};
  f.cfg.eval.k_values = {10};
  f.cfg.eval.strategies = {Constraint::With};
  f.out = fs::temp_directory_path() / "metabalance_acceptance";
  fs::remove_all(f.out);
  f.cfg.output_dir = f.out / "a";
  std::ostringstream log;
  const auto runs = cmd_train(f.cfg, log);
  for (const RunOutcome &r : runs) {
    if (r.diverged) {
      f.error = "run diverged: " + r.error;
      return f;
    }
    const std::size_t s = r.strategy == Strategy::MlMwn ? 0 : r.strategy == Strategy::MwNetScalar ? 1 : 2;
    f.mr[s] += 100.0 * r.metrics.report(Constraint::With).mean_recall.front() / 3.0;
    f.head[s] += 100.0 * r.metrics.head_recall_at(Constraint::With, 10) / 3.0;
  }
  f.ok = runs.size() == 9;
  if (!f.ok)
    f.error = "expected 9 runs";
  return f;
}

Outcome determinism_check(const FixtureRuns &f) {
  if (!f.ok)
    return {false, f.error};
  ExperimentConfig again = f.cfg;
  again.strategies = {Strategy::MlMwn};
  again.seeds = {0};
  again.output_dir = f.out / "b";
  std::ostringstream log;
  cmd_train(again, log);
  bool same = true;
  for (const char *file : {"metrics.json", "history.csv"}) {
    const fs::path a = f.out / "a" / "runs" / "ml_mwn" / "0" / file;
    const fs::path b = f.out / "b" / "runs" / "ml_mwn" / "0" / file;
    same = same && io::read_bytes(a) == io::read_bytes(b);
  }
  return {same, same ? "metrics.json and history.csv identical across two runs"
                     : "outputs differ between two runs"};
}

Outcome dataset_roundtrip_check() {
  GenConfig g;
  g.num_classes = 20;
  g.feature_dim = 32;
  g.num_instances = 5000;
  g.target_ir = 100.0;
  g.cooccur_p = 0.3;
  g.seed = 11;
  const Dataset ds = generate(g);
  const fs::path dir = fs::temp_directory_path() / "metabalance_acceptance_ds";
  fs::remove_all(dir);
  save_dataset(ds, dir);
  const bool identical = load_dataset(dir) == ds;
  std::size_t detected = 0, tried = 0;
  std::mt19937_64 rng(5);
  for (const char *file : {"features.bin", "labels.bin", "prototypes.bin"}) {
    const auto clean = io::read_bytes(dir / file);
    for (int k = 0; k < 3; ++k, ++tried) {
      auto bytes = clean;
      bytes[std::uniform_int_distribution<std::size_t>(0, bytes.size() - 1)(rng)] ^= 0x10;
      io::write_bytes(dir / file, bytes);
      try {
        load_dataset(dir);
      } catch (const FormatError &e) {
        detected += std::string(e.what()).find("checksum") != std::string::npos ? 1 : 0;
      }
    }
    io::write_bytes(dir / file, clean);
  }
  fs::remove_all(dir);
  return {identical && detected == tried,
          std::string(identical ? "round trip identical, " : "round trip DIFFERS, ") +
              fmt("%.0f/%.0f single-byte corruptions detected", static_cast<double>(detected),
                  static_cast<double>(tried))};
}

} // namespace

int main() {
  report(1, "hypergradient vs differences", 10, hypergradient_check);
  report(2, "meta step descent", 30, descent_check);
  report(3, "loss closed forms", 0, loss_check);
  report(4, "recall brute-force oracle", 5, recall_oracle_check);
  report(5, "constraint contracts", 0, constraint_check);

  const auto t0 = std::chrono::steady_clock::now();
  const FixtureRuns fixture = run_fixture();
  const double fixture_secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("fixture mR@10 (with constraint, 3-seed mean): ml_mwn %.2f  mwnet_scalar %.2f  "
              "unweighted %.2f; head recall@10: %.2f / %.2f / %.2f (%.1fs)\n",
              fixture.mr[0], fixture.mr[1], fixture.mr[2], fixture.head[0], fixture.head[1],
              fixture.head[2], fixture_secs);
  report(6, "tail gain, head preserved", 0, [&]() -> Outcome {
    if (!fixture.ok)
      return {false, fixture.error};
    const double gain = fixture.mr[0] - fixture.mr[2];
    const double head_gap = std::abs(fixture.head[0] - fixture.head[2]);
    const bool a = gain >= 5.0, b = head_gap <= 2.0;
    return {a && b && fixture_secs <= 600.0,
            fmt("(a) mR@10 gain %+.2f (need >= +5) ", gain) + (a ? "ok" : "FAIL") +
                fmt("; (b) head gap %.2f (need <= 2) ", head_gap) + (b ? "ok" : "FAIL") +
                (fixture_secs <= 600.0 ? "" : "; over 10 min")};
  });
  report(7, "strategy ordering", 0, [&]() -> Outcome {
    if (!fixture.ok)
      return {false, fixture.error};
    const bool ok = fixture.mr[0] >= fixture.mr[1] && fixture.mr[1] >= fixture.mr[2];
    return {ok, fmt("ml_mwn %.2f >= mwnet_scalar %.2f >= unweighted %.2f", fixture.mr[0],
                    fixture.mr[1], fixture.mr[2])};
  });
  report(8, "imbalance generator", 0, []() -> Outcome {
    GenConfig g;
    g.num_classes = 20;
    g.feature_dim = 32;
    g.num_instances = 5000;
    g.target_ir = 100.0;
    g.cooccur_p = 0.3;
    g.seed = 0;
    const double ir = imbalance_ratio(generate(g).labels);
    const std::vector<std::size_t> ag{3218, 1};
    const double fixed = imbalance_ratio(ag);
    return {ir >= 90.0 && ir <= 110.0 && fixed == 3218.0,
            fmt("measured ratio %.2f for target 100; [3218, 1] -> %.1f", ir, fixed)};
  });
  report(9, "training determinism", 0, [&] { return determinism_check(fixture); });
  report(10, "dataset round trip", 0, dataset_roundtrip_check);

  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
