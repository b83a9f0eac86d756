#include <doctest/doctest.h>

#include <cmath>
#include <random>

#include "metabalance/autodiff.hpp"
#include "metabalance/errors.hpp"
#include "metabalance/losses.hpp"
#include "oracles.hpp"

using namespace metabalance;
namespace ad = metabalance::ad;

namespace {

Matrix random_labels(std::size_t rows, std::size_t cols, std::mt19937_64 &rng) {
  Matrix y(rows, cols);
  std::bernoulli_distribution coin(0.4);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t c = 0; c < cols; ++c)
      y(i, c) = coin(rng) ? 1.0 : 0.0;
    y(i, i % cols) = 1.0;
  }
  return y;
}

} // namespace

TEST_CASE("bce closed forms") {
  const double ln2 = 0.6931471805599453;
  CHECK(std::abs(bce_per_class(Matrix{{1.0}}, Matrix{{0.5}})(0, 0) - ln2) <= 2e-12);
  CHECK(std::abs(bce_per_class(Matrix{{0.0}}, Matrix{{0.5}})(0, 0) - ln2) <= 2e-12);
  CHECK(bce_per_class(Matrix{{1.0}}, Matrix{{1.0 - 1e-12}})(0, 0) <= 2e-12);
  CHECK(bce_per_class(Matrix{{0.0}}, Matrix{{1e-12}})(0, 0) <= 2e-12);
  // saturated predictions stay finite through the clamp
  CHECK(std::isfinite(bce_per_class(Matrix{{1.0}}, Matrix{{0.0}})(0, 0)));
  CHECK_THROWS_AS(bce_per_class(Matrix(2, 2), Matrix(2, 3)), ShapeError);
}

TEST_CASE("bce is monotone in the prediction") {
  double prev_pos = INFINITY, prev_neg = -INFINITY;
  for (int k = 1; k < 100; ++k) {
    const double p = k / 100.0;
    const Matrix l = bce_per_class(Matrix{{1.0, 0.0}}, Matrix{{p, p}});
    CHECK(l(0, 0) < prev_pos);
    CHECK(l(0, 1) > prev_neg);
    prev_pos = l(0, 0);
    prev_neg = l(0, 1);
  }
}

TEST_CASE("weighted_train_loss examples") {
  std::mt19937_64 rng(3);
  const Matrix l = oracle::random_matrix(4, 3, rng, 0, 2);
  double plain = 0.0;
  for (double v : l.data())
    plain += v;
  plain /= 12.0;
  CHECK(weighted_train_loss(Matrix(4, 3, 1.0), l) == doctest::Approx(plain).epsilon(1e-15));
  CHECK(weighted_train_loss(Matrix(4, 3, 0.0), l) == 0.0);
  CHECK(weighted_train_loss(Matrix{{1, 0}}, Matrix{{0.4, 0.8}}) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK_THROWS_AS(weighted_train_loss(Matrix(4, 3), Matrix(3, 4)), ShapeError);
}

TEST_CASE("weighted loss never exceeds the plain mean for weights in [0, 1]") {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 50; ++t) {
    const Matrix l = oracle::random_matrix(5, 3, rng, 0, 3);
    const Matrix w = oracle::random_matrix(5, 3, rng, 0, 1);
    CHECK(weighted_train_loss(w, l) <= weighted_train_loss(Matrix(5, 3, 1.0), l));
  }
}

TEST_CASE("class_stats examples") {
  Matrix y(10, 3);
  for (std::size_t i = 0; i < 5; ++i)
    y(i, 0) = 1;
  for (std::size_t i = 5; i < 8; ++i)
    y(i, 1) = 1;
  for (std::size_t i = 8; i < 10; ++i)
    y(i, 2) = 1;
  const ClassStats s = class_stats(y);
  CHECK(s.total == 10);
  CHECK(s.counts == std::vector<std::size_t>{5, 3, 2});
  CHECK(s.freqs[0] == 0.5);
  CHECK(s.freqs[1] == 0.3);
  CHECK(s.freqs[2] == 0.2);

  const ClassStats all = class_stats(Matrix(4, 3, 1.0));
  for (double f : all.freqs)
    CHECK(f == 1.0);

  Matrix balanced(8, 4);
  for (std::size_t i = 0; i < 8; ++i)
    balanced(i, i % 4) = 1;
  for (double f : class_stats(balanced).freqs)
    CHECK(f == 0.25);

  Matrix missing(3, 3);
  missing(0, 0) = missing(1, 1) = missing(2, 1) = 1;
  try {
    class_stats(missing);
    FAIL("expected MissingClassError");
  } catch (const MissingClassError &e) {
    CHECK(e.class_id() == 2);
  }
  CHECK_THROWS_AS(class_stats(Matrix(0, 3)), ArgumentError);
}

TEST_CASE("inv_freq_meta_loss examples") {
  ClassStats s;
  s.total = 1;
  s.counts = {1, 1};
  s.freqs = {0.5, 0.25};
  CHECK(inv_freq_meta_loss(Matrix{{0.1, 0.2}}, s) == doctest::Approx(1.0).epsilon(1e-15));

  // uniform freqs f -> (1/f) * C * mean
  std::mt19937_64 rng(5);
  const Matrix l = oracle::random_matrix(6, 4, rng, 0, 2);
  ClassStats u;
  u.total = 6;
  u.counts.assign(4, 3);
  u.freqs.assign(4, 0.5);
  double mean = 0.0;
  for (double v : l.data())
    mean += v;
  mean /= 24.0;
  CHECK(std::abs(inv_freq_meta_loss(l, u) - (1.0 / 0.5) * 4.0 * mean) <= 1e-12);

  ClassStats zero = u;
  zero.freqs[2] = 0.0;
  CHECK_THROWS_AS(inv_freq_meta_loss(l, zero), MissingClassError);
}

TEST_CASE("losses match naive summation on random 8x4 inputs") {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 20; ++t) {
    const Matrix y = random_labels(8, 4, rng);
    const Matrix p = oracle::random_matrix(8, 4, rng, 0.01, 0.99);
    const Matrix w = oracle::random_matrix(8, 4, rng, 0, 1);
    const Matrix l = bce_per_class(y, p);
    double wsum = 0.0;
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t c = 0; c < 4; ++c) {
        CHECK(std::abs(l(i, c) - oracle::bce(y(i, c), p(i, c))) <= 1e-12);
        wsum += w(i, c) * l(i, c);
      }
    CHECK(std::abs(weighted_train_loss(w, l) - wsum / 32.0) <= 1e-12);

    const ClassStats s = class_stats(y);
    double meta = 0.0;
    for (std::size_t c = 0; c < 4; ++c) {
      double count = 0.0;
      for (std::size_t i = 0; i < 8; ++i)
        count += y(i, c);
      for (std::size_t i = 0; i < 8; ++i)
        meta += l(i, c) / (count / 8.0);
    }
    CHECK(std::abs(inv_freq_meta_loss(l, s) - meta / 8.0) <= 1e-12);
  }
}

TEST_CASE("tape losses agree with the value versions and with differences") {
  std::mt19937_64 rng(7);
  const Matrix y = random_labels(5, 3, rng);
  const ClassStats s = class_stats(y);
  const Matrix w = oracle::random_matrix(5, 3, rng, 0, 1);
  ParamSet p;
  p.add("yhat", oracle::random_matrix(5, 3, rng, 0.05, 0.95));

  const auto bce_mean = [&](ad::Tape &t, std::span<const ad::Var> v) {
    return ad::mean(ad::bce_per_class(t.constant(y), v[0]));
  };
  const auto weighted = [&](ad::Tape &t, std::span<const ad::Var> v) {
    return ad::weighted_train_loss(t.constant(w), ad::bce_per_class(t.constant(y), v[0]));
  };
  const auto meta = [&](ad::Tape &t, std::span<const ad::Var> v) {
    return ad::inv_freq_meta_loss(ad::bce_per_class(t.constant(y), v[0]), s);
  };
  const Matrix l = bce_per_class(y, p.matrix(0));
  CHECK(ad::evaluate(weighted, p) == doctest::Approx(weighted_train_loss(w, l)).epsilon(1e-14));
  CHECK(ad::evaluate(meta, p) == doctest::Approx(inv_freq_meta_loss(l, s)).epsilon(1e-14));

  for (const ad::ScalarFunction &f : {ad::ScalarFunction(bce_mean), ad::ScalarFunction(weighted),
                                      ad::ScalarFunction(meta)}) {
    const ParamSet fd = oracle::central_differences(
        [&](const ParamSet &q) { return ad::evaluate(f, q); }, p, 1e-6);
    CHECK(oracle::worst_relative_error(ad::grad(f, p), fd, 1e-10) <= 1e-6);
  }
}
