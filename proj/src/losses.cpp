#include "metabalance/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "metabalance/errors.hpp"

namespace metabalance {

namespace {

void require_same_shape(const Matrix &a, const Matrix &b, const char *what) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(what) + ": shapes " + std::to_string(a.rows()) +
                     "x" + std::to_string(a.cols()) + " and " +
                     std::to_string(b.rows()) + "x" + std::to_string(b.cols()) +
                     " differ");
}

Matrix inverse_freq_row(const ClassStats &stats, std::size_t classes) {
  if (stats.freqs.size() != classes)
    throw ShapeError("class stats cover " + std::to_string(stats.freqs.size()) +
                     " classes, losses have " + std::to_string(classes));
  Matrix row(1, classes);
  for (std::size_t c = 0; c < classes; ++c) {
    if (!(stats.freqs[c] > 0.0))
      throw MissingClassError(c, "meta-validation statistics");
    row(0, c) = 1.0 / stats.freqs[c];
  }
  return row;
}

} // namespace

Matrix bce_per_class(const Matrix &labels, const Matrix &predictions) {
  require_same_shape(labels, predictions, "bce_per_class");
  Matrix out(labels.rows(), labels.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double y = labels.data()[i];
    const double p = std::clamp(predictions.data()[i], kProbEpsilon, 1.0 - kProbEpsilon);
    out.data()[i] = -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
  }
  return out;
}

double weighted_train_loss(const Matrix &weights, const Matrix &losses) {
  require_same_shape(weights, losses, "weighted_train_loss");
  if (losses.empty())
    throw ShapeError("weighted_train_loss: empty batch");
  double acc = 0.0;
  for (std::size_t i = 0; i < losses.size(); ++i)
    acc += weights.data()[i] * losses.data()[i];
  return acc / static_cast<double>(losses.size());
}

ClassStats class_stats(const Matrix &labels) {
  if (labels.rows() == 0)
    throw ArgumentError("class_stats needs at least one instance");
  ClassStats stats;
  stats.total = labels.rows();
  stats.counts.assign(labels.cols(), 0);
  for (std::size_t r = 0; r < labels.rows(); ++r)
    for (std::size_t c = 0; c < labels.cols(); ++c)
      if (labels(r, c) > 0.5)
        ++stats.counts[c];
  stats.freqs.resize(labels.cols());
  for (std::size_t c = 0; c < labels.cols(); ++c) {
    if (stats.counts[c] == 0)
      throw MissingClassError(c, "label set");
    stats.freqs[c] = static_cast<double>(stats.counts[c]) / static_cast<double>(stats.total);
  }
  return stats;
}

double inv_freq_meta_loss(const Matrix &losses, const ClassStats &stats) {
  const Matrix inv = inverse_freq_row(stats, losses.cols());
  if (losses.rows() == 0)
    throw ShapeError("inv_freq_meta_loss: empty meta batch");
  double acc = 0.0;
  for (std::size_t j = 0; j < losses.rows(); ++j)
    for (std::size_t c = 0; c < losses.cols(); ++c)
      acc += inv(0, c) * losses(j, c);
  return acc / static_cast<double>(losses.rows());
}

namespace ad {

Var bce_per_class(Var labels, Var predictions) {
  if (!labels.value().same_shape(predictions.value()))
    throw ShapeError("bce_per_class: shape mismatch");
  const Var p = clamp(predictions, kProbEpsilon, 1.0 - kProbEpsilon);
  // -(y log p + (1 - y) log(1 - p))
  const Var pos = mul(labels, log(p));
  const Var neg = mul(affine(labels, -1.0, 1.0), log(affine(p, -1.0, 1.0)));
  return scale(pos + neg, -1.0);
}

Var weighted_train_loss(Var weights, Var losses) {
  if (!weights.value().same_shape(losses.value()))
    throw ShapeError("weighted_train_loss: shape mismatch");
  return mean(mul(weights, losses));
}

Var inv_freq_meta_loss(Var losses, const ClassStats &stats) {
  const Matrix inv = inverse_freq_row(stats, losses.cols());
  const Var inv_rows = losses.tape().constant(Matrix(inv));
  const Var weighted = mul(losses, broadcast_rows(inv_rows, losses.rows()));
  return scale(sum(weighted), 1.0 / static_cast<double>(losses.rows()));
}

} // namespace ad

} // namespace metabalance
