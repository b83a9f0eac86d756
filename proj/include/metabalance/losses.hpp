#pragma once

#include <cstddef>
#include <vector>

#include "metabalance/autodiff.hpp"
#include "metabalance/matrix.hpp"

namespace metabalance {

/// Predictions are clamped into [kProbEpsilon, 1 - kProbEpsilon] before logs.
inline constexpr double kProbEpsilon = 1e-12;

/// Per-class label statistics of a labelled set.
struct ClassStats {
  std::size_t total = 0;            ///< M, number of instances
  std::vector<std::size_t> counts;  ///< M_c
  std::vector<double> freqs;        ///< M_c / M
};

/// Element-wise binary cross-entropy, n x C. Throws ShapeError on mismatch.
Matrix bce_per_class(const Matrix &labels, const Matrix &predictions);

/// (1/(nC)) * sum_{i,c} w_{i,c} * l_{i,c}.
double weighted_train_loss(const Matrix &weights, const Matrix &losses);

/// Throws MissingClassError if some class never occurs, ArgumentError if
/// there are no rows.
ClassStats class_stats(const Matrix &labels);

/// (1/M) * sum_j sum_c l_{j,c} / freq(c).
double inv_freq_meta_loss(const Matrix &losses, const ClassStats &stats);

namespace ad {

Var bce_per_class(Var labels, Var predictions);
Var weighted_train_loss(Var weights, Var losses);
Var inv_freq_meta_loss(Var losses, const ClassStats &stats);

} // namespace ad

} // namespace metabalance
