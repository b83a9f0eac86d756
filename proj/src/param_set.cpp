#include "metabalance/param_set.hpp"

#include <algorithm>
#include <cmath>

#include "metabalance/errors.hpp"

namespace metabalance {

void ParamSet::add(std::string name, const Matrix &value) {
  segments_.push_back({std::move(name), value.rows(), value.cols(), values_.size()});
  values_.insert(values_.end(), value.data().begin(), value.data().end());
}

Matrix ParamSet::matrix(std::size_t segment) const {
  const Segment &s = segments_.at(segment);
  return Matrix(s.rows, s.cols,
                std::vector<double>(values_.begin() + s.offset,
                                    values_.begin() + s.offset + s.size()));
}

void ParamSet::set_matrix(std::size_t segment, const Matrix &value) {
  const Segment &s = segments_.at(segment);
  if (value.rows() != s.rows || value.cols() != s.cols)
    throw ShapeError("segment '" + s.name + "' shape mismatch");
  std::copy(value.data().begin(), value.data().end(), values_.begin() + s.offset);
}

std::vector<Matrix> ParamSet::matrices() const {
  std::vector<Matrix> out;
  out.reserve(segments_.size());
  for (std::size_t i = 0; i < segments_.size(); ++i)
    out.push_back(matrix(i));
  return out;
}

ParamSet ParamSet::zeros_like() const {
  ParamSet z = *this;
  std::fill(z.values_.begin(), z.values_.end(), 0.0);
  return z;
}

void ParamSet::require_same(const ParamSet &other, const char *op) const {
  if (!same_manifest(other))
    throw ShapeError(std::string("ParamSet ") + op + ": manifests differ");
}

ParamSet &ParamSet::axpy(double scale, const ParamSet &other) {
  require_same(other, "axpy");
  for (std::size_t i = 0; i < values_.size(); ++i)
    values_[i] += scale * other.values_[i];
  return *this;
}

ParamSet &ParamSet::scale(double factor) {
  for (double &v : values_)
    v *= factor;
  return *this;
}

bool ParamSet::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(),
                     [](double v) { return std::isfinite(v); });
}

ParamSet operator+(ParamSet a, const ParamSet &b) { return std::move(a.axpy(1.0, b)); }
ParamSet operator-(ParamSet a, const ParamSet &b) { return std::move(a.axpy(-1.0, b)); }
ParamSet operator*(double s, ParamSet a) { return std::move(a.scale(s)); }

double dot(const ParamSet &a, const ParamSet &b) {
  if (!a.same_manifest(b))
    throw ShapeError("ParamSet dot: manifests differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.total_len(); ++i)
    acc += a.values()[i] * b.values()[i];
  return acc;
}

double max_relative_error(const ParamSet &a, const ParamSet &b, double floor) {
  if (!a.same_manifest(b))
    throw ShapeError("ParamSet compare: manifests differ");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.total_len(); ++i) {
    const double x = a.values()[i], y = b.values()[i];
    const double denom = std::max({floor, std::abs(x), std::abs(y)});
    worst = std::max(worst, std::abs(x - y) / denom);
  }
  return worst;
}

} // namespace metabalance
