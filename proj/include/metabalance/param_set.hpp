#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "metabalance/matrix.hpp"

namespace metabalance {

/// Named, shaped slice of a flat parameter vector.
struct Segment {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;

  std::size_t size() const noexcept { return rows * cols; }
  friend bool operator==(const Segment &, const Segment &) = default;
};

/// Flat parameter vector plus the manifest describing how it splits into
/// matrices. Classifier and weight-net parameters both live in one of these.
class ParamSet {
public:
  ParamSet() = default;

  /// Appends a segment initialised from `value`.
  void add(std::string name, const Matrix &value);

  std::size_t total_len() const noexcept { return values_.size(); }
  std::size_t num_segments() const noexcept { return segments_.size(); }
  const std::vector<Segment> &segments() const noexcept { return segments_; }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }

  Matrix matrix(std::size_t segment) const;
  void set_matrix(std::size_t segment, const Matrix &value);
  std::vector<Matrix> matrices() const;

  /// Same manifest, every value zero.
  ParamSet zeros_like() const;

  bool same_manifest(const ParamSet &other) const noexcept {
    return segments_ == other.segments_;
  }

  /// this += scale * other. Manifests must match.
  ParamSet &axpy(double scale, const ParamSet &other);
  ParamSet &scale(double factor);

  bool all_finite() const noexcept;

  friend bool operator==(const ParamSet &, const ParamSet &) = default;

private:
  void require_same(const ParamSet &other, const char *op) const;

  std::vector<Segment> segments_;
  std::vector<double> values_;
};

ParamSet operator+(ParamSet a, const ParamSet &b);
ParamSet operator-(ParamSet a, const ParamSet &b);
ParamSet operator*(double s, ParamSet a);

double dot(const ParamSet &a, const ParamSet &b);

/// Largest |a-b| / max(|a|, |b|, floor) over all coordinates. The floor keeps
/// coordinates that are zero up to rounding from dominating the result.
double max_relative_error(const ParamSet &a, const ParamSet &b, double floor = 1.0);

} // namespace metabalance
