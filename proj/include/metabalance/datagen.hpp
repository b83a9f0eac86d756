#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "metabalance/matrix.hpp"

namespace metabalance {

struct GenConfig {
  std::size_t num_classes = 20;
  std::size_t feature_dim = 32;
  std::size_t num_instances = 5000;
  /// Class base probabilities are proportional to rank^-zipf_s.
  double zipf_s = 1.0;
  /// When set, zipf_s is solved so the achieved max/min class count ratio
  /// lands within 10% of this value.
  std::optional<double> target_ir;
  /// Probability that an instance whose primary label is outside the head
  /// region also receives a head label.
  double cooccur_p = 0.0;
  double noise_sigma = 0.3;
  std::size_t scene_size = 10;
  std::uint64_t seed = 0;
};

/// Labelled instances grouped into scenes. Class ids are frequency ranks:
/// class 0 is the most frequent by construction.
struct Dataset {
  Matrix features;               ///< N x d
  Matrix labels;                 ///< N x C, entries 0 or 1
  std::vector<std::size_t> scene_of;
  Matrix class_prototypes;       ///< C x d, unit rows
  std::uint64_t seed = 0;
  std::size_t scene_size = 0;
  double zipf_s = 0.0;

  std::size_t size() const noexcept { return labels.rows(); }
  std::size_t num_classes() const noexcept { return labels.cols(); }
  std::size_t feature_dim() const noexcept { return features.cols(); }

  /// Rows `indices`, keeping each instance's scene id.
  Dataset subset(std::span<const std::size_t> indices) const;

  friend bool operator==(const Dataset &, const Dataset &) = default;
};

/// Number of classes in the head region: the top 20% by frequency, at least one.
std::size_t head_class_count(std::size_t num_classes);

/// Throws GenerationError for invalid or unsatisfiable configurations.
Dataset generate(const GenConfig &cfg);

/// A further `n` instances drawn from the same class prototypes and label
/// distribution as `base` (for held-out evaluation), on an independent stream.
Dataset generate_holdout(const GenConfig &cfg, const Dataset &base, std::size_t n);

/// max_c M_c / min_c M_c. Throws MissingClassError for a zero-count class.
double imbalance_ratio(const Matrix &labels);
double imbalance_ratio(std::span<const std::size_t> counts);

std::vector<std::size_t> class_counts(const Matrix &labels);

/// Writes manifest.json, features.bin, labels.bin, prototypes.bin, scenes.json.
void save_dataset(const Dataset &dataset, const std::filesystem::path &dir);
/// Throws FormatError on version mismatch, truncation or checksum failure.
Dataset load_dataset(const std::filesystem::path &dir);

} // namespace metabalance
