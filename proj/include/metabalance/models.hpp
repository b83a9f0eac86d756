#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "metabalance/autodiff.hpp"
#include "metabalance/matrix.hpp"
#include "metabalance/param_set.hpp"

namespace metabalance {

struct ClassifierConfig {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_sizes{64};
  std::size_t num_classes = 0;
  std::uint64_t seed = 0;
};

struct WeightNetConfig {
  std::size_t num_classes = 0;
  std::vector<std::size_t> hidden_sizes{100};
  /// Width-1 network applied to every loss entry on its own (1-h-1) instead of
  /// mapping a whole loss row to a weight row (C-h-C).
  bool scalar_mode = false;
  std::uint64_t seed = 0;
};

/// ReLU hidden layers, sigmoid output. Parameters are stored as alternating
/// weight (fan_in x fan_out) and bias (1 x fan_out) segments.
class Mlp {
public:
  explicit Mlp(std::vector<std::size_t> layer_sizes);

  const std::vector<std::size_t> &layer_sizes() const noexcept { return sizes_; }
  std::size_t input_dim() const noexcept { return sizes_.front(); }
  std::size_t output_dim() const noexcept { return sizes_.back(); }

  /// Glorot-uniform weights, zero biases.
  ParamSet init(std::uint64_t seed) const;

  /// Throws ShapeError unless `params` has this network's manifest shapes.
  void check_params(const ParamSet &params) const;

  Matrix forward(const ParamSet &params, const Matrix &x) const;
  ad::Var forward(std::span<const ad::Var> params, ad::Var x) const;

  /// Output before the final sigmoid.
  Matrix logits(const ParamSet &params, const Matrix &x) const;

private:
  std::vector<std::size_t> sizes_;
};

/// Multi-label predicate classifier: d -> hidden... -> C, per-class sigmoid.
class Classifier {
public:
  explicit Classifier(ClassifierConfig config);

  const ClassifierConfig &config() const noexcept { return config_; }
  const Mlp &mlp() const noexcept { return mlp_; }

  ParamSet init_params() const { return mlp_.init(config_.seed); }
  Matrix forward(const ParamSet &theta, const Matrix &x) const;
  ad::Var forward(std::span<const ad::Var> theta, ad::Var x) const;

private:
  ClassifierConfig config_;
  Mlp mlp_;
};

/// Maps per-class training losses to per-class weights in (0, 1).
class WeightNet {
public:
  explicit WeightNet(WeightNetConfig config);

  const WeightNetConfig &config() const noexcept { return config_; }
  const Mlp &mlp() const noexcept { return mlp_; }

  ParamSet init_params() const { return mlp_.init(config_.seed); }

  /// losses: n x C in vector mode; any n x k in scalar mode.
  Matrix forward(const ParamSet &phi, const Matrix &losses) const;
  ad::Var forward(std::span<const ad::Var> phi, ad::Var losses) const;

private:
  void check_width(std::size_t cols) const;

  WeightNetConfig config_;
  Mlp mlp_;
};

/// Writes `<stem>.json` (manifest) and `<stem>.bin` (little-endian float64).
void save_params(const ParamSet &params, const std::filesystem::path &stem);
ParamSet load_params(const std::filesystem::path &stem);

} // namespace metabalance
