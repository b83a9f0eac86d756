#include "metabalance/models.hpp"

#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "metabalance/errors.hpp"
#include "metabalance/io.hpp"

namespace metabalance {

namespace {

std::vector<std::size_t> concat_sizes(std::size_t in, const std::vector<std::size_t> &hidden,
                                      std::size_t out) {
  std::vector<std::size_t> sizes{in};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(out);
  return sizes;
}

void relu_inplace(Matrix &m) {
  for (double &v : m.data())
    v = v > 0.0 ? v : 0.0;
}

void add_bias(Matrix &m, const Matrix &bias) {
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c)
      m(r, c) += bias(0, c);
}

} // namespace

Mlp::Mlp(std::vector<std::size_t> layer_sizes) : sizes_(std::move(layer_sizes)) {
  if (sizes_.size() < 2)
    throw ArgumentError("an MLP needs at least an input and an output layer");
  for (std::size_t s : sizes_)
    if (s == 0)
      throw ArgumentError("MLP layer widths must be positive");
}

ParamSet Mlp::init(std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  ParamSet params;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    const std::size_t fan_in = sizes_[l], fan_out = sizes_[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Matrix w(fan_in, fan_out);
    for (double &v : w.data())
      v = dist(rng);
    params.add("W" + std::to_string(l), w);
    params.add("b" + std::to_string(l), Matrix(1, fan_out));
  }
  return params;
}

void Mlp::check_params(const ParamSet &params) const {
  const std::size_t layers = sizes_.size() - 1;
  if (params.num_segments() != 2 * layers)
    throw ShapeError("expected " + std::to_string(2 * layers) +
                     " parameter segments, got " +
                     std::to_string(params.num_segments()));
  for (std::size_t l = 0; l < layers; ++l) {
    const Segment &w = params.segments()[2 * l];
    const Segment &b = params.segments()[2 * l + 1];
    if (w.rows != sizes_[l] || w.cols != sizes_[l + 1] || b.rows != 1 ||
        b.cols != sizes_[l + 1])
      throw ShapeError("layer " + std::to_string(l) +
                       " parameters do not match the configured widths");
  }
}

Matrix Mlp::logits(const ParamSet &params, const Matrix &x) const {
  check_params(params);
  if (x.cols() != input_dim())
    throw ShapeError("input width " + std::to_string(x.cols()) + ", expected " +
                     std::to_string(input_dim()));
  Matrix h = x;
  const std::size_t layers = sizes_.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    h = matmul(h, params.matrix(2 * l));
    add_bias(h, params.matrix(2 * l + 1));
    if (l + 1 < layers)
      relu_inplace(h);
  }
  return h;
}

Matrix Mlp::forward(const ParamSet &params, const Matrix &x) const {
  Matrix out = logits(params, x);
  for (double &v : out.data())
    v = ad::sigmoid(v);
  return out;
}

ad::Var Mlp::forward(std::span<const ad::Var> params, ad::Var x) const {
  const std::size_t layers = sizes_.size() - 1;
  if (params.size() != 2 * layers)
    throw ShapeError("expected " + std::to_string(2 * layers) + " parameter nodes");
  if (x.cols() != input_dim())
    throw ShapeError("input width " + std::to_string(x.cols()) + ", expected " +
                     std::to_string(input_dim()));
  ad::Var h = x;
  for (std::size_t l = 0; l < layers; ++l) {
    h = ad::add_row(ad::matmul(h, params[2 * l]), params[2 * l + 1]);
    if (l + 1 < layers)
      h = ad::relu(h);
  }
  return ad::sigmoid(h);
}

Classifier::Classifier(ClassifierConfig config)
    : config_(std::move(config)),
      mlp_(concat_sizes(config_.input_dim, config_.hidden_sizes, config_.num_classes)) {
  if (config_.num_classes < 2)
    throw ArgumentError("classifier needs at least two classes");
}

Matrix Classifier::forward(const ParamSet &theta, const Matrix &x) const {
  return mlp_.forward(theta, x);
}

ad::Var Classifier::forward(std::span<const ad::Var> theta, ad::Var x) const {
  return mlp_.forward(theta, x);
}

WeightNet::WeightNet(WeightNetConfig config)
    : config_(std::move(config)),
      mlp_(config_.scalar_mode
               ? concat_sizes(1, config_.hidden_sizes, 1)
               : concat_sizes(config_.num_classes, config_.hidden_sizes,
                              config_.num_classes)) {}

void WeightNet::check_width(std::size_t cols) const {
  if (!config_.scalar_mode && cols != config_.num_classes)
    throw ShapeError("weight net expects " + std::to_string(config_.num_classes) +
                     " loss columns, got " + std::to_string(cols));
}

Matrix WeightNet::forward(const ParamSet &phi, const Matrix &losses) const {
  check_width(losses.cols());
  if (!config_.scalar_mode)
    return mlp_.forward(phi, losses);
  const Matrix column(losses.size(), 1,
                      std::vector<double>(losses.data().begin(), losses.data().end()));
  const Matrix w = mlp_.forward(phi, column);
  return Matrix(losses.rows(), losses.cols(),
                std::vector<double>(w.data().begin(), w.data().end()));
}

ad::Var WeightNet::forward(std::span<const ad::Var> phi, ad::Var losses) const {
  check_width(losses.cols());
  if (!config_.scalar_mode)
    return mlp_.forward(phi, losses);
  const std::size_t rows = losses.rows(), cols = losses.cols();
  const ad::Var w = mlp_.forward(phi, ad::reshape(losses, rows * cols, 1));
  return ad::reshape(w, rows, cols);
}

void save_params(const ParamSet &params, const std::filesystem::path &stem) {
  nlohmann::json manifest;
  manifest["version"] = 1;
  manifest["dtype"] = "float64-le";
  manifest["total_len"] = params.total_len();
  manifest["segments"] = nlohmann::json::array();
  for (const Segment &s : params.segments())
    manifest["segments"].push_back({{"name", s.name}, {"rows", s.rows}, {"cols", s.cols}});
  io::write_text(stem.string() + ".json", manifest.dump(2) + "\n");
  io::write_bytes(stem.string() + ".bin", io::encode_f64_le(params.values()));
}

ParamSet load_params(const std::filesystem::path &stem) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(io::read_text(stem.string() + ".json"));
  } catch (const nlohmann::json::exception &e) {
    throw FormatError("parameter manifest: " + std::string(e.what()));
  }
  if (manifest.value("version", 0) != 1)
    throw FormatError("unsupported parameter manifest version");
  const auto values = io::decode_f64_le(io::read_bytes(stem.string() + ".bin"));
  ParamSet params;
  std::size_t offset = 0;
  for (const auto &seg : manifest.at("segments")) {
    const auto rows = seg.at("rows").get<std::size_t>();
    const auto cols = seg.at("cols").get<std::size_t>();
    if (offset + rows * cols > values.size())
      throw FormatError("parameter file truncated");
    params.add(seg.at("name").get<std::string>(),
               Matrix(rows, cols,
                      std::vector<double>(values.begin() + offset,
                                          values.begin() + offset + rows * cols)));
    offset += rows * cols;
  }
  if (offset != values.size())
    throw FormatError("parameter file length does not match manifest");
  return params;
}

} // namespace metabalance
