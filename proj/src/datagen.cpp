#include "metabalance/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include <nlohmann/json.hpp>

#include "metabalance/errors.hpp"
#include "metabalance/io.hpp"

namespace metabalance {

namespace {

constexpr std::uint64_t kPrototypeStream = 1;
constexpr std::uint64_t kLabelStream = 2;
constexpr std::uint64_t kFeatureStream = 3;
constexpr std::uint64_t kHoldoutLabelStream = 4;
constexpr std::uint64_t kHoldoutFeatureStream = 5;

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream),
                    static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

void validate(const GenConfig &cfg) {
  if (cfg.num_classes < 2)
    throw GenerationError("need at least two classes");
  if (cfg.feature_dim == 0)
    throw GenerationError("feature_dim must be positive");
  if (cfg.num_instances < 2 * cfg.num_classes)
    throw GenerationError("num_instances must be at least twice num_classes so "
                          "every class can have two instances");
  if (!(cfg.zipf_s >= 0.0) || !std::isfinite(cfg.zipf_s))
    throw GenerationError("zipf_s must be a finite non-negative number");
  if (!(cfg.cooccur_p >= 0.0 && cfg.cooccur_p <= 1.0))
    throw GenerationError("cooccur_p must lie in [0, 1]");
  if (!(cfg.noise_sigma >= 0.0) || !std::isfinite(cfg.noise_sigma))
    throw GenerationError("noise_sigma must be non-negative");
  if (cfg.scene_size == 0)
    throw GenerationError("scene_size must be positive");
  if (cfg.target_ir) {
    const double ir = *cfg.target_ir;
    if (!(ir >= 1.0) || !std::isfinite(ir))
      throw GenerationError("target_ir must be at least 1");
    if (ir > static_cast<double>(cfg.num_instances) / 2.0)
      throw GenerationError("target_ir unsatisfiable: with every class holding at "
                            "least two instances the ratio cannot exceed N/2");
  }
}

std::vector<double> cumulative(std::size_t count, double s) {
  std::vector<double> cdf(count);
  double acc = 0.0;
  for (std::size_t r = 0; r < count; ++r) {
    acc += std::pow(static_cast<double>(r + 1), -s);
    cdf[r] = acc;
  }
  for (double &v : cdf)
    v /= acc;
  return cdf;
}

std::size_t inverse_cdf(const std::vector<double> &cdf, double u) {
  const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  return std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
}

// Moves single-label instances from the most frequent class to any class
// with fewer than two instances.
void ensure_two_per_class(Matrix &labels) {
  const std::size_t n = labels.rows(), classes = labels.cols();
  auto counts = class_counts(labels);
  for (std::size_t c = 0; c < classes; ++c) {
    while (counts[c] < 2) {
      const std::size_t donor_class = static_cast<std::size_t>(
          std::max_element(counts.begin(), counts.end()) - counts.begin());
      bool moved = false;
      for (std::size_t i = n; i-- > 0;) {
        const auto row = labels.row(i);
        if (row[donor_class] < 0.5 || std::count(row.begin(), row.end(), 1.0) != 1)
          continue;
        row[donor_class] = 0.0;
        row[c] = 1.0;
        --counts[donor_class];
        ++counts[c];
        moved = true;
        break;
      }
      if (!moved || counts[donor_class] < 2)
        throw GenerationError("cannot give class " + std::to_string(c) +
                              " two instances");
    }
  }
}

Matrix sample_labels(std::size_t n, std::size_t classes, double s, double cooccur_p,
                     std::mt19937_64 rng) {
  const auto cdf = cumulative(classes, s);
  const std::size_t head = head_class_count(classes);
  const auto head_cdf = cumulative(head, s);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Matrix labels(n, classes);
  for (std::size_t i = 0; i < n; ++i) {
    // Always three draws per instance so the stream stays aligned for any s.
    const double u_primary = unit(rng);
    const double u_coin = unit(rng);
    const double u_head = unit(rng);
    const std::size_t primary = inverse_cdf(cdf, u_primary);
    labels(i, primary) = 1.0;
    if (primary >= head && u_coin < cooccur_p)
      labels(i, inverse_cdf(head_cdf, u_head)) = 1.0;
  }
  ensure_two_per_class(labels);
  return labels;
}

Matrix draw_prototypes(std::size_t classes, std::size_t dim, std::mt19937_64 rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix protos(classes, dim);
  for (std::size_t c = 0; c < classes; ++c) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (double &v : protos.row(c)) {
        v = normal(rng);
        norm += v * v;
      }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (double &v : protos.row(c))
      v /= norm;
  }
  return protos;
}

Matrix synthesize_features(const Matrix &labels, const Matrix &prototypes, double sigma,
                           std::mt19937_64 rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix features(labels.rows(), prototypes.cols());
  for (std::size_t i = 0; i < labels.rows(); ++i) {
    auto x = features.row(i);
    double active = 0.0;
    for (std::size_t c = 0; c < labels.cols(); ++c) {
      if (labels(i, c) < 0.5)
        continue;
      active += 1.0;
      for (std::size_t k = 0; k < x.size(); ++k)
        x[k] += prototypes(c, k);
    }
    for (double &v : x)
      v = v / active + sigma * normal(rng);
  }
  return features;
}

std::vector<std::size_t> contiguous_scenes(std::size_t n, std::size_t scene_size) {
  std::vector<std::size_t> scene_of(n);
  for (std::size_t i = 0; i < n; ++i)
    scene_of[i] = i / scene_size;
  return scene_of;
}

double solve_zipf(const GenConfig &cfg) {
  const double target = *cfg.target_ir;
  const auto rng = make_rng(cfg.seed, kLabelStream);
  auto ir_at = [&](double s) {
    return imbalance_ratio(
        sample_labels(cfg.num_instances, cfg.num_classes, s, cfg.cooccur_p, rng));
  };
  double lo = 0.0, hi = 1.0;
  while (ir_at(hi) < target) {
    lo = hi;
    hi *= 2.0;
    if (hi > 64.0)
      throw GenerationError("target_ir unreachable for this N and C");
  }
  double best_s = hi, best_err = std::abs(std::log(ir_at(hi) / target));
  for (int iter = 0; iter < 60 && best_err > 0.02; ++iter) {
    const double mid = 0.5 * (lo + hi);
    const double ir = ir_at(mid);
    const double err = std::abs(std::log(ir / target));
    if (err < best_err) {
      best_err = err;
      best_s = mid;
    }
    (ir < target ? lo : hi) = mid;
  }
  const double achieved = ir_at(best_s);
  if (achieved < 0.9 * target || achieved > 1.1 * target)
    throw GenerationError("target_ir " + std::to_string(target) +
                          " unsatisfiable: closest achievable ratio is " +
                          std::to_string(achieved));
  return best_s;
}

} // namespace

std::size_t head_class_count(std::size_t num_classes) {
  return std::max<std::size_t>(1, (num_classes + 4) / 5);
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.features = features.select_rows(indices);
  out.labels = labels.select_rows(indices);
  out.scene_of.reserve(indices.size());
  for (std::size_t i : indices)
    out.scene_of.push_back(scene_of.at(i));
  out.class_prototypes = class_prototypes;
  out.seed = seed;
  out.scene_size = scene_size;
  out.zipf_s = zipf_s;
  return out;
}

Dataset generate(const GenConfig &cfg) {
  validate(cfg);
  Dataset ds;
  ds.seed = cfg.seed;
  ds.scene_size = cfg.scene_size;
  ds.zipf_s = cfg.target_ir ? solve_zipf(cfg) : cfg.zipf_s;
  ds.class_prototypes = draw_prototypes(cfg.num_classes, cfg.feature_dim,
                                        make_rng(cfg.seed, kPrototypeStream));
  ds.labels = sample_labels(cfg.num_instances, cfg.num_classes, ds.zipf_s, cfg.cooccur_p,
                            make_rng(cfg.seed, kLabelStream));
  ds.features = synthesize_features(ds.labels, ds.class_prototypes, cfg.noise_sigma,
                                    make_rng(cfg.seed, kFeatureStream));
  ds.scene_of = contiguous_scenes(cfg.num_instances, cfg.scene_size);
  return ds;
}

Dataset generate_holdout(const GenConfig &cfg, const Dataset &base, std::size_t n) {
  if (n < 2 * base.num_classes())
    throw GenerationError("holdout size must be at least twice the class count");
  Dataset ds;
  ds.seed = cfg.seed;
  ds.scene_size = cfg.scene_size;
  ds.zipf_s = base.zipf_s;
  ds.class_prototypes = base.class_prototypes;
  ds.labels = sample_labels(n, base.num_classes(), base.zipf_s, cfg.cooccur_p,
                            make_rng(cfg.seed, kHoldoutLabelStream));
  ds.features = synthesize_features(ds.labels, ds.class_prototypes, cfg.noise_sigma,
                                    make_rng(cfg.seed, kHoldoutFeatureStream));
  ds.scene_of = contiguous_scenes(n, cfg.scene_size);
  return ds;
}

std::vector<std::size_t> class_counts(const Matrix &labels) {
  std::vector<std::size_t> counts(labels.cols(), 0);
  for (std::size_t r = 0; r < labels.rows(); ++r)
    for (std::size_t c = 0; c < labels.cols(); ++c)
      if (labels(r, c) > 0.5)
        ++counts[c];
  return counts;
}

double imbalance_ratio(std::span<const std::size_t> counts) {
  if (counts.empty())
    throw ArgumentError("imbalance_ratio of zero classes");
  for (std::size_t c = 0; c < counts.size(); ++c)
    if (counts[c] == 0)
      throw MissingClassError(c, "label counts");
  const auto [mn, mx] = std::minmax_element(counts.begin(), counts.end());
  return static_cast<double>(*mx) / static_cast<double>(*mn);
}

double imbalance_ratio(const Matrix &labels) {
  const auto counts = class_counts(labels);
  return imbalance_ratio(std::span<const std::size_t>(counts));
}

// ---------------------------------------------------------------------------
// On-disk format

namespace {

constexpr int kFormatVersion = 1;
constexpr const char *kDataFiles[] = {"features.bin", "labels.bin", "prototypes.bin",
                                      "scenes.json"};

std::vector<std::uint8_t> encode_labels(const Matrix &labels) {
  std::vector<std::uint8_t> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    out[i] = labels.data()[i] > 0.5 ? 1 : 0;
  return out;
}

std::string encode_scenes(const std::vector<std::size_t> &scene_of) {
  std::map<std::size_t, std::vector<std::size_t>> scenes;
  for (std::size_t i = 0; i < scene_of.size(); ++i)
    scenes[scene_of[i]].push_back(i);
  nlohmann::json arr = nlohmann::json::array();
  for (const auto &[id, members] : scenes)
    arr.push_back({{"scene_id", id}, {"instance_indices", members}});
  return arr.dump() + "\n";
}

std::vector<std::uint8_t> as_bytes(const std::string &s) { return {s.begin(), s.end()}; }

} // namespace

void save_dataset(const Dataset &ds, const std::filesystem::path &dir) {
  std::filesystem::create_directories(dir);
  const std::map<std::string, std::vector<std::uint8_t>> files = {
      {"features.bin", io::encode_f64_le(ds.features.data())},
      {"labels.bin", encode_labels(ds.labels)},
      {"prototypes.bin", io::encode_f64_le(ds.class_prototypes.data())},
      {"scenes.json", as_bytes(encode_scenes(ds.scene_of))},
  };
  nlohmann::json manifest;
  manifest["version"] = kFormatVersion;
  manifest["n"] = ds.size();
  manifest["d"] = ds.feature_dim();
  manifest["c"] = ds.num_classes();
  manifest["seed"] = ds.seed;
  manifest["scene_size"] = ds.scene_size;
  manifest["zipf_s"] = ds.zipf_s;
  manifest["sha256"] = nlohmann::json::object();
  for (const auto &[name, bytes] : files) {
    io::write_bytes(dir / name, bytes);
    manifest["sha256"][name] = io::sha256_hex(bytes);
  }
  io::write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path &dir) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(io::read_text(dir / "manifest.json"));
  } catch (const nlohmann::json::exception &e) {
    throw FormatError("manifest.json: " + std::string(e.what()));
  }
  if (!manifest.contains("version") || manifest["version"] != kFormatVersion)
    throw FormatError("unsupported dataset version (expected " +
                      std::to_string(kFormatVersion) + ")");

  std::map<std::string, std::vector<std::uint8_t>> files;
  for (const char *name : kDataFiles) {
    auto bytes = io::read_bytes(dir / name);
    const auto expected = manifest["sha256"].value(name, std::string{});
    if (io::sha256_hex(bytes) != expected)
      throw FormatError(std::string("checksum mismatch for ") + name);
    files[name] = std::move(bytes);
  }

  Dataset ds;
  try {
    const auto n = manifest.at("n").get<std::size_t>();
    const auto d = manifest.at("d").get<std::size_t>();
    const auto c = manifest.at("c").get<std::size_t>();
    ds.seed = manifest.at("seed").get<std::uint64_t>();
    ds.scene_size = manifest.at("scene_size").get<std::size_t>();
    ds.zipf_s = manifest.value("zipf_s", 0.0);

    auto features = io::decode_f64_le(files["features.bin"]);
    if (features.size() != n * d)
      throw FormatError("features.bin truncated or oversized");
    ds.features = Matrix(n, d, std::move(features));

    const auto &label_bytes = files["labels.bin"];
    if (label_bytes.size() != n * c)
      throw FormatError("labels.bin truncated or oversized");
    ds.labels = Matrix(n, c);
    for (std::size_t i = 0; i < label_bytes.size(); ++i) {
      if (label_bytes[i] > 1)
        throw FormatError("labels.bin holds a value other than 0 or 1");
      ds.labels.data()[i] = label_bytes[i];
    }

    auto protos = io::decode_f64_le(files["prototypes.bin"]);
    if (protos.size() != c * d)
      throw FormatError("prototypes.bin truncated or oversized");
    ds.class_prototypes = Matrix(c, d, std::move(protos));

    const auto &scene_bytes = files["scenes.json"];
    const auto scenes = nlohmann::json::parse(scene_bytes.begin(), scene_bytes.end());
    ds.scene_of.assign(n, std::size_t(-1));
    for (const auto &scene : scenes) {
      const auto id = scene.at("scene_id").get<std::size_t>();
      for (const auto &idx : scene.at("instance_indices")) {
        const auto i = idx.get<std::size_t>();
        if (i >= n || ds.scene_of[i] != std::size_t(-1))
          throw FormatError("scenes.json indexes an instance twice or out of range");
        ds.scene_of[i] = id;
      }
    }
    if (std::count(ds.scene_of.begin(), ds.scene_of.end(), std::size_t(-1)) != 0)
      throw FormatError("scenes.json does not cover every instance");
  } catch (const nlohmann::json::exception &e) {
    throw FormatError("dataset manifest: " + std::string(e.what()));
  }
  return ds;
}

} // namespace metabalance
