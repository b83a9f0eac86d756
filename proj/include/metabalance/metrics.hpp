#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace metabalance {

/// How many predicates a subject-object pair may emit.
enum class Constraint {
  With, ///< at most one: the arg-max class
  Semi, ///< every class whose score exceeds the threshold
  None, ///< every class
};

inline constexpr double kSemiConstraintThreshold = 0.9;

std::string to_string(Constraint c);
/// Accepts "with_constraint"/"with", "semi_constraint"/"semi",
/// "no_constraint"/"no". Throws ArgumentError otherwise.
Constraint parse_constraint(const std::string &name);

struct PairScores {
  std::size_t pair_id = 0;
  std::vector<double> scores;   ///< one per class
  std::vector<std::size_t> gt;  ///< ground-truth class ids
};

/// All pairs of one scene; the unit over which predictions are ranked.
struct EpisodeScores {
  std::size_t scene_id = 0;
  std::vector<PairScores> pairs;
};

struct Candidate {
  std::size_t class_id = 0;
  double score = 0.0;
  friend bool operator==(const Candidate &, const Candidate &) = default;
};

/// Candidates a pair contributes under `strategy`, in class order.
std::vector<Candidate> apply_constraint(std::span<const double> scores, Constraint strategy,
                                        double threshold = kSemiConstraintThreshold);

struct ClassRecall {
  std::size_t class_id = 0;
  std::size_t count = 0;     ///< ground-truth (pair, class) occurrences
  std::size_t episodes = 0;  ///< V_c, episodes containing the class
  /// R@K per entry of k_values; empty when episodes == 0.
  std::vector<std::optional<double>> recall;
};

struct RecallReport {
  Constraint strategy = Constraint::With;
  std::vector<std::size_t> k_values;
  std::size_t total_pairs = 0;
  std::vector<ClassRecall> per_class;
  /// mR@K per entry of k_values, averaged over classes with episodes > 0.
  std::vector<double> mean_recall;

  std::size_t k_index(std::size_t k) const;
  double mean_recall_at(std::size_t k) const { return mean_recall[k_index(k)]; }
};

/// Per-class and mean Recall@K. Candidates are pooled per episode and ranked
/// by score, ties going to the lower pair id and then the lower class id.
/// Throws ArgumentError for K == 0, no episodes, ragged scores or
/// out-of-range ground-truth ids.
RecallReport recall_at_k(std::span<const EpisodeScores> episodes,
                         std::span<const std::size_t> k_values, Constraint strategy,
                         double threshold = kSemiConstraintThreshold);
RecallReport recall_at_k(std::span<const EpisodeScores> episodes, std::size_t k,
                         Constraint strategy, double threshold = kSemiConstraintThreshold);

/// Mean R@K over the listed classes, skipping those with no episodes.
double mean_recall_over(const RecallReport &report, std::span<const std::size_t> classes,
                        std::size_t k);

/// CSV with header `class_id,count,freq,R@<K>/<strategy>...`, rows from the
/// most to the least frequent class (ties by class id). Reports must share
/// class count and totals.
std::string per_class_table(std::span<const RecallReport> reports);

/// Recall bars, one per class from head to tail, for one K. Byte-for-byte
/// deterministic. Throws ArgumentError on an empty report, IoError if the
/// file cannot be written.
std::string bar_chart_svg(const RecallReport &report, std::size_t k);
void write_bar_chart_svg(const RecallReport &report, std::size_t k,
                         const std::filesystem::path &path);

nlohmann::json to_json(const RecallReport &report);
RecallReport recall_report_from_json(const nlohmann::json &j);

/// Metrics file: {"k_values": [...], "strategies": {name: report, ...}, ...}.
nlohmann::json metrics_json(std::span<const RecallReport> reports);

/// Prediction dump: one JSON object per line,
/// {"scene_id":int, "pair_id":int, "scores":[C floats], "gt":[class ids]}.
std::string write_prediction_dump(std::span<const EpisodeScores> episodes);
/// Groups lines into episodes ordered by scene id, pairs by pair id.
std::vector<EpisodeScores> read_prediction_dump(const std::string &text);

} // namespace metabalance
