#include "metabalance/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "metabalance/errors.hpp"
#include "metabalance/io.hpp"

namespace metabalance {

std::string to_string(Constraint c) {
  switch (c) {
  case Constraint::With:
    return "with_constraint";
  case Constraint::Semi:
    return "semi_constraint";
  case Constraint::None:
    return "no_constraint";
  }
  return "unknown";
}

Constraint parse_constraint(const std::string &name) {
  if (name == "with_constraint" || name == "with")
    return Constraint::With;
  if (name == "semi_constraint" || name == "semi")
    return Constraint::Semi;
  if (name == "no_constraint" || name == "no")
    return Constraint::None;
  throw ArgumentError("unknown constraint strategy '" + name + "'");
}

std::vector<Candidate> apply_constraint(std::span<const double> scores, Constraint strategy,
                                        double threshold) {
  std::vector<Candidate> out;
  switch (strategy) {
  case Constraint::With: {
    if (scores.empty())
      break;
    // max_element keeps the first maximum, i.e. the lowest class id on ties.
    const auto it = std::max_element(scores.begin(), scores.end());
    out.push_back({static_cast<std::size_t>(it - scores.begin()), *it});
    break;
  }
  case Constraint::Semi:
    for (std::size_t c = 0; c < scores.size(); ++c)
      if (scores[c] > threshold)
        out.push_back({c, scores[c]});
    break;
  case Constraint::None:
    for (std::size_t c = 0; c < scores.size(); ++c)
      out.push_back({c, scores[c]});
    break;
  }
  return out;
}

std::size_t RecallReport::k_index(std::size_t k) const {
  const auto it = std::find(k_values.begin(), k_values.end(), k);
  if (it == k_values.end())
    throw ArgumentError("K=" + std::to_string(k) + " not in report");
  return static_cast<std::size_t>(it - k_values.begin());
}

namespace {

struct RankedCandidate {
  double score;
  std::size_t pair_id;
  std::size_t class_id;
  std::size_t pair_index;
};

bool ranks_before(const RankedCandidate &a, const RankedCandidate &b) {
  if (a.score != b.score)
    return a.score > b.score;
  if (a.pair_id != b.pair_id)
    return a.pair_id < b.pair_id;
  return a.class_id < b.class_id;
}

std::size_t class_count_of(std::span<const EpisodeScores> episodes) {
  for (const auto &ep : episodes)
    for (const auto &p : ep.pairs)
      return p.scores.size();
  return 0;
}

} // namespace

RecallReport recall_at_k(std::span<const EpisodeScores> episodes,
                         std::span<const std::size_t> k_values, Constraint strategy,
                         double threshold) {
  if (episodes.empty())
    throw ArgumentError("recall_at_k needs at least one episode");
  if (k_values.empty())
    throw ArgumentError("recall_at_k needs at least one K");
  for (std::size_t k : k_values)
    if (k == 0)
      throw ArgumentError("K must be positive");
  const std::size_t classes = class_count_of(episodes);
  if (classes == 0)
    throw ArgumentError("episodes contain no scored pairs");

  RecallReport report;
  report.strategy = strategy;
  report.k_values.assign(k_values.begin(), k_values.end());
  report.per_class.resize(classes);
  std::vector<std::vector<double>> ratio_sum(classes, std::vector<double>(k_values.size(), 0.0));
  for (std::size_t c = 0; c < classes; ++c)
    report.per_class[c].class_id = c;
  const std::size_t max_k = *std::max_element(k_values.begin(), k_values.end());

  for (const auto &ep : episodes) {
    std::vector<std::set<std::size_t>> gt_sets;
    std::vector<std::size_t> gt_per_class(classes, 0);
    std::vector<RankedCandidate> pool;
    for (std::size_t pi = 0; pi < ep.pairs.size(); ++pi) {
      const PairScores &pair = ep.pairs[pi];
      if (pair.scores.size() != classes)
        throw ArgumentError("pair " + std::to_string(pair.pair_id) + " has " +
                            std::to_string(pair.scores.size()) + " scores, expected " +
                            std::to_string(classes));
      std::set<std::size_t> gt;
      for (std::size_t c : pair.gt) {
        if (c >= classes)
          throw ArgumentError("ground-truth class " + std::to_string(c) + " out of range");
        gt.insert(c);
      }
      for (std::size_t c : gt)
        ++gt_per_class[c];
      gt_sets.push_back(std::move(gt));
      for (const Candidate &cand : apply_constraint(pair.scores, strategy, threshold))
        pool.push_back({cand.score, pair.pair_id, cand.class_id, pi});
    }
    report.total_pairs += ep.pairs.size();

    const std::size_t keep = std::min(max_k, pool.size());
    std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(keep), pool.end(),
                      ranks_before);

    for (std::size_t ki = 0; ki < k_values.size(); ++ki) {
      std::vector<std::size_t> hits(classes, 0);
      const std::size_t top = std::min(k_values[ki], pool.size());
      for (std::size_t r = 0; r < top; ++r)
        if (gt_sets[pool[r].pair_index].count(pool[r].class_id))
          ++hits[pool[r].class_id];
      for (std::size_t c = 0; c < classes; ++c)
        if (gt_per_class[c] > 0)
          ratio_sum[c][ki] += static_cast<double>(hits[c]) / static_cast<double>(gt_per_class[c]);
    }
    for (std::size_t c = 0; c < classes; ++c) {
      report.per_class[c].count += gt_per_class[c];
      if (gt_per_class[c] > 0)
        ++report.per_class[c].episodes;
    }
  }

  report.mean_recall.assign(k_values.size(), 0.0);
  std::size_t present = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    ClassRecall &cr = report.per_class[c];
    if (cr.episodes == 0) {
      cr.recall.assign(k_values.size(), std::nullopt);
      continue;
    }
    ++present;
    for (std::size_t ki = 0; ki < k_values.size(); ++ki) {
      const double r = ratio_sum[c][ki] / static_cast<double>(cr.episodes);
      cr.recall.push_back(r);
      report.mean_recall[ki] += r;
    }
  }
  if (present == 0)
    throw ArgumentError("no episode carries any ground truth");
  for (double &m : report.mean_recall)
    m /= static_cast<double>(present);
  return report;
}

RecallReport recall_at_k(std::span<const EpisodeScores> episodes, std::size_t k,
                         Constraint strategy, double threshold) {
  const std::size_t ks[] = {k};
  return recall_at_k(episodes, ks, strategy, threshold);
}

double mean_recall_over(const RecallReport &report, std::span<const std::size_t> classes,
                        std::size_t k) {
  const std::size_t ki = report.k_index(k);
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t c : classes) {
    const auto &r = report.per_class.at(c).recall;
    if (!r.empty() && r[ki]) {
      acc += *r[ki];
      ++n;
    }
  }
  if (n == 0)
    throw ArgumentError("none of the requested classes has ground truth");
  return acc / static_cast<double>(n);
}

namespace {

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::vector<std::size_t> head_to_tail_order(const RecallReport &report) {
  std::vector<std::size_t> order(report.per_class.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return report.per_class[a].count > report.per_class[b].count;
  });
  return order;
}

} // namespace

std::string per_class_table(std::span<const RecallReport> reports) {
  if (reports.empty())
    throw ArgumentError("per_class_table needs at least one report");
  const RecallReport &first = reports.front();
  for (const auto &r : reports)
    if (r.per_class.size() != first.per_class.size() || r.total_pairs != first.total_pairs)
      throw ArgumentError("reports cover different evaluation sets");

  std::ostringstream out;
  out << "class_id,count,freq";
  for (const auto &r : reports)
    for (std::size_t k : r.k_values)
      out << ",R@" << k << "/" << to_string(r.strategy);
  out << "\n";
  for (std::size_t c : head_to_tail_order(first)) {
    const ClassRecall &cr = first.per_class[c];
    const double freq = first.total_pairs
                            ? static_cast<double>(cr.count) / static_cast<double>(first.total_pairs)
                            : 0.0;
    out << cr.class_id << "," << cr.count << "," << fixed6(freq);
    for (const auto &r : reports)
      for (std::size_t ki = 0; ki < r.k_values.size(); ++ki) {
        const auto &rec = r.per_class[c].recall;
        out << "," << (!rec.empty() && rec[ki] ? fixed6(*rec[ki]) : std::string("NA"));
      }
    out << "\n";
  }
  return out.str();
}

std::string bar_chart_svg(const RecallReport &report, std::size_t k) {
  if (report.per_class.empty())
    throw ArgumentError("cannot chart a report without classes");
  const std::size_t ki = report.k_index(k);
  const auto order = head_to_tail_order(report);

  constexpr int kBarWidth = 24, kGap = 8, kPlotHeight = 200, kMarginLeft = 48,
                kMarginTop = 32, kMarginBottom = 48;
  const int width = kMarginLeft + static_cast<int>(order.size()) * (kBarWidth + kGap) + kGap;
  const int height = kMarginTop + kPlotHeight + kMarginBottom;
  const int base_y = kMarginTop + kPlotHeight;

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n"
      << "<text x=\"" << kMarginLeft << "\" y=\"20\" font-family=\"sans-serif\" "
      << "font-size=\"12\">R@" << k << " per class (" << to_string(report.strategy)
      << "), head to tail</text>\n"
      << "<line x1=\"" << kMarginLeft << "\" y1=\"" << base_y << "\" x2=\"" << width
      << "\" y2=\"" << base_y << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << kMarginLeft << "\" y1=\"" << kMarginTop << "\" x2=\""
      << kMarginLeft << "\" y2=\"" << base_y << "\" stroke=\"black\"/>\n";
  for (int tick = 0; tick <= 4; ++tick) {
    const double frac = tick / 4.0;
    const int y = base_y - static_cast<int>(frac * kPlotHeight);
    svg << "<text x=\"4\" y=\"" << y + 4 << "\" font-family=\"sans-serif\" font-size=\"10\">"
        << fixed6(frac).substr(0, 4) << "</text>\n";
  }
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    const ClassRecall &cr = report.per_class[order[pos]];
    const int x = kMarginLeft + kGap + static_cast<int>(pos) * (kBarWidth + kGap);
    const bool defined = !cr.recall.empty() && cr.recall[ki].has_value();
    const double r = defined ? *cr.recall[ki] : 0.0;
    char bar_h[32];
    std::snprintf(bar_h, sizeof bar_h, "%.3f", r * kPlotHeight);
    char bar_y[32];
    std::snprintf(bar_y, sizeof bar_y, "%.3f", base_y - r * kPlotHeight);
    svg << "<rect x=\"" << x << "\" y=\"" << bar_y << "\" width=\"" << kBarWidth
        << "\" height=\"" << bar_h << "\" fill=\"" << (defined ? "#4878a8" : "#cccccc")
        << "\"><title>class " << cr.class_id << ": count " << cr.count << ", R@" << k << " "
        << (defined ? fixed6(r) : std::string("NA")) << "</title></rect>\n"
        << "<text x=\"" << x + kBarWidth / 2 << "\" y=\"" << base_y + 14
        << "\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">"
        << cr.class_id << "</text>\n"
        << "<text x=\"" << x + kBarWidth / 2 << "\" y=\"" << base_y + 28
        << "\" font-family=\"sans-serif\" font-size=\"8\" text-anchor=\"middle\">" << cr.count
        << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void write_bar_chart_svg(const RecallReport &report, std::size_t k,
                         const std::filesystem::path &path) {
  io::write_text(path, bar_chart_svg(report, k));
}

nlohmann::json to_json(const RecallReport &report) {
  nlohmann::json j;
  j["strategy"] = to_string(report.strategy);
  j["k_values"] = report.k_values;
  j["total_pairs"] = report.total_pairs;
  nlohmann::json mr = nlohmann::json::object();
  for (std::size_t ki = 0; ki < report.k_values.size(); ++ki)
    mr[std::to_string(report.k_values[ki])] = report.mean_recall[ki];
  j["mR"] = mr;
  j["per_class"] = nlohmann::json::array();
  for (const ClassRecall &cr : report.per_class) {
    nlohmann::json row;
    row["class_id"] = cr.class_id;
    row["count"] = cr.count;
    row["episodes"] = cr.episodes;
    nlohmann::json rec = nlohmann::json::object();
    for (std::size_t ki = 0; ki < report.k_values.size(); ++ki) {
      const auto key = std::to_string(report.k_values[ki]);
      if (!cr.recall.empty() && cr.recall[ki])
        rec[key] = *cr.recall[ki];
      else
        rec[key] = nullptr;
    }
    row["recall"] = rec;
    j["per_class"].push_back(row);
  }
  return j;
}

RecallReport recall_report_from_json(const nlohmann::json &j) {
  try {
    RecallReport r;
    r.strategy = parse_constraint(j.at("strategy").get<std::string>());
    r.k_values = j.at("k_values").get<std::vector<std::size_t>>();
    r.total_pairs = j.at("total_pairs").get<std::size_t>();
    for (std::size_t k : r.k_values)
      r.mean_recall.push_back(j.at("mR").at(std::to_string(k)).get<double>());
    for (const auto &row : j.at("per_class")) {
      ClassRecall cr;
      cr.class_id = row.at("class_id").get<std::size_t>();
      cr.count = row.at("count").get<std::size_t>();
      cr.episodes = row.at("episodes").get<std::size_t>();
      if (cr.episodes > 0)
        for (std::size_t k : r.k_values) {
          const auto &v = row.at("recall").at(std::to_string(k));
          cr.recall.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
        }
      r.per_class.push_back(std::move(cr));
    }
    return r;
  } catch (const nlohmann::json::exception &e) {
    throw FormatError("recall report: " + std::string(e.what()));
  }
}

nlohmann::json metrics_json(std::span<const RecallReport> reports) {
  nlohmann::json j;
  j["k_values"] = reports.empty() ? std::vector<std::size_t>{} : reports.front().k_values;
  j["strategies"] = nlohmann::json::object();
  for (const auto &r : reports)
    j["strategies"][to_string(r.strategy)] = to_json(r);
  return j;
}

std::string write_prediction_dump(std::span<const EpisodeScores> episodes) {
  std::string out;
  for (const auto &ep : episodes)
    for (const auto &p : ep.pairs) {
      nlohmann::json line;
      line["scene_id"] = ep.scene_id;
      line["pair_id"] = p.pair_id;
      line["scores"] = p.scores;
      line["gt"] = p.gt;
      out += line.dump();
      out += '\n';
    }
  return out;
}

std::vector<EpisodeScores> read_prediction_dump(const std::string &text) {
  std::map<std::size_t, EpisodeScores> by_scene;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos)
      continue;
    try {
      const auto j = nlohmann::json::parse(line);
      PairScores p;
      p.pair_id = j.at("pair_id").get<std::size_t>();
      p.scores = j.at("scores").get<std::vector<double>>();
      p.gt = j.at("gt").get<std::vector<std::size_t>>();
      const auto scene = j.at("scene_id").get<std::size_t>();
      auto &ep = by_scene[scene];
      ep.scene_id = scene;
      ep.pairs.push_back(std::move(p));
    } catch (const nlohmann::json::exception &e) {
      throw FormatError("prediction dump line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  std::vector<EpisodeScores> out;
  for (auto &[id, ep] : by_scene) {
    std::stable_sort(ep.pairs.begin(), ep.pairs.end(),
                     [](const PairScores &a, const PairScores &b) { return a.pair_id < b.pair_id; });
    out.push_back(std::move(ep));
  }
  return out;
}

} // namespace metabalance
