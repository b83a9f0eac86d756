#include <doctest/doctest.h>

#include <filesystem>
#include <random>
#include <sstream>

#include "metabalance/errors.hpp"
#include "metabalance/io.hpp"
#include "metabalance/metrics.hpp"
#include "oracles.hpp"

using namespace metabalance;

namespace {

std::vector<std::size_t> ids(const std::vector<Candidate> &c) {
  std::vector<std::size_t> out;
  for (const auto &x : c)
    out.push_back(x.class_id);
  return out;
}

PairScores pair(std::size_t id, std::vector<double> scores, std::vector<std::size_t> gt) {
  return {id, std::move(scores), std::move(gt)};
}

} // namespace

TEST_CASE("constraint examples") {
  const std::vector<double> two{0.95, 0.8};
  const auto w = apply_constraint(two, Constraint::With);
  REQUIRE(w.size() == 1);
  CHECK(w[0] == Candidate{0, 0.95});

  const std::vector<double> three{0.95, 0.91, 0.2};
  CHECK(ids(apply_constraint(three, Constraint::Semi, 0.9)) == std::vector<std::size_t>{0, 1});
  CHECK(ids(apply_constraint(three, Constraint::None)) == std::vector<std::size_t>{0, 1, 2});

  const std::vector<double> tied{0.4, 0.7, 0.7};
  CHECK(ids(apply_constraint(tied, Constraint::With)) == std::vector<std::size_t>{1});
  // strictly above the threshold
  const std::vector<double> edge{0.9, 0.9000001};
  CHECK(ids(apply_constraint(edge, Constraint::Semi)) == std::vector<std::size_t>{1});
}

TEST_CASE("constraint names") {
  for (Constraint c : {Constraint::With, Constraint::Semi, Constraint::None})
    CHECK(parse_constraint(to_string(c)) == c);
  CHECK(parse_constraint("semi") == Constraint::Semi);
  CHECK_THROWS_AS(parse_constraint("maybe"), ArgumentError);
}

TEST_CASE("perfect predictor reaches recall one") {
  std::vector<EpisodeScores> eps(2);
  eps[0] = {0, {pair(0, {0.999, 0.001, 0.001}, {0}), pair(1, {0.001, 0.999, 0.999}, {1, 2})}};
  eps[1] = {1, {pair(2, {0.001, 0.001, 0.999}, {2})}};
  const RecallReport r = recall_at_k(eps, 3, Constraint::None);
  for (const auto &c : r.per_class)
    CHECK(*c.recall[0] == 1.0);
  CHECK(r.mean_recall[0] == 1.0);
}

TEST_CASE("half the ground truth hit gives recall one half") {
  // class 1 appears on two pairs; only one of them ranks in the top 1
  std::vector<EpisodeScores> eps{{0, {pair(0, {0.1, 0.8}, {1}), pair(1, {0.2, 0.6}, {1})}}};
  const RecallReport r = recall_at_k(eps, 1, Constraint::None);
  CHECK(*r.per_class[1].recall[0] == 0.5);
  CHECK_FALSE(r.per_class[0].recall[0].has_value());
  CHECK(r.mean_recall[0] == 0.5);
}

TEST_CASE("ties rank the lower pair id, then the lower class id, first") {
  std::vector<EpisodeScores> eps{{0, {pair(5, {0.5, 0.5}, {1}), pair(3, {0.5, 0.5}, {0})}}};
  // top 1 is (pair 3, class 0)
  RecallReport r = recall_at_k(eps, 1, Constraint::None);
  CHECK(*r.per_class[0].recall[0] == 1.0);
  CHECK(*r.per_class[1].recall[0] == 0.0);
  // top 3 adds (3, 1) and (5, 0): class 1 on pair 5 still missed
  r = recall_at_k(eps, 3, Constraint::None);
  CHECK(*r.per_class[1].recall[0] == 0.0);
}

TEST_CASE("bad arguments") {
  std::vector<EpisodeScores> eps{{0, {pair(0, {0.1, 0.8}, {1})}}};
  CHECK_THROWS_AS(recall_at_k(eps, 0, Constraint::None), ArgumentError);
  CHECK_THROWS_AS(recall_at_k(std::vector<EpisodeScores>{}, 1, Constraint::None), ArgumentError);
  std::vector<EpisodeScores> ragged{{0, {pair(0, {0.1, 0.8}, {1}), pair(1, {0.3}, {0})}}};
  CHECK_THROWS_AS(recall_at_k(ragged, 1, Constraint::None), ArgumentError);
  std::vector<EpisodeScores> bad_gt{{0, {pair(0, {0.1, 0.8}, {4})}}};
  CHECK_THROWS_AS(recall_at_k(bad_gt, 1, Constraint::None), ArgumentError);
}

TEST_CASE("recall matches a brute-force oracle on random tiny episodes") {
  std::mt19937_64 rng(101);
  for (std::size_t C = 2; C <= 5; ++C) {
    const auto eps = oracle::random_episodes(50, C, 4, rng);
    for (Constraint s : {Constraint::With, Constraint::Semi, Constraint::None}) {
      const std::vector<std::size_t> ks{1, 2, 5};
      const RecallReport r = recall_at_k(eps, ks, s);
      for (std::size_t ki = 0; ki < ks.size(); ++ki) {
        const auto expect = oracle::brute_recall(eps, C, ks[ki], s);
        for (std::size_t c = 0; c < C; ++c) {
          CAPTURE(C);
          CAPTURE(c);
          CHECK(r.per_class[c].recall[ki] == expect[c]);
        }
      }
    }
  }
}

TEST_CASE("mean recall is monotone in K and bounded") {
  std::mt19937_64 rng(102);
  for (int t = 0; t < 30; ++t) {
    const auto eps = oracle::random_episodes(10, 6, 8, rng);
    for (Constraint s : {Constraint::With, Constraint::Semi, Constraint::None}) {
      const std::vector<std::size_t> ks{1, 3, 7, 20};
      const RecallReport r = recall_at_k(eps, ks, s);
      for (std::size_t ki = 1; ki < ks.size(); ++ki)
        CHECK(r.mean_recall[ki] >= r.mean_recall[ki - 1]);
      for (const auto &c : r.per_class)
        for (const auto &v : c.recall)
          if (v) {
            CHECK(*v >= 0.0);
            CHECK(*v <= 1.0);
          }
    }
  }
}

TEST_CASE("mean recall is the unweighted mean over present classes") {
  std::mt19937_64 rng(103);
  const auto eps = oracle::random_episodes(20, 5, 4, rng);
  const RecallReport r = recall_at_k(eps, 2, Constraint::None);
  double sum = 0.0;
  std::size_t present = 0;
  for (const auto &c : r.per_class)
    if (c.recall[0]) {
      sum += *c.recall[0];
      ++present;
    }
  CHECK(r.mean_recall[0] == doctest::Approx(sum / present).epsilon(1e-15));
  const std::vector<std::size_t> all{0, 1, 2, 3, 4};
  CHECK(mean_recall_over(r, all, 2) == doctest::Approx(r.mean_recall[0]).epsilon(1e-15));
}

TEST_CASE("candidate sets nest on random score vectors") {
  std::mt19937_64 rng(104);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> width(2, 12);
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> s(width(rng));
    for (double &v : s)
      v = u(rng);
    const auto with = apply_constraint(s, Constraint::With);
    const auto semi = apply_constraint(s, Constraint::Semi);
    const auto none = apply_constraint(s, Constraint::None);
    CHECK(with.size() == 1);
    CHECK(none.size() == s.size());
    for (const auto &c : semi)
      CHECK(c.score > 0.9);
    std::size_t above = 0;
    for (double v : s)
      above += v > 0.9 ? 1 : 0;
    CHECK(semi.size() == above);
    if (with[0].score > 0.9)
      CHECK(std::find(semi.begin(), semi.end(), with[0]) != semi.end());
  }
}

TEST_CASE("per-class table ordering and format") {
  std::vector<EpisodeScores> eps{
      {0, {pair(0, {0.9, 0.1, 0.2}, {0}), pair(1, {0.8, 0.3, 0.1}, {0, 2})}},
      {1, {pair(2, {0.2, 0.7, 0.1}, {1}), pair(3, {0.1, 0.2, 0.6}, {2})}}};
  const std::vector<std::size_t> ks{1, 2};
  std::vector<RecallReport> reports{recall_at_k(eps, ks, Constraint::With),
                                    recall_at_k(eps, ks, Constraint::None)};
  const std::string csv = per_class_table(reports);
  std::istringstream in(csv);
  std::string header, first, second, third;
  std::getline(in, header);
  std::getline(in, first);
  std::getline(in, second);
  std::getline(in, third);
  CHECK(header == "class_id,count,freq,R@1/with_constraint,R@2/with_constraint,"
                  "R@1/no_constraint,R@2/no_constraint");
  // counts: class 0 -> 2, class 2 -> 2, class 1 -> 1; equal counts by class id
  CHECK(first.rfind("0,2,", 0) == 0);
  CHECK(second.rfind("2,2,", 0) == 0);
  CHECK(third.rfind("1,1,", 0) == 0);
}

TEST_CASE("bar chart is deterministic and degenerate reports are rejected") {
  std::vector<EpisodeScores> eps{{0, {pair(0, {0.9, 0.1}, {0}), pair(1, {0.2, 0.8}, {1})}}};
  const RecallReport r = recall_at_k(eps, 1, Constraint::With);
  const std::string a = bar_chart_svg(r, 1), b = bar_chart_svg(r, 1);
  CHECK(a == b);
  CHECK(a.find("<svg") != std::string::npos);
  CHECK(a.find("</svg>") != std::string::npos);
  CHECK_THROWS_AS(bar_chart_svg(RecallReport{}, 1), ArgumentError);
  CHECK_THROWS_AS(write_bar_chart_svg(r, 1, "/nonexistent-dir/x/chart.svg"), IoError);
}

TEST_CASE("equal recalls draw equal bars") {
  std::vector<EpisodeScores> eps{
      {0, {pair(0, {0.9, 0.1, 0.1}, {0}), pair(1, {0.1, 0.9, 0.1}, {1}), pair(2, {0.1, 0.1, 0.9}, {2})}}};
  const std::string svg = bar_chart_svg(recall_at_k(eps, 3, Constraint::With), 3);
  std::vector<std::string> heights;
  for (std::size_t pos = svg.find("height=\""); pos != std::string::npos;
       pos = svg.find("height=\"", pos + 1))
    heights.push_back(svg.substr(pos, svg.find('"', pos + 8) - pos));
  // the first height is the canvas; the bars follow
  REQUIRE(heights.size() >= 4);
  CHECK(heights[heights.size() - 1] == heights[heights.size() - 2]);
  CHECK(heights[heights.size() - 2] == heights[heights.size() - 3]);
}

TEST_CASE("report and prediction dump round trips") {
  std::mt19937_64 rng(105);
  const auto eps = oracle::random_episodes(6, 4, 3, rng);
  const std::vector<std::size_t> ks{1, 3};
  const RecallReport r = recall_at_k(eps, ks, Constraint::Semi);
  const RecallReport back = recall_report_from_json(to_json(r));
  CHECK(back.mean_recall == r.mean_recall);
  CHECK(back.per_class.size() == r.per_class.size());
  for (std::size_t c = 0; c < r.per_class.size(); ++c)
    CHECK(back.per_class[c].recall == r.per_class[c].recall);

  const auto parsed = read_prediction_dump(write_prediction_dump(eps));
  REQUIRE(parsed.size() == eps.size());
  for (std::size_t e = 0; e < eps.size(); ++e) {
    REQUIRE(parsed[e].pairs.size() == eps[e].pairs.size());
    for (std::size_t p = 0; p < eps[e].pairs.size(); ++p) {
      CHECK(parsed[e].pairs[p].scores == eps[e].pairs[p].scores);
      CHECK(parsed[e].pairs[p].gt == eps[e].pairs[p].gt);
    }
  }
  CHECK_THROWS_AS(read_prediction_dump("{not json}\n"), FormatError);
}
