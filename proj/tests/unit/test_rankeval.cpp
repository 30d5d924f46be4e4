#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "buglocate/rankeval.hpp"
#include "oracles.hpp"

using namespace buglocate;
using rankeval::RankedList;
using rankeval::ScoredFile;

namespace {

RankedList make(std::vector<bool> flags) {
  std::vector<ScoredFile> files;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    files.push_back({"f" + std::to_string(i), static_cast<double>(flags.size() - i), flags[i]});
  }
  return rankeval::rank_files("b", files);
}

std::optional<double> auc_of(const std::vector<double>& s, const std::vector<bool>& l) {
  std::unique_ptr<bool[]> flags(new bool[l.size()]);
  for (std::size_t i = 0; i < l.size(); ++i) flags[i] = l[i];
  return rankeval::auc(s, std::span<const bool>(flags.get(), l.size()));
}

}  // namespace

TEST(RankFiles, TiesBrokenByFileId) {
  const auto r = rankeval::rank_files("b", {{"c", 1.0, false}, {"a", 1.0, false}, {"b", 2.0, true}});
  ASSERT_EQ(r.files.size(), 3u);
  EXPECT_EQ(r.files[0].file_id, "b");
  EXPECT_EQ(r.files[1].file_id, "a");
  EXPECT_EQ(r.files[2].file_id, "c");
}

TEST(AveragePrecision, Examples) {
  EXPECT_DOUBLE_EQ(*rankeval::average_precision(make({true, false, true})), (1.0 + 2.0 / 3.0) / 2.0);
  EXPECT_DOUBLE_EQ(*rankeval::average_precision(make({true})), 1.0);
  EXPECT_FALSE(rankeval::average_precision(make({false, false})).has_value());
}

TEST(Mrr, Examples) {
  const std::vector<RankedList> lists = {make({false, true}), make({true}), make({false})};
  EXPECT_DOUBLE_EQ(*rankeval::mrr(lists), 0.75);
  EXPECT_FALSE(rankeval::mrr(std::vector<RankedList>{make({false})}).has_value());
}

TEST(TopK, Examples) {
  const std::vector<RankedList> lists = {make({false, false, true}), make({true, false})};
  EXPECT_DOUBLE_EQ(*rankeval::top_k_rate(lists, 1), 0.5);
  EXPECT_DOUBLE_EQ(*rankeval::top_k_rate(lists, 3), 1.0);
  EXPECT_THROW(rankeval::top_k_rate(lists, 0), InputError);
}

TEST(Auc, Examples) {
  EXPECT_DOUBLE_EQ(*auc_of({0.9, 0.1}, {true, false}), 1.0);
  EXPECT_DOUBLE_EQ(*auc_of({0.1, 0.9}, {true, false}), 0.0);
  EXPECT_DOUBLE_EQ(*auc_of({0.5, 0.5}, {true, false}), 0.5);
  EXPECT_FALSE(auc_of({0.5, 0.4}, {true, true}).has_value());
}

TEST(Metrics, MatchBruteForceOracle) {
  Rng rng(17);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t bugs = 1 + rng.below(5);
    std::vector<rankeval::PairPrediction> preds;
    std::vector<std::vector<oracle::File>> groups(bugs);
    for (std::size_t b = 0; b < bugs; ++b) {
      const std::size_t files = 1 + rng.below(8);
      for (std::size_t f = 0; f < files; ++f) {
        // coarse scores so that ties are common
        const double score = static_cast<double>(rng.below(4)) / 4.0;
        const bool rel = rng.bernoulli(0.3);
        const std::string fid = "f" + std::to_string(rng.below(100)) + "_" + std::to_string(f);
        preds.push_back({"b" + std::to_string(b), fid, score, rel});
        groups[b].push_back({fid, score, rel});
      }
    }
    const auto m = rankeval::evaluate_predictions(preds);
    std::vector<double> ap, rr, h1, h5;
    std::vector<double> scores;
    std::vector<bool> labels;
    for (const auto& g : groups) {
      ap.push_back(oracle::average_precision(g));
      rr.push_back(oracle::reciprocal_rank(g));
      h1.push_back(oracle::hit_at(g, 1));
      h5.push_back(oracle::hit_at(g, 5));
      for (const auto& f : g) {
        scores.push_back(f.score);
        labels.push_back(f.relevant);
      }
    }
    const auto check = [](const std::optional<double>& got, double want) {
      if (std::isnan(want)) {
        EXPECT_FALSE(got.has_value());
      } else {
        ASSERT_TRUE(got.has_value());
        EXPECT_NEAR(*got, want, 1e-12);
      }
    };
    check(m.map, oracle::mean_defined(ap));
    check(m.mrr, oracle::mean_defined(rr));
    check(m.top1, oracle::mean_defined(h1));
    check(m.top5, oracle::mean_defined(h5));
    check(m.auc, oracle::auc(scores, labels));
  }
}

TEST(EvaluateRun, MeanSkipsUndefinedFolds) {
  const std::vector<std::vector<rankeval::PairPrediction>> folds = {
      {{"b", "x", 0.9, true}, {"b", "y", 0.1, false}},
      {{"b", "x", 0.1, true}, {"b", "y", 0.9, false}},
      {{"b", "x", 0.1, false}}};
  const auto r = rankeval::evaluate_run(folds);
  ASSERT_EQ(r.folds.size(), 3u);
  EXPECT_FALSE(r.folds[2].map.has_value());
  EXPECT_DOUBLE_EQ(*r.mean.map, 0.75);
  EXPECT_DOUBLE_EQ(*r.mean.auc, 0.5);
  const auto j = rankeval::to_json(r);
  EXPECT_TRUE(j["folds"][2]["map"].is_null());
  EXPECT_NE(rankeval::format_table(r, "t").find("mean"), std::string::npos);
}
