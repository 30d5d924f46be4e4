#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "buglocate/logit.hpp"
#include "oracles.hpp"

using namespace buglocate;
using logit::BowVector;

namespace {

BowVector row_of(const std::vector<double>& dense) {
  BowVector r;
  for (std::uint32_t a = 0; a < dense.size(); ++a) {
    if (dense[a] != 0.0) r.entries.emplace_back(a, dense[a]);
  }
  return r;
}

/// Label equals presence of attribute 0; the other attributes are coin flips.
logit::TrainingSet separable(std::size_t rows, std::size_t attrs, std::uint64_t seed) {
  Rng rng(seed);
  logit::TrainingSet data;
  data.num_attributes = attrs;
  for (std::size_t i = 0; i < rows; ++i) {
    std::vector<double> x(attrs);
    for (auto& v : x) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
    x[0] = i % 2 == 0 ? 1.0 : 0.0;
    data.rows.push_back(row_of(x));
    data.labels.push_back(x[0] == 1.0);
  }
  return data;
}

}  // namespace

TEST(WorkingResponse, Examples) {
  const auto r = logit::working_response(1.0, 0.5);
  EXPECT_DOUBLE_EQ(r.z, 2.0);
  EXPECT_DOUBLE_EQ(r.w, 0.25);
  EXPECT_DOUBLE_EQ(logit::working_response(1.0, 1e-6).z, 3.0);
  EXPECT_DOUBLE_EQ(logit::working_response(0.0, 1.0 - 1e-6).z, -3.0);
  EXPECT_DOUBLE_EQ(logit::working_response(1.0, 1.0).w, 1e-8);
}

TEST(Initialize, ClassWeightedAndNormalized) {
  const std::vector<bool> labels = {true, false, false, false};
  const auto s = logit::initialize(labels, trace::compute_class_weights(1, 3));
  EXPECT_NEAR(std::accumulate(s.instance_weights.begin(), s.instance_weights.end(), 0.0), 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(s.instance_weights[0], 0.5);
  EXPECT_DOUBLE_EQ(s.instance_weights[1], 0.5 / 3.0);
  for (double p : s.probabilities) EXPECT_DOUBLE_EQ(p, 0.5);
}

TEST(TrimWeights, DropsLightestMass) {
  std::vector<double> w = {0.05, 0.5, 0.02, 0.4, 0.03};
  logit::detail::trim_weights(w, 0.1);
  EXPECT_EQ(w, (std::vector<double>{0.0, 0.5, 0.0, 0.4, 0.0}));
  std::vector<double> all = {1.0, 1.0};
  logit::detail::trim_weights(all, 0.9);
  EXPECT_GT(all[1], 0.0);
}

TEST(FitBestAttribute, MatchesExhaustiveOracle) {
  Rng rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 5 + rng.below(40), attrs = 1 + rng.below(12);
    std::vector<std::vector<double>> x(attrs, std::vector<double>(n, 0.0));
    std::vector<BowVector> rows(n);
    std::vector<double> z(n), w(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> dense(attrs);
      for (std::size_t a = 0; a < attrs; ++a) {
        dense[a] = rng.bernoulli(0.4) ? (trial % 2 ? 1.0 : rng.uniform(-2.0, 2.0)) : 0.0;
        x[a][i] = dense[a];
      }
      rows[i] = row_of(dense);
      z[i] = rng.uniform(-3.0, 3.0);
      w[i] = rng.uniform(0.01, 1.0);
    }
    const logit::ColumnIndex cols(rows, attrs);
    const auto got = logit::fit_best_attribute(cols, z, w);
    const auto want = oracle::best_attribute(x, z, w);
    double got_sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = z[i] - got.intercept - got.slope * x[got.attribute][i];
      got_sse += w[i] * r * r;
    }
    EXPECT_NEAR(got_sse, want.sse, 1e-9 * (1.0 + want.sse)) << "trial " << trial;
    if (got.attribute == want.attribute) {
      EXPECT_NEAR(got.slope, want.slope, 1e-9 * (1.0 + std::abs(want.slope)));
      EXPECT_NEAR(got.intercept, want.intercept, 1e-9 * (1.0 + std::abs(want.intercept)));
    }
  }
}

TEST(FitBestAttribute, ConstantColumnGetsZeroSlope) {
  std::vector<BowVector> rows(4, row_of({1.0}));
  const logit::ColumnIndex cols(rows, 1);
  const std::vector<double> z = {1, 2, 3, 4}, w = {1, 1, 1, 1};
  const auto r = logit::fit_best_attribute(cols, z, w);
  EXPECT_EQ(r.slope, 0.0);
  EXPECT_DOUBLE_EQ(r.intercept, 2.5);
}

TEST(Booster, SeparableLossDecreasesAndFits) {
  const auto data = separable(200, 20, 4);
  logit::Booster booster(data, trace::compute_class_weights(100, 100), {});
  double prev = booster.training_loss();
  for (int m = 0; m < 10; ++m) {
    booster.step();
    const double loss = booster.training_loss();
    EXPECT_LT(loss, prev) << "iteration " << m + 1;
    prev = loss;
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.rows.size(); ++i) {
    correct += (booster.model().predict_proba(data.rows[i]) > 0.5) == data.labels[i];
  }
  EXPECT_GE(static_cast<double>(correct) / 200.0, 0.99);
}

TEST(Booster, ClassCommitteesAreCentred) {
  const auto data = separable(60, 6, 8);
  const auto model = logit::logitboost_fit(data, {1.0, 1.0}, 5);
  for (const auto& r : data.rows) {
    const auto f = model.committee_values(r);
    EXPECT_NEAR(f[0] + f[1], 0.0, 1e-12);
  }
}

TEST(Booster, NeedsBothClasses) {
  logit::TrainingSet data;
  data.num_attributes = 1;
  data.rows = {row_of({1.0}), row_of({0.0})};
  data.labels = {true, true};
  EXPECT_THROW(logit::Booster(data, {}, {}), InputError);
}

TEST(ArgminIteration, FirstMinimum) {
  const std::vector<double> losses = {0.9, 0.5, 0.4, 0.4, 0.6};
  EXPECT_EQ(logit::argmin_iteration(losses), 3u);
  EXPECT_THROW(logit::argmin_iteration(std::vector<double>{}), InputError);
}

TEST(SimpleLogistic, CrossValidatedAndDeterministic) {
  const auto data = separable(120, 8, 2);
  logit::BoostConfig cfg;
  cfg.max_iterations = 40;
  cfg.heuristic_stop = 10;
  cfg.seed = 5;
  const auto a = logit::train_simple_logistic(data, {1.0, 1.0}, cfg);
  const auto b = logit::train_simple_logistic(data, {1.0, 1.0}, cfg);
  EXPECT_GE(a.iterations(), 1u);
  EXPECT_LE(a.iterations(), 40u);
  EXPECT_EQ(logit::to_json(a).dump(), logit::to_json(b).dump());
}

TEST(LogitModel, JsonRoundTripPreservesScores) {
  const auto data = separable(80, 10, 3);
  const auto model = logit::logitboost_fit(data, {1.0, 1.0}, 7);
  const auto back = logit::logit_model_from_json(nlohmann::json::parse(logit::to_json(model).dump()));
  EXPECT_EQ(back.iterations(), 7u);
  for (const auto& r : data.rows) EXPECT_EQ(back.predict_proba(r), model.predict_proba(r));
  EXPECT_THROW(logit::logit_model_from_json({{"version", 2}, {"J", 2}}), InputError);
}
