#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "buglocate/trace.hpp"

using namespace buglocate;

namespace {

std::vector<BugReport> bugs(std::size_t n) {
  std::vector<BugReport> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({"B" + std::to_string(i), "s", "", {}});
  return out;
}

std::vector<SourceDoc> docs(std::vector<int> bugginess) {
  std::vector<SourceDoc> out;
  for (std::size_t i = 0; i < bugginess.size(); ++i) out.push_back({"F" + std::to_string(i), "x", bugginess[i]});
  return out;
}

}  // namespace

TEST(Matrix, CountsAndLabels) {
  const auto b = bugs(2);
  const auto d = docs({1, 0, 1});
  const std::vector<FixMapping> links = {{"B0", "F0", "c"}, {"B1", "F2", "c"}, {"B1", "F2", "c2"},
                                         {"B9", "F0", "c"}, {"B0", "gone", "c"}};
  const auto m = trace::build_matrix(b, d, links);
  EXPECT_EQ(m.total(), 6u);
  EXPECT_EQ(m.linked, 2u);
  EXPECT_EQ(m.non_linked(), 4u);
  ASSERT_EQ(m.pairs.size(), 6u);
  EXPECT_TRUE(m.pairs[0].linked);
  EXPECT_TRUE(m.pairs[5].linked);
  EXPECT_EQ(std::count_if(m.pairs.begin(), m.pairs.end(), [](auto& p) { return p.linked; }), 2);
  const auto c = trace::count_matrix(b, d, links);
  EXPECT_EQ(c.non_linked(), m.non_linked());
}

TEST(Matrix, SingleCell) {
  const auto m = trace::build_matrix(bugs(1), docs({1}), std::vector<FixMapping>{{"B0", "F0", "c"}});
  EXPECT_EQ(m.linked, 1u);
  EXPECT_EQ(m.non_linked(), 0u);
}

TEST(Matrix, EmptyInputsAreErrors) {
  EXPECT_THROW(trace::build_matrix(bugs(0), docs({1}), {}), InputError);
  EXPECT_THROW(trace::count_matrix(bugs(1), docs({}), {}), InputError);
}

TEST(Variant, Selection) {
  const auto d = docs({0, 1, 2, 3, 0});
  EXPECT_EQ(trace::select_variant(d, trace::Variant::All).size(), 5u);
  EXPECT_EQ(trace::select_variant(d, trace::Variant::Buggy).size(), 3u);
  EXPECT_EQ(trace::select_variant(d, trace::Variant::VeryBuggy).size(), 2u);
  EXPECT_EQ(trace::parse_variant("verybuggy"), trace::Variant::VeryBuggy);
  EXPECT_THROW(trace::parse_variant("some"), InputError);
}

TEST(ClassWeights, BalanceTotalMass) {
  const auto w = trace::compute_class_weights(2571, 2829621);
  EXPECT_NEAR(w.positive, 2829621.0 / 2571.0, 1e-12);
  EXPECT_EQ(w.negative, 1.0);
  EXPECT_NEAR(w.positive * 2571.0, w.negative * 2829621.0, 1e-6);
  EXPECT_THROW(trace::compute_class_weights(0, 10), InputError);
  EXPECT_THROW(trace::compute_class_weights(3, 0), InputError);
}

TEST(MergePairText, BugThenFile) {
  const std::vector<std::string> b = {"a", "b"}, f = {"c"};
  EXPECT_EQ(trace::merge_pair_text(b, f), (std::vector<std::string>{"a", "b", "c"}));
}

TEST(FoldPlan, PartitionAndStratification) {
  std::vector<bool> labels(1000, false);
  for (std::size_t i = 0; i < 1000; i += 20) labels[i] = true;  // 50 linked
  const auto plan = trace::make_fold_plan(labels, 42, 10, 0.1);
  std::set<std::size_t> seen(plan.test.begin(), plan.test.end());
  EXPECT_EQ(plan.test.size(), 100u);
  EXPECT_EQ(std::count_if(plan.test.begin(), plan.test.end(), [&](auto i) { return labels[i]; }), 5);
  std::size_t lo = SIZE_MAX, hi = 0, plo = SIZE_MAX, phi = 0;
  for (const auto& f : plan.folds) {
    for (auto i : f) EXPECT_TRUE(seen.insert(i).second) << "id " << i << " appears twice";
    lo = std::min(lo, f.size());
    hi = std::max(hi, f.size());
    const auto pos = static_cast<std::size_t>(std::count_if(f.begin(), f.end(), [&](auto i) { return labels[i]; }));
    plo = std::min(plo, pos);
    phi = std::max(phi, pos);
  }
  EXPECT_EQ(seen.size(), 1000u);
  EXPECT_LE(hi - lo, 1u);
  EXPECT_LE(phi - plo, 1u);
  const auto train0 = plan.training_ids(0);
  EXPECT_EQ(train0.size(), 900u - plan.folds[0].size());
  EXPECT_TRUE(std::is_sorted(train0.begin(), train0.end()));
}

TEST(FoldPlan, DeterministicPerSeed) {
  std::vector<bool> labels(200, false);
  for (std::size_t i = 0; i < 200; i += 7) labels[i] = true;
  const auto a = trace::make_fold_plan(labels, 3);
  const auto b = trace::make_fold_plan(labels, 3);
  const auto c = trace::make_fold_plan(labels, 4);
  EXPECT_EQ(a.test, b.test);
  EXPECT_EQ(a.folds, b.folds);
  EXPECT_NE(a.folds, c.folds);
}

TEST(FoldPlan, TooFewLinkedPairs) {
  std::vector<bool> labels(100, false);
  labels[0] = labels[1] = true;
  EXPECT_THROW(trace::make_fold_plan(labels, 1, 10), InputError);
  EXPECT_THROW(trace::make_fold_plan(std::vector<bool>(5, true), 1, 2), InputError);
}
