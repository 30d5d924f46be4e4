#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "buglocate/common.hpp"
#include "buglocate/corpus.hpp"
#include "buglocate/textprep.hpp"

namespace buglocate::trace {

/// One cell of the traceability matrix, by position in the bug and doc lists.
struct TracePair {
  std::uint32_t bug = 0;
  std::uint32_t doc = 0;
  bool linked = false;
};

struct TraceMatrix {
  std::size_t num_bugs = 0;
  std::size_t num_files = 0;
  std::size_t linked = 0;
  std::vector<TracePair> pairs;  // bug-major order

  std::size_t total() const { return num_bugs * num_files; }
  std::size_t non_linked() const { return total() - linked; }
};

/// B, S, L and Z of a matrix without materializing its cells.
struct MatrixCounts {
  std::size_t bugs = 0;
  std::size_t files = 0;
  std::size_t linked = 0;

  std::size_t total() const { return bugs * files; }
  std::size_t non_linked() const { return total() - linked; }
};

namespace detail {

inline std::unordered_set<std::uint64_t> link_cells(std::span<const BugReport> bugs,
                                                    std::span<const SourceDoc> docs,
                                                    std::span<const FixMapping> links) {
  if (bugs.empty() || docs.empty()) {
    throw InputError("traceability matrix needs at least one bug report and one source file");
  }
  std::unordered_map<std::string_view, std::uint32_t> bug_index;
  std::unordered_map<std::string_view, std::uint32_t> doc_index;
  for (std::uint32_t i = 0; i < bugs.size(); ++i) bug_index.emplace(bugs[i].id, i);
  for (std::uint32_t i = 0; i < docs.size(); ++i) doc_index.emplace(docs[i].file_id, i);
  std::unordered_set<std::uint64_t> cells;
  for (const auto& l : links) {
    const auto b = bug_index.find(l.bug_id);
    const auto d = doc_index.find(l.file_path);
    if (b == bug_index.end() || d == doc_index.end()) continue;
    cells.insert((static_cast<std::uint64_t>(b->second) << 32) | d->second);
  }
  return cells;
}

}  // namespace detail

/// Counts linked cells among present bugs and files; Z = B*S - L.
inline MatrixCounts count_matrix(std::span<const BugReport> bugs, std::span<const SourceDoc> docs,
                                 std::span<const FixMapping> links) {
  const auto cells = detail::link_cells(bugs, docs, links);
  return {bugs.size(), docs.size(), cells.size()};
}

/// Cartesian product of bugs and docs, labelled by the fix links.
inline TraceMatrix build_matrix(std::span<const BugReport> bugs, std::span<const SourceDoc> docs,
                                std::span<const FixMapping> links) {
  const auto cells = detail::link_cells(bugs, docs, links);
  TraceMatrix m;
  m.num_bugs = bugs.size();
  m.num_files = docs.size();
  m.linked = cells.size();
  m.pairs.reserve(m.total());
  for (std::uint32_t b = 0; b < bugs.size(); ++b) {
    for (std::uint32_t d = 0; d < docs.size(); ++d) {
      const bool linked = cells.contains((static_cast<std::uint64_t>(b) << 32) | d);
      m.pairs.push_back({b, d, linked});
    }
  }
  return m;
}

enum class Variant { All, Buggy, VeryBuggy };

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::All: return "all";
    case Variant::Buggy: return "buggy";
    case Variant::VeryBuggy: return "verybuggy";
  }
  return "all";
}

inline Variant parse_variant(std::string_view s) {
  if (s == "all") return Variant::All;
  if (s == "buggy") return Variant::Buggy;
  if (s == "verybuggy" || s == "very-buggy") return Variant::VeryBuggy;
  throw InputError("unknown variant '" + std::string(s) + "' (expected all|buggy|verybuggy)");
}

/// All: every file. Buggy: bugginess >= 1. VeryBuggy: bugginess >= 2.
inline int min_bugginess(Variant variant) {
  return variant == Variant::All ? 0 : variant == Variant::Buggy ? 1 : 2;
}

inline std::vector<SourceDoc> select_variant(std::span<const SourceDoc> docs, Variant variant) {
  const int threshold = min_bugginess(variant);
  std::vector<SourceDoc> out;
  for (const auto& d : docs) {
    if (d.bugginess >= threshold) out.push_back(d);
  }
  return out;
}

/// Bug tokens followed by file tokens.
inline textprep::TokenList merge_pair_text(std::span<const std::string> bug_tokens,
                                           std::span<const std::string> file_tokens) {
  textprep::TokenList merged;
  merged.reserve(bug_tokens.size() + file_tokens.size());
  merged.insert(merged.end(), bug_tokens.begin(), bug_tokens.end());
  merged.insert(merged.end(), file_tokens.begin(), file_tokens.end());
  return merged;
}

struct ClassWeights {
  double positive = 1.0;
  double negative = 1.0;

  double of(bool linked) const { return linked ? positive : negative; }
};

/// Gives both classes the same total mass: w_pos = Z / L, w_neg = 1.
inline ClassWeights compute_class_weights(std::size_t linked, std::size_t non_linked) {
  if (linked == 0) throw InputError("class weights need at least one linked pair");
  if (non_linked == 0) throw InputError("class weights need at least one non-linked pair");
  return {static_cast<double>(non_linked) / static_cast<double>(linked), 1.0};
}

/// Held-out test ids plus disjoint cross-validation folds over the rest.
struct FoldPlan {
  std::uint64_t seed = 0;
  std::vector<std::size_t> test;
  std::vector<std::vector<std::size_t>> folds;

  /// Every non-test id outside fold `k`, ascending.
  std::vector<std::size_t> training_ids(std::size_t k) const {
    std::vector<std::size_t> out;
    for (std::size_t f = 0; f < folds.size(); ++f) {
      if (f != k) out.insert(out.end(), folds[f].begin(), folds[f].end());
    }
    std::sort(out.begin(), out.end());
    return out;
  }
};

/// Stratified split: `test_fraction` of each class goes to the test set, and
/// the remainder is dealt round-robin (linked first) into `num_folds` folds,
/// so fold sizes and per-fold linked counts each differ by at most one.
inline FoldPlan make_fold_plan(const std::vector<bool>& labels, std::uint64_t seed,
                               std::size_t num_folds = 10, double test_fraction = 0.1) {
  if (num_folds < 2) throw InputError("need at least 2 folds");
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw InputError("test fraction must be in [0, 1)");
  if (labels.size() < 20) throw InputError("fold plan needs at least 20 pairs");
  std::vector<std::size_t> pos;
  std::vector<std::size_t> neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] ? pos : neg).push_back(i);

  Rng rng(seed);
  rng.shuffle(pos);
  rng.shuffle(neg);

  const auto n = static_cast<double>(labels.size());
  const std::size_t test_total = static_cast<std::size_t>(std::llround(n * test_fraction));
  std::size_t test_pos = static_cast<std::size_t>(std::llround(static_cast<double>(pos.size()) * test_fraction));
  test_pos = std::min(test_pos, test_total);
  const std::size_t test_neg = std::min(test_total - test_pos, neg.size());
  if (pos.size() - test_pos < num_folds) {
    throw InputError("fewer linked pairs (" + std::to_string(pos.size() - test_pos) +
                     ") than folds (" + std::to_string(num_folds) + ")");
  }

  FoldPlan plan;
  plan.seed = seed;
  plan.test.assign(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(test_pos));
  plan.test.insert(plan.test.end(), neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(test_neg));
  std::sort(plan.test.begin(), plan.test.end());

  plan.folds.assign(num_folds, {});
  std::size_t slot = 0;
  for (std::size_t i = test_pos; i < pos.size(); ++i) plan.folds[slot++ % num_folds].push_back(pos[i]);
  for (std::size_t i = test_neg; i < neg.size(); ++i) plan.folds[slot++ % num_folds].push_back(neg[i]);
  for (auto& f : plan.folds) std::sort(f.begin(), f.end());
  return plan;
}

}  // namespace buglocate::trace
