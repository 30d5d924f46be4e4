#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "buglocate/common.hpp"

namespace buglocate::rankeval {

struct ScoredFile {
  std::string file_id;
  double score = 0.0;
  bool relevant = false;
};

/// Files for one bug, best first. Equal scores are ordered by ascending file id.
struct RankedList {
  std::string bug_id;
  std::vector<ScoredFile> files;

  std::size_t relevant_count() const {
    return static_cast<std::size_t>(std::count_if(files.begin(), files.end(),
                                                  [](const ScoredFile& f) { return f.relevant; }));
  }

  /// 1-based rank of the first relevant file, or 0 when there is none.
  std::size_t first_relevant_rank() const {
    for (std::size_t i = 0; i < files.size(); ++i) {
      if (files[i].relevant) return i + 1;
    }
    return 0;
  }
};

inline RankedList rank_files(std::string bug_id, std::vector<ScoredFile> files) {
  std::stable_sort(files.begin(), files.end(), [](const ScoredFile& a, const ScoredFile& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.file_id < b.file_id;
  });
  return {std::move(bug_id), std::move(files)};
}

/// Mean of precision@j over the ranks j holding a relevant file; nullopt when
/// the list has no relevant file.
inline std::optional<double> average_precision(const RankedList& ranked) {
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t j = 0; j < ranked.files.size(); ++j) {
    if (!ranked.files[j].relevant) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(j + 1);
  }
  if (hits == 0) return std::nullopt;
  return sum / static_cast<double>(hits);
}

inline std::size_t evaluable_count(std::span<const RankedList> lists) {
  return static_cast<std::size_t>(std::count_if(
      lists.begin(), lists.end(), [](const RankedList& l) { return l.first_relevant_rank() > 0; }));
}

/// Mean AP over bugs with at least one relevant file.
inline std::optional<double> mean_average_precision(std::span<const RankedList> lists) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& l : lists) {
    if (const auto ap = average_precision(l)) {
      sum += *ap;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

inline std::optional<double> mrr(std::span<const RankedList> lists) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& l : lists) {
    if (const auto r = l.first_relevant_rank(); r > 0) {
      sum += 1.0 / static_cast<double>(r);
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

/// Fraction of evaluable bugs with a relevant file at rank <= k.
inline std::optional<double> top_k_rate(std::span<const RankedList> lists, std::size_t k) {
  if (k == 0) throw InputError("top-k needs k >= 1");
  std::size_t located = 0;
  std::size_t n = 0;
  for (const auto& l : lists) {
    const auto r = l.first_relevant_rank();
    if (r == 0) continue;
    ++n;
    if (r <= k) ++located;
  }
  if (n == 0) return std::nullopt;
  return static_cast<double>(located) / static_cast<double>(n);
}

/// Rank-sum (Mann-Whitney) AUC with midranks for ties; nullopt unless both
/// classes are present.
inline std::optional<double> auc(std::span<const double> scores, std::span<const bool> labels) {
  if (scores.size() != labels.size()) throw InputError("auc: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]]) {
        pos_rank_sum += midrank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  const double np = static_cast<double>(n_pos);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

/// Scored (bug, file) pair as produced by a classifier on the test set.
struct PairPrediction {
  std::string bug_id;
  std::string file_id;
  double score = 0.0;
  bool linked = false;
};

/// Groups predictions by bug (in first-appearance order) and ranks each group.
inline std::vector<RankedList> rank_by_bug(std::span<const PairPrediction> preds) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<ScoredFile>> groups;
  for (const auto& p : preds) {
    auto [it, inserted] = groups.try_emplace(p.bug_id);
    if (inserted) order.push_back(p.bug_id);
    it->second.push_back({p.file_id, p.score, p.linked});
  }
  std::vector<RankedList> lists;
  lists.reserve(order.size());
  for (auto& id : order) lists.push_back(rank_files(id, std::move(groups[id])));
  return lists;
}

struct Metrics {
  std::optional<double> map;
  std::optional<double> mrr;
  std::optional<double> top1;
  std::optional<double> top5;
  std::optional<double> top10;
  std::optional<double> auc;
  std::size_t evaluated_bugs = 0;
  std::size_t excluded_bugs = 0;
};

inline Metrics evaluate_predictions(std::span<const PairPrediction> preds) {
  const auto lists = rank_by_bug(preds);
  Metrics m;
  m.map = mean_average_precision(lists);
  m.mrr = rankeval::mrr(lists);
  m.top1 = top_k_rate(lists, 1);
  m.top5 = top_k_rate(lists, 5);
  m.top10 = top_k_rate(lists, 10);
  std::vector<double> scores;
  scores.reserve(preds.size());
  for (const auto& p : preds) scores.push_back(p.score);
  std::unique_ptr<bool[]> flags(new bool[preds.size()]);
  for (std::size_t i = 0; i < preds.size(); ++i) flags[i] = preds[i].linked;
  m.auc = rankeval::auc(scores, std::span<const bool>(flags.get(), preds.size()));
  m.evaluated_bugs = evaluable_count(lists);
  m.excluded_bugs = lists.size() - m.evaluated_bugs;
  return m;
}

/// Published reference figures, echoed in reports for context only.
struct ReferenceRow {
  const char* dataset;
  const char* model;
  double top5;
  double mrr;
  double map;
};

inline constexpr ReferenceRow kHyLocReference[] = {
    {"AspectJ", "HyLoc", 0.712, 0.52, 0.32}, {"Tomcat", "HyLoc", 0.729, 0.60, 0.52},
    {"SWT", "HyLoc", 0.690, 0.45, 0.37},     {"Eclipse", "HyLoc", 0.705, 0.51, 0.41},
    {"JDT", "HyLoc", 0.650, 0.45, 0.34},
};

struct EvalReport {
  std::vector<Metrics> folds;
  Metrics mean;
};

namespace detail {

inline std::optional<double> mean_of(std::span<const Metrics> folds,
                                     std::optional<double> Metrics::*field) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& f : folds) {
    if (const auto v = f.*field) {
      sum += *v;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

inline nlohmann::json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline std::string opt_text(const std::optional<double>& v, bool percent) {
  if (!v) return "-";
  char buf[32];
  if (percent) {
    std::snprintf(buf, sizeof buf, "%.1f%%", *v * 100.0);
  } else {
    std::snprintf(buf, sizeof buf, "%.4f", *v);
  }
  return buf;
}

}  // namespace detail

/// Per-fold metrics on the shared test set, then the arithmetic mean over
/// folds of every defined value. Bug counts in the mean are rounded down.
inline EvalReport evaluate_run(std::span<const std::vector<PairPrediction>> per_fold) {
  if (per_fold.empty()) throw InputError("evaluate_run needs at least one fold");
  EvalReport report;
  for (const auto& preds : per_fold) report.folds.push_back(evaluate_predictions(preds));
  auto& m = report.mean;
  m.map = detail::mean_of(report.folds, &Metrics::map);
  m.mrr = detail::mean_of(report.folds, &Metrics::mrr);
  m.top1 = detail::mean_of(report.folds, &Metrics::top1);
  m.top5 = detail::mean_of(report.folds, &Metrics::top5);
  m.top10 = detail::mean_of(report.folds, &Metrics::top10);
  m.auc = detail::mean_of(report.folds, &Metrics::auc);
  std::size_t eval = 0;
  std::size_t excl = 0;
  for (const auto& f : report.folds) {
    eval += f.evaluated_bugs;
    excl += f.excluded_bugs;
  }
  m.evaluated_bugs = eval / report.folds.size();
  m.excluded_bugs = excl / report.folds.size();
  return report;
}

inline nlohmann::json to_json(const Metrics& m) {
  return {{"map", detail::opt_json(m.map)},
          {"mrr", detail::opt_json(m.mrr)},
          {"top1", detail::opt_json(m.top1)},
          {"top5", detail::opt_json(m.top5)},
          {"top10", detail::opt_json(m.top10)},
          {"auc", detail::opt_json(m.auc)},
          {"evaluated_bugs", m.evaluated_bugs},
          {"excluded_bugs", m.excluded_bugs}};
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& f : r.folds) folds.push_back(to_json(f));
  nlohmann::json reference = nlohmann::json::array();
  for (const auto& row : kHyLocReference) {
    reference.push_back({{"dataset", row.dataset}, {"model", row.model}, {"top5", row.top5},
                         {"mrr", row.mrr}, {"map", row.map}});
  }
  return {{"folds", folds}, {"mean", to_json(r.mean)}, {"reference", reference}};
}

/// Plain-text table with AUC, MAP, MRR and Top-5 per fold and on average,
/// followed by the reference block.
inline std::string format_table(const EvalReport& r, const std::string& title) {
  std::ostringstream out;
  char line[160];
  out << title << '\n';
  std::snprintf(line, sizeof line, "%-8s %8s %8s %8s %8s %6s\n", "Fold", "AUC", "MAP", "MRR", "Top-5", "Bugs");
  out << line;
  const auto row = [&](const std::string& name, const Metrics& m) {
    std::snprintf(line, sizeof line, "%-8s %8s %8s %8s %8s %6zu\n", name.c_str(),
                  detail::opt_text(m.auc, false).c_str(), detail::opt_text(m.map, false).c_str(),
                  detail::opt_text(m.mrr, false).c_str(), detail::opt_text(m.top5, true).c_str(),
                  m.evaluated_bugs);
    out << line;
  };
  for (std::size_t i = 0; i < r.folds.size(); ++i) row(std::to_string(i + 1), r.folds[i]);
  row("mean", r.mean);
  out << "\nReference (published, display only)\n";
  for (const auto& ref : kHyLocReference) {
    std::snprintf(line, sizeof line, "%-8s %-6s Top-5 %5.1f%%  MRR %.2f  MAP %.2f\n", ref.dataset,
                  ref.model, ref.top5 * 100.0, ref.mrr, ref.map);
    out << line;
  }
  return out.str();
}

}  // namespace buglocate::rankeval
