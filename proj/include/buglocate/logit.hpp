#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "buglocate/common.hpp"
#include "buglocate/textprep.hpp"
#include "buglocate/trace.hpp"

namespace buglocate::logit {

using textprep::BowVector;

/// f(x) = intercept + slope * x[attribute].
struct SimpleRegressor {
  std::uint32_t attribute = 0;
  double slope = 0.0;
  double intercept = 0.0;

  double operator()(const BowVector& row) const { return intercept + slope * row.get(attribute); }
};

struct BoostConfig {
  std::size_t max_iterations = 500;
  double trim = 0.0;           // weight-trimming mass, 0 disables
  double z_max = 3.0;          // working-response clip
  double w_min = 1e-8;         // working-weight floor
  std::size_t cv_folds = 5;
  std::size_t heuristic_stop = 50;  // stop a CV fold after this many non-improving iterations
  std::uint64_t seed = 0;
};

struct WorkingResponse {
  double z = 0.0;
  double w = 0.0;
};

/// z = (y* - p) / (p (1 - p)) clipped to [-z_max, z_max]; w = p (1 - p) floored at w_min.
inline WorkingResponse working_response(double y_star, double p, double z_max = 3.0,
                                        double w_min = 1e-8) {
  const double w = std::max(p * (1.0 - p), w_min);
  const double z = std::clamp((y_star - p) / w, -z_max, z_max);
  return {z, w};
}

/// Column-major view of sparse rows, used for attribute scans.
class ColumnIndex {
 public:
  ColumnIndex(std::span<const BowVector> rows, std::size_t num_attributes)
      : num_rows_(rows.size()), start_(num_attributes + 1, 0) {
    for (const auto& r : rows) {
      for (const auto& [a, v] : r.entries) {
        if (a >= num_attributes) throw InputError("attribute index outside the vocabulary");
        ++start_[a + 1];
      }
    }
    std::partial_sum(start_.begin(), start_.end(), start_.begin());
    row_.resize(start_.back());
    value_.resize(start_.back());
    std::vector<std::size_t> fill(start_.begin(), start_.end() - 1);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (const auto& [a, v] : rows[i].entries) {
        row_[fill[a]] = static_cast<std::uint32_t>(i);
        value_[fill[a]++] = v;
      }
    }
  }

  std::size_t num_rows() const { return num_rows_; }
  std::size_t num_attributes() const { return start_.size() - 1; }

  template <typename Fn>
  void for_each_in(std::uint32_t attribute, Fn&& fn) const {
    for (std::size_t k = start_[attribute]; k < start_[attribute + 1]; ++k) fn(row_[k], value_[k]);
  }

 private:
  std::size_t num_rows_;
  std::vector<std::size_t> start_;
  std::vector<std::uint32_t> row_;
  std::vector<double> value_;
};

/// Weighted least-squares fit of z on each single attribute; returns the
/// attribute with the smallest weighted SSE (lowest index on ties).
/// Attributes without variance under the weights get slope 0.
inline SimpleRegressor fit_best_attribute(const ColumnIndex& columns, std::span<const double> z,
                                          std::span<const double> w) {
  const std::size_t n = columns.num_rows();
  if (z.size() != n || w.size() != n) throw InputError("fit_best_attribute: size mismatch");
  double sw = 0.0;
  double swz = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sw += w[i];
    swz += w[i] * z[i];
  }
  if (!(sw > 0.0)) throw ComputeError("fit_best_attribute: weights sum to zero");
  const double zbar = swz / sw;
  double szz = 0.0;   // centred
  double swzc = 0.0;  // ~0, kept for accuracy
  for (std::size_t i = 0; i < n; ++i) {
    const double zc = z[i] - zbar;
    szz += w[i] * zc * zc;
    swzc += w[i] * zc;
  }
  double scale = 0.0;
  for (std::size_t i = 0; i < n; ++i) scale += w[i] * z[i] * z[i];
  const double tie_tol = 1e-12 * (scale + std::numeric_limits<double>::min());

  SimpleRegressor best{0, 0.0, zbar};
  double best_sse = std::numeric_limits<double>::infinity();
  for (std::uint32_t a = 0; a < columns.num_attributes(); ++a) {
    double sx = 0.0;
    double sxx = 0.0;
    double sxz = 0.0;
    columns.for_each_in(a, [&](std::uint32_t i, double x) {
      const double wx = w[i] * x;
      sx += wx;
      sxx += wx * x;
      sxz += wx * (z[i] - zbar);
    });
    const double var_x = sxx - sx * sx / sw;
    double slope = 0.0;
    double sse = szz;
    if (var_x > 1e-10 * sxx && var_x > 0.0) {
      const double cov = sxz - sx * swzc / sw;
      slope = cov / var_x;
      sse = std::max(szz - cov * cov / var_x, 0.0);
    }
    if (sse < best_sse - tie_tol) {
      best_sse = sse;
      const double xbar = sx / sw;
      best = {a, slope, zbar + swzc / sw - slope * xbar};
    }
  }
  return best;
}

/// Additive committee per class. Stage m holds the centred regressors added at
/// boosting iteration m; F_j(x) sums class j's regressors over all stages.
struct LogitModel {
  std::size_t num_classes = 2;
  std::vector<std::vector<std::vector<SimpleRegressor>>> stages;  // [m][j] -> regressors

  std::size_t iterations() const { return stages.size(); }

  std::vector<double> committee_values(const BowVector& row) const {
    std::vector<double> f(num_classes, 0.0);
    for (const auto& stage : stages) {
      for (std::size_t j = 0; j < num_classes; ++j) {
        for (const auto& r : stage[j]) f[j] += r(row);
      }
    }
    return f;
  }

  /// Softmax over committee values; probability of class 1 (linked).
  double predict_proba(const BowVector& row) const;
};

/// p_j = exp(F_j) / sum_k exp(F_k), stabilized by subtracting max F.
inline std::vector<double> softmax(std::span<const double> f) {
  const double mx = *std::max_element(f.begin(), f.end());
  std::vector<double> p(f.size());
  double sum = 0.0;
  for (std::size_t j = 0; j < f.size(); ++j) {
    p[j] = std::exp(f[j] - mx);
    sum += p[j];
  }
  for (auto& v : p) v /= sum;
  return p;
}

inline double LogitModel::predict_proba(const BowVector& row) const {
  const auto f = committee_values(row);
  return softmax(f)[1];
}

/// Binary training data: sparse rows over `num_attributes` and linked labels.
struct TrainingSet {
  std::vector<BowVector> rows;
  std::vector<bool> labels;
  std::size_t num_attributes = 0;
};

struct InitialState {
  std::vector<double> instance_weights;  // sum to 1, proportional to class weight
  std::vector<double> probabilities;     // 1/J for every class
};

inline InitialState initialize(const std::vector<bool>& labels, const trace::ClassWeights& weights,
                               std::size_t num_classes = 2) {
  InitialState s;
  s.instance_weights.resize(labels.size());
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    s.instance_weights[i] = weights.of(labels[i]);
    total += s.instance_weights[i];
  }
  for (auto& w : s.instance_weights) w /= total;
  s.probabilities.assign(labels.size() * num_classes, 1.0 / static_cast<double>(num_classes));
  return s;
}

namespace detail {

inline double clamp_probability(double p) { return std::clamp(p, 1e-15, 1.0 - 1e-15); }

/// Zeroes the lowest weights whose cumulative share of the total is <= trim.
inline void trim_weights(std::vector<double>& w, double trim) {
  if (trim <= 0.0) return;
  std::vector<std::size_t> order(w.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return w[a] < w[b]; });
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  double cum = 0.0;
  for (std::size_t k = 0; k < order.size() - 1; ++k) {
    cum += w[order[k]];
    if (cum > trim * total) break;
    w[order[k]] = 0.0;
  }
}

// Merges regressors on the same attribute so each class gets one entry per
// distinct attribute; order follows first appearance.
inline std::vector<SimpleRegressor> combine(std::span<const SimpleRegressor> fits,
                                            std::span<const double> coeffs) {
  std::vector<SimpleRegressor> out;
  for (std::size_t k = 0; k < fits.size(); ++k) {
    auto it = std::find_if(out.begin(), out.end(),
                           [&](const SimpleRegressor& r) { return r.attribute == fits[k].attribute; });
    if (it == out.end()) {
      out.push_back({fits[k].attribute, 0.0, 0.0});
      it = out.end() - 1;
    }
    it->slope += coeffs[k] * fits[k].slope;
    it->intercept += coeffs[k] * fits[k].intercept;
  }
  return out;
}

}  // namespace detail

/// Incremental LogitBoost over a fixed training set.
class Booster {
 public:
  Booster(const TrainingSet& data, const trace::ClassWeights& weights, const BoostConfig& config)
      : data_(data), columns_(data.rows, data.num_attributes), config_(config) {
    if (data.rows.size() != data.labels.size()) throw InputError("rows and labels differ in length");
    const auto pos = std::count(data.labels.begin(), data.labels.end(), true);
    if (pos == 0 || pos == static_cast<long>(data.labels.size())) {
      throw InputError("LogitBoost needs both classes in the training data");
    }
    auto init = initialize(data.labels, weights, J);
    instance_weights_ = std::move(init.instance_weights);
    p_ = std::move(init.probabilities);
    f_.assign(data.rows.size() * J, 0.0);
    model_.num_classes = J;
  }

  const LogitModel& model() const { return model_; }
  std::span<const double> instance_weights() const { return instance_weights_; }

  /// Positive-class probability of training row i under the current model.
  double probability(std::size_t i) const { return p_[i * J + 1]; }

  /// Instance-weighted cross-entropy of the training data.
  double training_loss() const {
    double loss = 0.0;
    for (std::size_t i = 0; i < data_.labels.size(); ++i) {
      const double p = detail::clamp_probability(p_[i * J + (data_.labels[i] ? 1 : 0)]);
      loss -= instance_weights_[i] * std::log(p);
    }
    return loss;
  }

  /// One boosting iteration; returns the stage it appended.
  const std::vector<std::vector<SimpleRegressor>>& step() {
    const std::size_t n = data_.rows.size();
    std::vector<SimpleRegressor> fits;
    std::vector<double> z(n);
    std::vector<double> w(n);
    for (std::size_t j = 0; j < J; ++j) {
      for (std::size_t i = 0; i < n; ++i) {
        const double y_star = (data_.labels[i] ? 1u : 0u) == j ? 1.0 : 0.0;
        const auto r = working_response(y_star, p_[i * J + j], config_.z_max, config_.w_min);
        z[i] = r.z;
        w[i] = r.w * instance_weights_[i];
      }
      detail::trim_weights(w, config_.trim);
      fits.push_back(fit_best_attribute(columns_, z, w));
    }

    // f_j <- (J-1)/J (f_j - 1/J sum_k f_k)
    const double jd = static_cast<double>(J);
    std::vector<std::vector<SimpleRegressor>> stage(J);
    for (std::size_t j = 0; j < J; ++j) {
      std::vector<double> coeffs(J);
      for (std::size_t k = 0; k < J; ++k) coeffs[k] = (jd - 1.0) / jd * ((j == k ? 1.0 : 0.0) - 1.0 / jd);
      stage[j] = detail::combine(fits, coeffs);
    }

    for (std::size_t j = 0; j < J; ++j) {
      for (const auto& r : stage[j]) {
        for (std::size_t i = 0; i < n; ++i) f_[i * J + j] += r.intercept;
        columns_.for_each_in(r.attribute, [&](std::uint32_t i, double x) { f_[i * J + j] += r.slope * x; });
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      const auto p = softmax(std::span<const double>(f_.data() + i * J, J));
      std::copy(p.begin(), p.end(), p_.begin() + static_cast<std::ptrdiff_t>(i * J));
    }
    model_.stages.push_back(std::move(stage));
    return model_.stages.back();
  }

 private:
  static constexpr std::size_t J = 2;
  const TrainingSet& data_;
  ColumnIndex columns_;
  BoostConfig config_;
  std::vector<double> instance_weights_;
  std::vector<double> p_;  // [i * J + j]
  std::vector<double> f_;
  LogitModel model_;
};

/// Runs exactly `iterations` boosting iterations.
inline LogitModel logitboost_fit(const TrainingSet& data, const trace::ClassWeights& weights,
                                 std::size_t iterations, const BoostConfig& config = {}) {
  Booster booster(data, weights, config);
  for (std::size_t m = 0; m < iterations; ++m) booster.step();
  return booster.model();
}

/// 1-based index of the smallest loss (first on ties).
inline std::size_t argmin_iteration(std::span<const double> losses) {
  if (losses.empty()) throw InputError("argmin_iteration: empty loss table");
  return static_cast<std::size_t>(std::min_element(losses.begin(), losses.end()) - losses.begin()) + 1;
}

/// Tracks committee values of held-out rows as stages are appended.
class StageScorer {
 public:
  explicit StageScorer(std::span<const BowVector> rows) : rows_(rows), f_(rows.size() * 2, 0.0) {}

  void add(const std::vector<std::vector<SimpleRegressor>>& stage) {
    for (std::size_t i = 0; i < rows_.size(); ++i) {
      for (std::size_t j = 0; j < 2; ++j) {
        for (const auto& r : stage[j]) f_[i * 2 + j] += r(rows_[i]);
      }
    }
  }

  double probability(std::size_t i) const {
    const double f[2] = {f_[i * 2], f_[i * 2 + 1]};
    return softmax(f)[1];
  }

 private:
  std::span<const BowVector> rows_;
  std::vector<double> f_;
};

/// Picks the boosting iteration count by stratified k-fold cross-validation on
/// class-weighted validation cross-entropy. Falls back to max_iterations when a
/// fold lacks one of the classes.
inline std::size_t cv_select_iterations(const TrainingSet& data, const trace::ClassWeights& weights,
                                        const BoostConfig& config) {
  if (config.max_iterations < 1) throw InputError("max boosting iterations must be >= 1");
  const std::size_t k = std::max<std::size_t>(config.cv_folds, 2);
  std::vector<std::size_t> pos;
  std::vector<std::size_t> neg;
  for (std::size_t i = 0; i < data.labels.size(); ++i) (data.labels[i] ? pos : neg).push_back(i);
  if (pos.size() < k || neg.size() < k) return config.max_iterations;
  Rng rng(config.seed ^ 0x5eed5eedULL);
  rng.shuffle(pos);
  rng.shuffle(neg);
  std::vector<std::size_t> fold_of(data.labels.size());
  std::size_t slot = 0;
  for (auto i : pos) fold_of[i] = slot++ % k;
  for (auto i : neg) fold_of[i] = slot++ % k;

  std::vector<double> mean_loss(config.max_iterations, 0.0);
  for (std::size_t f = 0; f < k; ++f) {
    TrainingSet train;
    train.num_attributes = data.num_attributes;
    std::vector<BowVector> val_rows;
    std::vector<bool> val_labels;
    for (std::size_t i = 0; i < data.labels.size(); ++i) {
      if (fold_of[i] == f) {
        val_rows.push_back(data.rows[i]);
        val_labels.push_back(data.labels[i]);
      } else {
        train.rows.push_back(data.rows[i]);
        train.labels.push_back(data.labels[i]);
      }
    }
    Booster booster(train, weights, config);
    StageScorer scorer(val_rows);
    double val_mass = 0.0;
    for (bool y : val_labels) val_mass += weights.of(y);

    std::vector<double> losses;
    double best = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;
    for (std::size_t m = 0; m < config.max_iterations; ++m) {
      scorer.add(booster.step());
      double loss = 0.0;
      for (std::size_t i = 0; i < val_rows.size(); ++i) {
        const double p = scorer.probability(i);
        loss -= weights.of(val_labels[i]) * std::log(detail::clamp_probability(val_labels[i] ? p : 1.0 - p));
      }
      loss /= val_mass;
      losses.push_back(loss);
      if (loss < best) {
        best = loss;
        since_best = 0;
      } else if (++since_best >= config.heuristic_stop) {
        break;
      }
    }
    for (std::size_t m = 0; m < config.max_iterations; ++m) {
      mean_loss[m] += (m < losses.size() ? losses[m] : losses.back()) / static_cast<double>(k);
    }
  }
  return argmin_iteration(mean_loss);
}

/// Cross-validated iteration count followed by a full fit with that count.
inline LogitModel train_simple_logistic(const TrainingSet& data, const trace::ClassWeights& weights,
                                        const BoostConfig& config) {
  const std::size_t m = cv_select_iterations(data, weights, config);
  return logitboost_fit(data, weights, m, config);
}

inline nlohmann::json to_json(const LogitModel& model) {
  nlohmann::json regs = nlohmann::json::array();
  for (std::size_t m = 0; m < model.stages.size(); ++m) {
    for (std::size_t j = 0; j < model.num_classes; ++j) {
      for (const auto& r : model.stages[m][j]) {
        regs.push_back({{"iteration", m + 1}, {"class", j}, {"attribute", r.attribute},
                        {"slope", r.slope}, {"intercept", r.intercept}});
      }
    }
  }
  return {{"version", 1}, {"kind", "logit"}, {"J", model.num_classes}, {"m_used", model.iterations()},
          {"regressors", regs}};
}

inline LogitModel logit_model_from_json(const nlohmann::json& j) {
  if (j.value("kind", std::string("logit")) != "logit") throw InputError("model file is not a logit model");
  if (j.at("version").get<int>() != 1) throw InputError("unsupported logit model version");
  LogitModel model;
  model.num_classes = j.at("J").get<std::size_t>();
  if (model.num_classes != 2) throw InputError("only two-class logit models are supported");
  const auto m_used = j.at("m_used").get<std::size_t>();
  model.stages.assign(m_used, std::vector<std::vector<SimpleRegressor>>(model.num_classes));
  for (const auto& r : j.at("regressors")) {
    const auto m = r.at("iteration").get<std::size_t>();
    const auto c = r.at("class").get<std::size_t>();
    if (m < 1 || m > m_used || c >= model.num_classes) throw InputError("malformed logit regressor entry");
    model.stages[m - 1][c].push_back(
        {r.at("attribute").get<std::uint32_t>(), r.at("slope").get<double>(), r.at("intercept").get<double>()});
  }
  return model;
}

}  // namespace buglocate::logit
