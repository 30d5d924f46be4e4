#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "buglocate/common.hpp"
#include "buglocate/textprep.hpp"
#include "buglocate/trace.hpp"

namespace buglocate::convnet {

struct Shape {
  std::size_t vocab = 0;    // d; index d is padding
  std::size_t max_len = 500;  // n
  std::size_t filters = 100;  // per width
  std::size_t hidden = 100;
  std::vector<std::size_t> widths = {2, 3, 4, 5};
  double dropout = 0.5;

  std::size_t pooled() const { return widths.size() * filters; }
};

/// Trainable tensors, all stored flat in row-major order.
struct Params {
  std::vector<std::vector<double>> conv_w;  // per width h: [h][d][F]
  std::vector<std::vector<double>> conv_b;  // per width: [F]
  std::vector<double> hidden_w;             // [H][P]
  std::vector<double> hidden_b;             // [H]
  std::vector<double> out_w;                // [H]
  std::vector<double> out_b;                // [1]

  explicit Params(const Shape& s = {}) {
    for (auto h : s.widths) {
      conv_w.emplace_back(h * s.vocab * s.filters, 0.0);
      conv_b.emplace_back(s.filters, 0.0);
    }
    hidden_w.assign(s.hidden * s.pooled(), 0.0);
    hidden_b.assign(s.hidden, 0.0);
    out_w.assign(s.hidden, 0.0);
    out_b.assign(1, 0.0);
  }

  std::vector<std::vector<double>*> tensors() {
    std::vector<std::vector<double>*> t;
    for (auto& w : conv_w) t.push_back(&w);
    for (auto& b : conv_b) t.push_back(&b);
    t.insert(t.end(), {&hidden_w, &hidden_b, &out_w, &out_b});
    return t;
  }

  std::vector<const std::vector<double>*> tensors() const {
    std::vector<const std::vector<double>*> t;
    for (const auto& w : conv_w) t.push_back(&w);
    for (const auto& b : conv_b) t.push_back(&b);
    t.insert(t.end(), {&hidden_w, &hidden_b, &out_w, &out_b});
    return t;
  }

  std::vector<std::string> tensor_names(const Shape& s) const {
    std::vector<std::string> names;
    for (auto h : s.widths) names.push_back("conv_w_" + std::to_string(h));
    for (auto h : s.widths) names.push_back("conv_b_" + std::to_string(h));
    names.insert(names.end(), {"hidden_w", "hidden_b", "out_w", "out_b"});
    return names;
  }

  void zero() {
    for (auto* t : tensors()) std::fill(t->begin(), t->end(), 0.0);
  }
};

class ConvNetModel {
 public:
  explicit ConvNetModel(Shape shape) : shape_(std::move(shape)), params_(shape_) {
    if (shape_.vocab == 0) throw InputError("convnet: vocabulary is empty");
    if (shape_.widths.empty() || shape_.filters == 0 || shape_.hidden == 0) {
      throw InputError("convnet: widths, filters and hidden units must be non-empty");
    }
    const auto widest = *std::max_element(shape_.widths.begin(), shape_.widths.end());
    if (shape_.max_len < widest) {
      throw InputError("convnet: max length " + std::to_string(shape_.max_len) +
                       " is shorter than the widest filter (" + std::to_string(widest) + ")");
    }
    if (!(shape_.dropout >= 0.0 && shape_.dropout < 1.0)) throw InputError("convnet: dropout must be in [0, 1)");
  }

  const Shape& shape() const { return shape_; }
  Params& params() { return params_; }
  const Params& params() const { return params_; }

  /// Uniform in +-sqrt(6 / (fan_in + fan_out)); biases stay zero.
  void init_glorot(Rng& rng) {
    const auto fill = [&](std::vector<double>& t, double fan_in, double fan_out) {
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      for (auto& v : t) v = rng.uniform(-limit, limit);
    };
    const auto d = static_cast<double>(shape_.vocab);
    const auto f = static_cast<double>(shape_.filters);
    for (std::size_t wi = 0; wi < shape_.widths.size(); ++wi) {
      const auto h = static_cast<double>(shape_.widths[wi]);
      fill(params_.conv_w[wi], h * d, h * f);
    }
    fill(params_.hidden_w, static_cast<double>(shape_.pooled()), static_cast<double>(shape_.hidden));
    fill(params_.out_w, static_cast<double>(shape_.hidden), 1.0);
  }

 private:
  Shape shape_;
  Params params_;
};

/// Intermediate values kept by a forward pass for backpropagation.
struct Cache {
  static constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();

  std::vector<double> pooled;         // after ReLU and 1-max pooling
  std::vector<std::uint32_t> argmax;  // start position of the winning window, kNone if pooled == 0
  std::vector<double> mask;           // inverted-dropout scale per pooled unit
  std::vector<double> hidden_pre;
  std::vector<double> hidden;
  double logit = 0.0;
  double p = 0.5;
};

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace detail {

inline void check_input(const Shape& s, std::span<const std::int32_t> indices) {
  if (indices.size() != s.max_len) {
    throw InputError("convnet: input has length " + std::to_string(indices.size()) + ", expected " +
                     std::to_string(s.max_len));
  }
  for (auto v : indices) {
    if (v < 0 || static_cast<std::size_t>(v) > s.vocab) throw InputError("convnet: token index out of range");
  }
}

}  // namespace detail

/// Forward pass with an explicit dropout mask (one scale per pooled unit, or
/// empty for inference). The one-hot input is never materialized: a window
/// starting at t adds, for each offset k, the filter column selected by the
/// token at t + k; padding contributes nothing.
inline double forward(const ConvNetModel& model, std::span<const std::int32_t> indices,
                      std::span<const double> mask, Cache& cache) {
  const auto& s = model.shape();
  const auto& prm = model.params();
  detail::check_input(s, indices);
  const std::size_t F = s.filters;
  const std::size_t P = s.pooled();
  const auto pad = static_cast<std::int32_t>(s.vocab);
  if (!mask.empty() && mask.size() != P) throw InputError("convnet: dropout mask has the wrong size");

  cache.pooled.assign(P, 0.0);
  cache.argmax.assign(P, Cache::kNone);
  std::vector<double> acc(F);
  for (std::size_t wi = 0; wi < s.widths.size(); ++wi) {
    const std::size_t h = s.widths[wi];
    const double* w = prm.conv_w[wi].data();
    const double* b = prm.conv_b[wi].data();
    double* best = cache.pooled.data() + wi * F;
    std::uint32_t* arg = cache.argmax.data() + wi * F;
    for (std::size_t t = 0; t + h <= s.max_len; ++t) {
      std::copy(b, b + F, acc.begin());
      for (std::size_t k = 0; k < h; ++k) {
        const auto v = indices[t + k];
        if (v == pad) continue;
        const double* col = w + (k * s.vocab + static_cast<std::size_t>(v)) * F;
        for (std::size_t f = 0; f < F; ++f) acc[f] += col[f];
      }
      for (std::size_t f = 0; f < F; ++f) {
        if (acc[f] > best[f]) {
          best[f] = acc[f];
          arg[f] = static_cast<std::uint32_t>(t);
        }
      }
    }
  }

  cache.mask.assign(mask.begin(), mask.end());
  if (cache.mask.empty()) cache.mask.assign(P, 1.0);
  std::vector<double> dropped(P);
  for (std::size_t i = 0; i < P; ++i) dropped[i] = cache.pooled[i] * cache.mask[i];

  cache.hidden_pre.assign(s.hidden, 0.0);
  cache.hidden.assign(s.hidden, 0.0);
  double logit = prm.out_b[0];
  for (std::size_t u = 0; u < s.hidden; ++u) {
    const double* row = prm.hidden_w.data() + u * P;
    double a = prm.hidden_b[u];
    for (std::size_t i = 0; i < P; ++i) a += row[i] * dropped[i];
    cache.hidden_pre[u] = a;
    cache.hidden[u] = a > 0.0 ? a : 0.0;
    logit += prm.out_w[u] * cache.hidden[u];
  }
  cache.logit = logit;
  cache.p = sigmoid(logit);
  return cache.p;
}

/// Inference-mode score (no dropout).
inline double forward(const ConvNetModel& model, std::span<const std::int32_t> indices) {
  Cache cache;
  return forward(model, indices, {}, cache);
}

/// Inverted dropout: kept units are scaled by 1 / (1 - rate).
inline std::vector<double> draw_dropout_mask(std::size_t size, double rate, Rng& rng) {
  std::vector<double> mask(size, 1.0);
  if (rate <= 0.0) return mask;
  const double keep_scale = 1.0 / (1.0 - rate);
  for (auto& m : mask) m = rng.bernoulli(rate) ? 0.0 : keep_scale;
  return mask;
}

/// Weighted binary cross-entropy with p clamped to [1e-7, 1 - 1e-7].
inline double loss(double p, bool y, const trace::ClassWeights& weights) {
  const double q = std::clamp(p, 1e-7, 1.0 - 1e-7);
  return -weights.of(y) * (y ? std::log(q) : std::log(1.0 - q));
}

/// Accumulates d(loss)/d(params) into `grads`, given d(loss)/d(logit).
/// For weighted cross-entropy through the sigmoid, dlogit = w_y (p - y).
inline void backward(const ConvNetModel& model, std::span<const std::int32_t> indices, const Cache& cache,
                     double dlogit, Params& grads) {
  const auto& s = model.shape();
  const auto& prm = model.params();
  const std::size_t F = s.filters;
  const std::size_t P = s.pooled();
  const auto pad = static_cast<std::int32_t>(s.vocab);

  grads.out_b[0] += dlogit;
  std::vector<double> dpooled(P, 0.0);
  for (std::size_t u = 0; u < s.hidden; ++u) {
    grads.out_w[u] += dlogit * cache.hidden[u];
    if (cache.hidden_pre[u] <= 0.0) continue;
    const double da = dlogit * prm.out_w[u];
    grads.hidden_b[u] += da;
    const double* row = prm.hidden_w.data() + u * P;
    double* grow = grads.hidden_w.data() + u * P;
    for (std::size_t i = 0; i < P; ++i) {
      grow[i] += da * cache.pooled[i] * cache.mask[i];
      dpooled[i] += da * row[i];
    }
  }

  for (std::size_t wi = 0; wi < s.widths.size(); ++wi) {
    const std::size_t h = s.widths[wi];
    double* gw = grads.conv_w[wi].data();
    double* gb = grads.conv_b[wi].data();
    for (std::size_t f = 0; f < F; ++f) {
      const std::size_t i = wi * F + f;
      const auto t = cache.argmax[i];
      if (t == Cache::kNone) continue;
      const double dc = dpooled[i] * cache.mask[i];
      if (dc == 0.0) continue;
      gb[f] += dc;
      for (std::size_t k = 0; k < h; ++k) {
        const auto v = indices[t + k];
        if (v == pad) continue;
        gw[(k * s.vocab + static_cast<std::size_t>(v)) * F + f] += dc;
      }
    }
  }
}

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over a fixed list of tensors.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  std::size_t steps() const { return t_; }
  const AdamConfig& config() const { return config_; }

  void step(const std::vector<std::span<double>>& params, const std::vector<std::span<const double>>& grads) {
    if (params.size() != grads.size()) throw InputError("adam: parameter and gradient lists differ");
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.size(), 0.0);
        v_.emplace_back(p.size(), 0.0);
      }
    }
    if (m_.size() != params.size()) throw InputError("adam: tensor count changed between steps");
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto p = params[k];
      auto g = grads[k];
      if (p.size() != g.size() || p.size() != m_[k].size()) throw InputError("adam: tensor shape mismatch");
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
        v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
        p[i] -= config_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
      }
    }
  }

  void step(Params& params, const Params& grads) {
    std::vector<std::span<double>> ps;
    std::vector<std::span<const double>> gs;
    for (auto* t : params.tensors()) ps.emplace_back(*t);
    for (const auto* t : grads.tensors()) gs.emplace_back(*t);
    step(ps, gs);
  }

 private:
  AdamConfig config_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  trace::ClassWeights weights;
  std::uint64_t seed = 0;
  std::size_t patience = 0;  // 0: run every epoch
  AdamConfig adam;
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  ConvNetModel best;
  std::size_t best_epoch = 0;
  std::vector<EpochStats> history;
};

/// Keeps a copy of the model from the epoch with the lowest validation loss
/// (earliest on ties).
class BestSnapshot {
 public:
  bool offer(const ConvNetModel& model, std::size_t epoch, double val_loss) {
    if (model_ && !(val_loss < loss_)) return false;
    model_.emplace(model);
    epoch_ = epoch;
    loss_ = val_loss;
    return true;
  }

  bool empty() const { return !model_; }
  const ConvNetModel& model() const { return *model_; }
  std::size_t epoch() const { return epoch_; }
  double loss() const { return loss_; }

 private:
  std::optional<ConvNetModel> model_;
  std::size_t epoch_ = 0;
  double loss_ = std::numeric_limits<double>::infinity();
};

/// Mean unweighted cross-entropy in inference mode.
inline double validation_loss(const ConvNetModel& model, std::span<const textprep::EncodedDoc> docs,
                              const std::vector<bool>& labels) {
  if (docs.empty()) throw InputError("validation set is empty");
  double sum = 0.0;
  for (std::size_t i = 0; i < docs.size(); ++i) sum += loss(forward(model, docs[i].indices), labels[i], {});
  return sum / static_cast<double>(docs.size());
}

/// Mini-batch Adam on class-weighted cross-entropy. After each epoch the
/// validation loss is recorded and the best epoch's parameters are returned.
inline TrainResult train(ConvNetModel model, std::span<const textprep::EncodedDoc> train_docs,
                         const std::vector<bool>& train_labels, std::span<const textprep::EncodedDoc> val_docs,
                         const std::vector<bool>& val_labels, const TrainConfig& config) {
  if (config.epochs < 1) throw InputError("epochs must be >= 1");
  if (config.batch_size < 1) throw InputError("batch size must be >= 1");
  if (train_docs.size() != train_labels.size() || val_docs.size() != val_labels.size()) {
    throw InputError("convnet: documents and labels differ in length");
  }
  if (train_docs.empty()) throw InputError("training set is empty");

  Rng rng(config.seed);
  Adam adam(config.adam);
  Params grads(model.shape());
  Cache cache;
  BestSnapshot best;
  std::vector<EpochStats> history;
  std::vector<std::size_t> order(train_docs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t P = model.shape().pooled();
  const double rate = model.shape().dropout;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const double scale = 1.0 / static_cast<double>(end - start);
      grads.zero();
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t i = order[b];
        const auto mask = draw_dropout_mask(P, rate, rng);
        const double p = forward(model, train_docs[i].indices, mask, cache);
        const bool y = train_labels[i];
        epoch_loss += loss(p, y, config.weights);
        backward(model, train_docs[i].indices, cache, config.weights.of(y) * (p - (y ? 1.0 : 0.0)) * scale,
                 grads);
      }
      adam.step(model.params(), grads);
    }
    EpochStats stats{epoch, epoch_loss / static_cast<double>(order.size()), 0.0};
    stats.val_loss = validation_loss(model, val_docs, val_labels);
    if (!std::isfinite(stats.train_loss) || !std::isfinite(stats.val_loss)) {
      char msg[160];
      std::snprintf(msg, sizeof msg, "convnet: non-finite loss at epoch %zu (train %g, validation %g)", epoch,
                    stats.train_loss, stats.val_loss);
      throw ComputeError(msg);
    }
    history.push_back(stats);
    best.offer(model, epoch, stats.val_loss);
    if (config.patience > 0 && epoch - best.epoch() >= config.patience) break;
  }
  return {best.model(), best.epoch(), std::move(history)};
}

/// Inference scores in input order.
inline std::vector<double> predict_scores(const ConvNetModel& model, std::span<const textprep::EncodedDoc> docs,
                                          std::size_t workers = worker_count()) {
  std::vector<double> scores(docs.size());
  parallel_for(docs.size(), workers, [&](std::size_t lo, std::size_t hi) {
    Cache cache;
    for (std::size_t i = lo; i < hi; ++i) scores[i] = forward(model, docs[i].indices, {}, cache);
  });
  return scores;
}

inline nlohmann::json to_json(const ConvNetModel& model) {
  const auto& s = model.shape();
  nlohmann::json tensors = nlohmann::json::object();
  const auto names = model.params().tensor_names(s);
  const auto data = model.params().tensors();
  for (std::size_t k = 0; k < names.size(); ++k) tensors[names[k]] = *data[k];
  return {{"version", 1},
          {"kind", "cnn"},
          {"shape",
           {{"vocab", s.vocab},
            {"max_len", s.max_len},
            {"filters", s.filters},
            {"hidden", s.hidden},
            {"widths", s.widths},
            {"dropout", s.dropout}}},
          {"tensors", tensors}};
}

inline ConvNetModel convnet_model_from_json(const nlohmann::json& j) {
  if (j.value("kind", std::string()) != "cnn") throw InputError("model file is not a cnn model");
  if (j.at("version").get<int>() != 1) throw InputError("unsupported cnn model version");
  const auto& sj = j.at("shape");
  Shape s;
  s.vocab = sj.at("vocab").get<std::size_t>();
  s.max_len = sj.at("max_len").get<std::size_t>();
  s.filters = sj.at("filters").get<std::size_t>();
  s.hidden = sj.at("hidden").get<std::size_t>();
  s.widths = sj.at("widths").get<std::vector<std::size_t>>();
  s.dropout = sj.at("dropout").get<double>();
  ConvNetModel model(s);
  const auto names = model.params().tensor_names(s);
  auto data = model.params().tensors();
  for (std::size_t k = 0; k < names.size(); ++k) {
    auto values = j.at("tensors").at(names[k]).get<std::vector<double>>();
    if (values.size() != data[k]->size()) throw InputError("cnn model tensor " + names[k] + " has the wrong size");
    *data[k] = std::move(values);
  }
  return model;
}

inline std::string history_csv(std::span<const EpochStats> history) {
  std::string out = "epoch,train_loss,val_loss\n";
  char line[96];
  for (const auto& e : history) {
    std::snprintf(line, sizeof line, "%zu,%.17g,%.17g\n", e.epoch, e.train_loss, e.val_loss);
    out += line;
  }
  return out;
}

}  // namespace buglocate::convnet
