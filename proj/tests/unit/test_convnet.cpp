#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "buglocate/convnet.hpp"
#include "oracles.hpp"

using namespace buglocate;
using convnet::Cache;
using convnet::ConvNetModel;
using convnet::Params;
using convnet::Shape;

namespace {

Shape small_shape(std::size_t vocab = 6, std::size_t n = 8) {
  Shape s;
  s.vocab = vocab;
  s.max_len = n;
  s.filters = 3;
  s.hidden = 4;
  s.widths = {2, 3};
  return s;
}

Params gradients(const oracle::Instance& inst, double cw) {
  Cache cache;
  const double p = convnet::forward(inst.model, inst.indices, inst.mask, cache);
  Params g(inst.model.shape());
  convnet::backward(inst.model, inst.indices, cache, cw * (p - (inst.y ? 1.0 : 0.0)), g);
  return g;
}

}  // namespace

TEST(Shape, Validation) {
  Shape s = small_shape();
  s.vocab = 0;
  EXPECT_THROW(ConvNetModel{s}, InputError);
  s = small_shape(6, 2);
  EXPECT_THROW(ConvNetModel{s}, InputError);
  s = small_shape();
  s.dropout = 1.0;
  EXPECT_THROW(ConvNetModel{s}, InputError);
  EXPECT_EQ(Shape{}.pooled(), 400u);
}

TEST(Forward, RejectsBadInput) {
  ConvNetModel m(small_shape());
  const std::vector<std::int32_t> short_seq(7, 0);
  EXPECT_THROW(convnet::forward(m, short_seq), InputError);
  std::vector<std::int32_t> bad(8, 0);
  bad[3] = 7;
  EXPECT_THROW(convnet::forward(m, bad), InputError);
}

TEST(Forward, AllPaddingGivesBiasOnlyOutput) {
  ConvNetModel m(small_shape());
  Rng rng(1);
  m.init_glorot(rng);
  m.params().out_b[0] = 0.3;
  const std::vector<std::int32_t> pad(8, 6);
  EXPECT_NEAR(convnet::forward(m, pad), convnet::sigmoid(0.3), 1e-15);
}

TEST(Glorot, WithinLimitsAndBiasesZero) {
  ConvNetModel m(small_shape());
  Rng rng(2);
  m.init_glorot(rng);
  const double limit = std::sqrt(6.0 / (2 * 6 + 2 * 3));
  for (double v : m.params().conv_w[0]) EXPECT_LE(std::abs(v), limit);
  for (double v : m.params().conv_b[1]) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(m.params().out_b[0], 0.0);
}

TEST(Backward, MatchesFiniteDifferences) {
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    const auto inst = oracle::random_instance(rng);
    const double cw = inst.y ? 2.0 : 1.0;
    const auto g = gradients(inst, cw);
    EXPECT_LT(oracle::max_fd_relative_error(inst.model, inst.indices, inst.mask, inst.y, cw, g), 1e-4)
        << "trial " << trial;
  }
}

TEST(Backward, MatchesDenseOneHot) {
  Rng rng(37);
  for (int trial = 0; trial < 20; ++trial) {
    const auto inst = oracle::random_instance(rng, 10, 9, 3, 6);
    const double cw = inst.y ? 3.5 : 1.0;
    const auto dense = oracle::dense_forward_backward(inst.model, inst.indices, inst.mask, inst.y, cw);
    Cache cache;
    EXPECT_NEAR(convnet::forward(inst.model, inst.indices, inst.mask, cache), dense.p, 1e-10);
    const auto g = gradients(inst, cw);
    const auto a = g.tensors();
    const auto b = dense.grads.tensors();
    for (std::size_t k = 0; k < a.size(); ++k) {
      for (std::size_t i = 0; i < a[k]->size(); ++i) EXPECT_NEAR((*a[k])[i], (*b[k])[i], 1e-10);
    }
  }
}

TEST(Dropout, MaskMeanIsOne) {
  Rng rng(4);
  const auto mask = convnet::draw_dropout_mask(200000, 0.5, rng);
  const double mean = std::accumulate(mask.begin(), mask.end(), 0.0) / static_cast<double>(mask.size());
  EXPECT_NEAR(mean, 1.0, 0.01);
  for (double m : mask) EXPECT_TRUE(m == 0.0 || m == 2.0);
  for (double m : convnet::draw_dropout_mask(10, 0.0, rng)) EXPECT_EQ(m, 1.0);
}

TEST(Dropout, InferenceEqualsMaskExpectationOfLinearProbe) {
  // Hidden pre-activations are linear in the dropped pooled vector; their
  // expectation over all 2^P masks must equal the inference-mode value.
  Shape s = small_shape();
  s.filters = 2;
  s.dropout = 0.3;
  ConvNetModel m(s);
  Rng rng(5);
  for (auto* t : m.params().tensors()) {
    for (auto& v : *t) v = rng.uniform(-0.5, 0.5);
  }
  const std::vector<std::int32_t> idx = {0, 1, 2, 3, 4, 5, 1, 2};
  Cache infer;
  convnet::forward(m, idx, {}, infer);
  const std::size_t P = s.pooled();
  std::vector<double> expected(s.hidden, 0.0);
  for (std::uint32_t bits = 0; bits < (1u << P); ++bits) {
    std::vector<double> mask(P);
    double prob = 1.0;
    for (std::size_t i = 0; i < P; ++i) {
      const bool keep = bits >> i & 1u;
      mask[i] = keep ? 1.0 / (1.0 - s.dropout) : 0.0;
      prob *= keep ? 1.0 - s.dropout : s.dropout;
    }
    Cache c;
    convnet::forward(m, idx, mask, c);
    for (std::size_t u = 0; u < s.hidden; ++u) expected[u] += prob * c.hidden_pre[u];
  }
  for (std::size_t u = 0; u < s.hidden; ++u) EXPECT_NEAR(expected[u], infer.hidden_pre[u], 1e-12);
}

TEST(Pooling, FilterPermutationPermutesFeatures) {
  Rng rng(6);
  auto inst = oracle::random_instance(rng, 9, 7, 4, 3);
  const auto& s = inst.model.shape();
  const std::vector<std::size_t> perm = {2, 0, 3, 1};
  ConvNetModel permuted = inst.model;
  auto& pp = permuted.params();
  const auto& op = inst.model.params();
  const std::size_t F = s.filters, P = s.pooled();
  for (std::size_t wi = 0; wi < s.widths.size(); ++wi) {
    const std::size_t rows = s.widths[wi] * s.vocab;
    for (std::size_t f = 0; f < F; ++f) {
      pp.conv_b[wi][f] = op.conv_b[wi][perm[f]];
      for (std::size_t r = 0; r < rows; ++r) pp.conv_w[wi][r * F + f] = op.conv_w[wi][r * F + perm[f]];
      for (std::size_t u = 0; u < s.hidden; ++u) pp.hidden_w[u * P + wi * F + f] = op.hidden_w[u * P + wi * F + perm[f]];
    }
  }
  Cache a, b;
  const double pa = convnet::forward(inst.model, inst.indices, {}, a);
  const double pb = convnet::forward(permuted, inst.indices, {}, b);
  for (std::size_t wi = 0; wi < s.widths.size(); ++wi) {
    for (std::size_t f = 0; f < F; ++f) {
      EXPECT_EQ(b.pooled[wi * F + f], a.pooled[wi * F + perm[f]]);
      EXPECT_EQ(b.argmax[wi * F + f], a.argmax[wi * F + perm[f]]);
    }
  }
  EXPECT_NEAR(pa, pb, 1e-14);
}

TEST(Loss, WeightedAndClamped) {
  EXPECT_DOUBLE_EQ(convnet::loss(0.5, true, {3.0, 1.0}), 3.0 * std::log(2.0));
  EXPECT_DOUBLE_EQ(convnet::loss(0.5, false, {3.0, 1.0}), std::log(2.0));
  EXPECT_TRUE(std::isfinite(convnet::loss(0.0, true, {})));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<double> p = {1.0, -1.0, 0.0};
  const std::vector<double> g = {0.5, -2.0, 0.0};
  convnet::Adam adam({0.1, 0.9, 0.999, 1e-8});
  adam.step({std::span<double>(p)}, {std::span<const double>(g)});
  EXPECT_NEAR(p[0], 0.9, 1e-7);
  EXPECT_NEAR(p[1], -0.9, 1e-7);
  EXPECT_EQ(p[2], 0.0);
  EXPECT_EQ(adam.steps(), 1u);
}

TEST(BestSnapshot, KeepsEarliestLowest) {
  ConvNetModel m(small_shape());
  convnet::BestSnapshot best;
  EXPECT_TRUE(best.offer(m, 1, 0.5));
  EXPECT_TRUE(best.offer(m, 2, 0.4));
  EXPECT_FALSE(best.offer(m, 3, 0.4));
  EXPECT_FALSE(best.offer(m, 4, 0.6));
  EXPECT_EQ(best.epoch(), 2u);
}

namespace {

/// Label is whether token 0 occurs anywhere in the sequence.
void toy_task(std::size_t count, std::uint64_t seed, std::vector<textprep::EncodedDoc>& docs, std::vector<bool>& labels) {
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    textprep::EncodedDoc d;
    const bool y = i % 2 == 0;
    for (std::size_t t = 0; t < 8; ++t) d.indices.push_back(static_cast<std::int32_t>(1 + rng.below(5)));
    if (y) d.indices[rng.below(8)] = 0;
    d.true_length = 8;
    docs.push_back(d);
    labels.push_back(y);
  }
}

convnet::TrainResult train_toy(std::uint64_t seed) {
  std::vector<textprep::EncodedDoc> tr, va;
  std::vector<bool> ytr, yva;
  toy_task(64, 1, tr, ytr);
  toy_task(32, 2, va, yva);
  ConvNetModel m(small_shape());
  Rng rng(seed);
  m.init_glorot(rng);
  convnet::TrainConfig cfg;
  cfg.epochs = 30;
  cfg.batch_size = 16;
  cfg.seed = seed;
  cfg.adam.lr = 1e-2;
  return convnet::train(m, tr, ytr, va, yva, cfg);
}

}  // namespace

TEST(Train, LearnsToyTaskAndKeepsBestEpoch) {
  const auto r = train_toy(9);
  ASSERT_EQ(r.history.size(), 30u);
  EXPECT_LT(r.history.back().train_loss, r.history.front().train_loss);
  double lowest = r.history[0].val_loss;
  std::size_t at = 1;
  for (const auto& e : r.history) {
    if (e.val_loss < lowest) {
      lowest = e.val_loss;
      at = e.epoch;
    }
  }
  EXPECT_EQ(r.best_epoch, at);
  std::vector<textprep::EncodedDoc> va;
  std::vector<bool> yva;
  toy_task(32, 2, va, yva);
  EXPECT_DOUBLE_EQ(convnet::validation_loss(r.best, va, yva), lowest);
  EXPECT_LT(lowest, std::log(2.0));
}

TEST(Train, DeterministicUnderSeed) {
  const auto a = train_toy(3);
  const auto b = train_toy(3);
  EXPECT_EQ(convnet::history_csv(a.history), convnet::history_csv(b.history));
  EXPECT_EQ(convnet::to_json(a.best).dump(), convnet::to_json(b.best).dump());
}

TEST(Train, PatienceStopsEarly) {
  std::vector<textprep::EncodedDoc> tr, va;
  std::vector<bool> ytr, yva;
  toy_task(16, 1, tr, ytr);
  toy_task(8, 2, va, yva);
  ConvNetModel m(small_shape());
  convnet::TrainConfig cfg;
  cfg.epochs = 50;
  cfg.patience = 2;
  cfg.adam.lr = 0.0;  // validation loss never improves after epoch 1
  const auto r = convnet::train(m, tr, ytr, va, yva, cfg);
  EXPECT_EQ(r.history.size(), 3u);
  EXPECT_EQ(r.best_epoch, 1u);
}

TEST(Model, JsonRoundTripAndParallelScoring) {
  Rng rng(8);
  auto inst = oracle::random_instance(rng);
  const auto back = convnet::convnet_model_from_json(nlohmann::json::parse(convnet::to_json(inst.model).dump()));
  std::vector<textprep::EncodedDoc> docs;
  for (int i = 0; i < 37; ++i) {
    auto other = oracle::random_instance(rng);
    docs.push_back({other.indices, 0});
  }
  const auto serial = convnet::predict_scores(inst.model, docs, 1);
  const auto parallel = convnet::predict_scores(back, docs, 4);
  EXPECT_EQ(serial, parallel);
  EXPECT_THROW(convnet::convnet_model_from_json({{"kind", "logit"}}), InputError);
}

TEST(History, CsvFormat) {
  const std::vector<convnet::EpochStats> h = {{1, 0.5, 0.25}};
  EXPECT_EQ(convnet::history_csv(h), "epoch,train_loss,val_loss\n1,0.5,0.25\n");
}
