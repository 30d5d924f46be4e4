#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "buglocate/common.hpp"
#include "buglocate/convnet.hpp"
#include "buglocate/corpus.hpp"
#include "buglocate/ingest.hpp"
#include "buglocate/logit.hpp"
#include "buglocate/rankeval.hpp"
#include "buglocate/textprep.hpp"
#include "buglocate/trace.hpp"

namespace buglocate::pipeline {

namespace fs = std::filesystem;
using textprep::TokenList;

enum class ModelKind { Logit, Cnn };

inline std::string_view to_string(ModelKind m) { return m == ModelKind::Cnn ? "cnn" : "logit"; }

inline ModelKind parse_model(std::string_view s) {
  if (s == "logit") return ModelKind::Logit;
  if (s == "cnn") return ModelKind::Cnn;
  throw InputError("unknown model '" + std::string(s) + "' (expected cnn|logit)");
}

struct RunConfig {
  trace::Variant variant = trace::Variant::All;
  ModelKind model = ModelKind::Logit;
  std::uint64_t seed = 1;
  std::optional<std::size_t> epochs;  // preset from the bug count when unset
  std::size_t batch_size = 64;
  std::size_t max_len = 500;
  std::size_t filters = 100;
  std::size_t hidden = 100;
  double dropout = 0.5;
  double lr = 1e-4;
  std::size_t patience = 0;
  double trim = 0.0;
  std::size_t max_boost_iters = 500;
  std::size_t cv_folds = 5;
  std::size_t heuristic_stop = 50;
  std::size_t folds = 10;
  double test_frac = 0.1;
};

/// Epoch preset by dataset size: small projects get 50, mid-size 10, large 5.
inline std::size_t preset_epochs(std::size_t num_bugs) {
  if (num_bugs < 1000) return 50;
  if (num_bugs < 5000) return 10;
  return 5;
}

inline RunConfig resolve(RunConfig config, std::size_t num_bugs) {
  if (!config.epochs) config.epochs = preset_epochs(num_bugs);
  return config;
}

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j = {{"variant", trace::to_string(c.variant)},
                      {"model", to_string(c.model)},
                      {"seed", c.seed},
                      {"batch_size", c.batch_size},
                      {"max_len", c.max_len},
                      {"filters", c.filters},
                      {"hidden", c.hidden},
                      {"dropout", c.dropout},
                      {"lr", c.lr},
                      {"patience", c.patience},
                      {"trim", c.trim},
                      {"max_boost_iters", c.max_boost_iters},
                      {"cv_folds", c.cv_folds},
                      {"heuristic_stop", c.heuristic_stop},
                      {"folds", c.folds},
                      {"test_frac", c.test_frac}};
  j["epochs"] = c.epochs ? nlohmann::json(*c.epochs) : nlohmann::json(nullptr);
  return j;
}

/// Applies keys from a config file; unknown keys are rejected.
inline void apply_json(RunConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw InputError("config file must hold a JSON object");
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "variant") c.variant = trace::parse_variant(v.get<std::string>());
      else if (key == "model") c.model = parse_model(v.get<std::string>());
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "epochs") c.epochs = v.is_null() ? std::nullopt : std::optional(v.get<std::size_t>());
      else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (key == "max_len") c.max_len = v.get<std::size_t>();
      else if (key == "filters") c.filters = v.get<std::size_t>();
      else if (key == "hidden") c.hidden = v.get<std::size_t>();
      else if (key == "dropout") c.dropout = v.get<double>();
      else if (key == "lr") c.lr = v.get<double>();
      else if (key == "patience") c.patience = v.get<std::size_t>();
      else if (key == "trim") c.trim = v.get<double>();
      else if (key == "max_boost_iters") c.max_boost_iters = v.get<std::size_t>();
      else if (key == "cv_folds") c.cv_folds = v.get<std::size_t>();
      else if (key == "heuristic_stop") c.heuristic_stop = v.get<std::size_t>();
      else if (key == "folds") c.folds = v.get<std::size_t>();
      else if (key == "test_frac") c.test_frac = v.get<double>();
      else throw InputError("unknown config key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw InputError("config key '" + key + "': " + e.what());
    }
  }
}

/// Short content hash of the resolved configuration; paths are not part of it.
inline std::string config_hash(const RunConfig& c) { return hex64(fnv1a(to_json(c).dump())); }

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::size_t k) {
  std::uint64_t h = fnv1a(std::to_string(seed));
  h = fnv1a(tag, h);
  return fnv1a(std::to_string(k), h);
}

/// Fixed sub-directory layout of a work directory.
struct Layout {
  fs::path root;

  fs::path corpus() const { return root / "corpus"; }
  fs::path prep() const { return root / "prep"; }
  fs::path matrix() const { return root / "matrix"; }
  fs::path fold(std::size_t k) const { return root / "train" / ("fold_" + std::to_string(k + 1)); }
  fs::path eval() const { return root / "eval"; }
  fs::path manifest() const { return root / "manifest.json"; }
};

/// Log sink for progress lines; silent by default.
struct Context {
  std::function<void(const std::string&)> log = [](const std::string&) {};
  std::size_t workers = worker_count();
};

/// Adds or replaces one stage entry in manifest.json.
inline void record_stage(const Layout& layout, const std::string& stage, const RunConfig& config,
                         const std::vector<fs::path>& artifacts) {
  nlohmann::json manifest = nlohmann::json::object();
  if (fs::exists(layout.manifest())) manifest = io::read_json_file(layout.manifest());
  nlohmann::json files = nlohmann::json::array();
  for (const auto& a : artifacts) files.push_back(fs::relative(a, layout.root).generic_string());
  manifest["stages"][stage] = {{"config_hash", config_hash(config)}, {"seed", config.seed}, {"artifacts", files}};
  io::write_json_file(layout.manifest(), manifest);
}

// ---------------------------------------------------------------- prep

struct TokenCorpus {
  std::vector<std::string> bug_ids;
  std::vector<TokenList> bug_tokens;
  std::vector<std::string> file_ids;
  std::vector<int> bugginess;
  std::vector<TokenList> doc_tokens;
  std::vector<FixMapping> links;
};

inline TokenCorpus tokenize(const Corpus& corpus, std::size_t workers = worker_count()) {
  TokenCorpus tc;
  tc.bug_tokens.resize(corpus.bugs.size());
  tc.doc_tokens.resize(corpus.docs.size());
  for (const auto& b : corpus.bugs) tc.bug_ids.push_back(b.id);
  for (const auto& d : corpus.docs) {
    tc.file_ids.push_back(d.file_id);
    tc.bugginess.push_back(d.bugginess);
  }
  parallel_for(corpus.bugs.size(), workers, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) tc.bug_tokens[i] = textprep::normalize_bug_text(corpus.bugs[i].text());
  });
  parallel_for(corpus.docs.size(), workers, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) tc.doc_tokens[i] = textprep::normalize_source(corpus.docs[i].raw_text);
  });
  tc.links = corpus.links;
  return tc;
}

inline void write_tokens(const fs::path& dir, const TokenCorpus& tc) {
  {
    auto out = io::open_output(dir / "bug_tokens.jsonl");
    for (std::size_t i = 0; i < tc.bug_ids.size(); ++i) {
      io::write_json_line(out, {{"id", tc.bug_ids[i]}, {"tokens", tc.bug_tokens[i]}});
    }
  }
  {
    auto out = io::open_output(dir / "doc_tokens.jsonl");
    for (std::size_t i = 0; i < tc.file_ids.size(); ++i) {
      io::write_json_line(out, {{"file_id", tc.file_ids[i]}, {"bugginess", tc.bugginess[i]}, {"tokens", tc.doc_tokens[i]}});
    }
  }
  auto out = io::open_output(dir / "links.tsv");
  out << "# bug_id\tfile_path\tcommit_hash\n";
  for (const auto& l : tc.links) out << l.bug_id << '\t' << l.file_path << '\t' << l.commit_hash << '\n';
}

inline TokenCorpus read_tokens(const fs::path& dir) {
  TokenCorpus tc;
  const auto where = [](const fs::path& p, std::size_t line) { return p.string() + ":" + std::to_string(line); };
  const auto bugs_path = dir / "bug_tokens.jsonl";
  io::for_each_json_line(bugs_path, [&](const nlohmann::json& j, std::size_t line) {
    try {
      tc.bug_ids.push_back(j.at("id").get<std::string>());
      tc.bug_tokens.push_back(j.at("tokens").get<TokenList>());
    } catch (const nlohmann::json::exception& e) {
      throw InputError(where(bugs_path, line) + ": " + e.what());
    }
  });
  const auto docs_path = dir / "doc_tokens.jsonl";
  io::for_each_json_line(docs_path, [&](const nlohmann::json& j, std::size_t line) {
    try {
      tc.file_ids.push_back(j.at("file_id").get<std::string>());
      tc.bugginess.push_back(j.at("bugginess").get<int>());
      tc.doc_tokens.push_back(j.at("tokens").get<TokenList>());
    } catch (const nlohmann::json::exception& e) {
      throw InputError(where(docs_path, line) + ": " + e.what());
    }
  });
  std::vector<BugReport> stubs;
  for (const auto& id : tc.bug_ids) stubs.push_back({id, id, {}, {}});
  tc.links = ingest::parse_fix_mapping(dir / "links.tsv", &stubs).mappings;
  return tc;
}

struct PrepSummary {
  std::size_t bugs = 0;
  std::size_t docs = 0;
  std::size_t links = 0;
  std::vector<std::string> warnings;
};

inline PrepSummary stage_prep(const fs::path& corpus_dir, const Layout& layout, const RunConfig& config,
                              const Context& ctx = {}) {
  PrepSummary s;
  const auto corpus = ingest::read_corpus(corpus_dir, &s.warnings);
  for (const auto& w : s.warnings) ctx.log("warning: " + w);
  const auto tc = tokenize(corpus, ctx.workers);
  write_tokens(layout.prep(), tc);
  record_stage(layout, "prep", config,
               {layout.prep() / "bug_tokens.jsonl", layout.prep() / "doc_tokens.jsonl", layout.prep() / "links.tsv"});
  s.bugs = tc.bug_ids.size();
  s.docs = tc.file_ids.size();
  s.links = tc.links.size();
  return s;
}

// ---------------------------------------------------------------- matrix

/// Traceability pairs with doc positions in the token corpus.
struct PairTable {
  std::vector<std::uint32_t> bug;
  std::vector<std::uint32_t> doc;
  std::vector<bool> linked;

  std::size_t size() const { return bug.size(); }
};

struct MatrixResult {
  trace::MatrixCounts counts;
  trace::ClassWeights weights;
  PairTable pairs;
  trace::FoldPlan plan;
};

inline MatrixResult build_pairs(const TokenCorpus& tc, const RunConfig& config) {
  std::vector<BugReport> bugs;
  for (const auto& id : tc.bug_ids) bugs.push_back({id, id, {}, {}});
  std::vector<SourceDoc> docs;
  for (std::size_t i = 0; i < tc.file_ids.size(); ++i) docs.push_back({tc.file_ids[i], {}, tc.bugginess[i]});
  const auto selected = trace::select_variant(docs, config.variant);
  std::unordered_map<std::string_view, std::uint32_t> doc_pos;
  for (std::uint32_t i = 0; i < tc.file_ids.size(); ++i) doc_pos.emplace(tc.file_ids[i], i);

  const auto matrix = trace::build_matrix(bugs, selected, tc.links);
  MatrixResult r;
  r.counts = {matrix.num_bugs, matrix.num_files, matrix.linked};
  r.weights = trace::compute_class_weights(matrix.linked, matrix.non_linked());
  r.pairs.bug.reserve(matrix.pairs.size());
  r.pairs.doc.reserve(matrix.pairs.size());
  for (const auto& p : matrix.pairs) {
    r.pairs.bug.push_back(p.bug);
    r.pairs.doc.push_back(doc_pos.at(selected[p.doc].file_id));
    r.pairs.linked.push_back(p.linked);
  }
  r.plan = trace::make_fold_plan(r.pairs.linked, derive_seed(config.seed, "folds", 0), config.folds, config.test_frac);
  return r;
}

inline nlohmann::json matrix_json(const MatrixResult& r, const RunConfig& config) {
  return {{"variant", trace::to_string(config.variant)},
          {"bugs", r.counts.bugs},
          {"files", r.counts.files},
          {"linked", r.counts.linked},
          {"non_linked", r.counts.non_linked()},
          {"pairs", r.counts.total()},
          {"w_pos", r.weights.positive},
          {"w_neg", r.weights.negative},
          {"seed", config.seed},
          {"config_hash", config_hash(config)}};
}

inline MatrixResult stage_matrix(const Layout& layout, const RunConfig& config, const Context& ctx = {}) {
  const auto tc = read_tokens(layout.prep());
  auto r = build_pairs(tc, config);
  const auto dir = layout.matrix();
  {
    auto out = io::open_output(dir / "pairs.jsonl");
    for (std::size_t i = 0; i < r.pairs.size(); ++i) {
      io::write_json_line(out, {{"bug_id", tc.bug_ids[r.pairs.bug[i]]},
                                {"file_id", tc.file_ids[r.pairs.doc[i]]},
                                {"label", r.pairs.linked[i] ? 1 : 0}});
    }
  }
  io::write_json_file(dir / "foldplan.json", {{"seed", r.plan.seed},
                                              {"test", r.plan.test},
                                              {"folds", r.plan.folds},
                                              {"config_hash", config_hash(config)}});
  io::write_json_file(dir / "matrix.json", matrix_json(r, config));
  record_stage(layout, "matrix", config, {dir / "pairs.jsonl", dir / "foldplan.json", dir / "matrix.json"});
  ctx.log("matrix: " + std::to_string(r.counts.bugs) + " bugs x " + std::to_string(r.counts.files) + " files, " +
          std::to_string(r.counts.linked) + " linked, " + std::to_string(r.counts.non_linked()) + " non-linked");
  return r;
}

/// Reads pairs.jsonl, foldplan.json and matrix.json back against a token corpus.
inline MatrixResult read_matrix(const Layout& layout, const TokenCorpus& tc) {
  MatrixResult r;
  std::unordered_map<std::string_view, std::uint32_t> bug_pos;
  std::unordered_map<std::string_view, std::uint32_t> doc_pos;
  for (std::uint32_t i = 0; i < tc.bug_ids.size(); ++i) bug_pos.emplace(tc.bug_ids[i], i);
  for (std::uint32_t i = 0; i < tc.file_ids.size(); ++i) doc_pos.emplace(tc.file_ids[i], i);
  const auto pairs_path = layout.matrix() / "pairs.jsonl";
  io::for_each_json_line(pairs_path, [&](const nlohmann::json& j, std::size_t line) {
    const auto b = bug_pos.find(j.at("bug_id").get<std::string>());
    const auto d = doc_pos.find(j.at("file_id").get<std::string>());
    if (b == bug_pos.end() || d == doc_pos.end()) {
      throw InputError(pairs_path.string() + ":" + std::to_string(line) + ": pair refers to an unknown bug or file");
    }
    r.pairs.bug.push_back(b->second);
    r.pairs.doc.push_back(d->second);
    r.pairs.linked.push_back(j.at("label").get<int>() != 0);
  });
  const auto plan = io::read_json_file(layout.matrix() / "foldplan.json");
  r.plan.seed = plan.at("seed").get<std::uint64_t>();
  r.plan.test = plan.at("test").get<std::vector<std::size_t>>();
  r.plan.folds = plan.at("folds").get<std::vector<std::vector<std::size_t>>>();
  const auto m = io::read_json_file(layout.matrix() / "matrix.json");
  r.counts = {m.at("bugs").get<std::size_t>(), m.at("files").get<std::size_t>(), m.at("linked").get<std::size_t>()};
  r.weights = {m.at("w_pos").get<double>(), m.at("w_neg").get<double>()};
  const auto check = [&](std::size_t id) {
    if (id >= r.pairs.size()) throw InputError("fold plan refers to pair " + std::to_string(id) + " beyond pairs.jsonl");
  };
  for (auto id : r.plan.test) check(id);
  for (const auto& f : r.plan.folds) for (auto id : f) check(id);
  return r;
}

// ---------------------------------------------------------------- encoding

/// Vocabulary over the bug reports and files that occur in the given pairs:
/// bugs in index order, then files in index order.
inline textprep::Vocabulary pair_vocabulary(const TokenCorpus& tc, const PairTable& pairs,
                                            std::span<const std::size_t> ids) {
  std::set<std::uint32_t> bugs;
  std::set<std::uint32_t> docs;
  for (auto id : ids) {
    bugs.insert(pairs.bug[id]);
    docs.insert(pairs.doc[id]);
  }
  std::vector<TokenList> lists;
  for (auto b : bugs) lists.push_back(tc.bug_tokens[b]);
  for (auto d : docs) lists.push_back(tc.doc_tokens[d]);
  return textprep::build_vocabulary(lists);
}

/// In-vocabulary indices of a token list, order kept, OOV dropped.
inline std::vector<std::int32_t> to_indices(std::span<const std::string> tokens, const textprep::Vocabulary& vocab) {
  std::vector<std::int32_t> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) {
    if (const auto i = vocab.lookup(t); i >= 0) out.push_back(i);
  }
  return out;
}

/// Same result as encode_indices(merge_pair_text(bug, doc), vocab, n) from
/// pre-mapped halves.
inline textprep::EncodedDoc encode_pair(std::span<const std::int32_t> bug, std::span<const std::int32_t> doc,
                                        std::size_t n, std::int32_t pad) {
  textprep::EncodedDoc e;
  e.indices.assign(n, pad);
  for (auto v : bug) {
    if (e.true_length == n) return e;
    e.indices[e.true_length++] = v;
  }
  for (auto v : doc) {
    if (e.true_length == n) return e;
    e.indices[e.true_length++] = v;
  }
  return e;
}

/// Presence vector of the merged pair: the union of the two halves' index sets.
inline textprep::BowVector bow_pair(std::span<const std::int32_t> bug, std::span<const std::int32_t> doc) {
  std::vector<std::uint32_t> ids;
  ids.reserve(bug.size() + doc.size());
  for (auto v : bug) ids.push_back(static_cast<std::uint32_t>(v));
  for (auto v : doc) ids.push_back(static_cast<std::uint32_t>(v));
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  textprep::BowVector bow;
  bow.entries.reserve(ids.size());
  for (auto v : ids) bow.entries.emplace_back(v, 1.0);
  return bow;
}

/// Pre-mapped index sequences for every bug and file of a token corpus.
struct IndexedCorpus {
  std::vector<std::vector<std::int32_t>> bugs;
  std::vector<std::vector<std::int32_t>> docs;

  IndexedCorpus(const TokenCorpus& tc, const textprep::Vocabulary& vocab) {
    for (const auto& t : tc.bug_tokens) bugs.push_back(to_indices(t, vocab));
    for (const auto& t : tc.doc_tokens) docs.push_back(to_indices(t, vocab));
  }
};

// ---------------------------------------------------------------- models

/// A trained fold model with its vocabulary.
struct LoadedModel {
  ModelKind kind = ModelKind::Logit;
  textprep::Vocabulary vocab;
  std::optional<logit::LogitModel> logit;
  std::optional<convnet::ConvNetModel> cnn;
  std::string model_hash;

  double score(std::span<const std::int32_t> bug, std::span<const std::int32_t> doc) const {
    if (kind == ModelKind::Logit) return logit->predict_proba(bow_pair(bug, doc));
    const auto e = encode_pair(bug, doc, cnn->shape().max_len, vocab.pad_index());
    return convnet::forward(*cnn, e.indices);
  }
};

inline LoadedModel load_model(const fs::path& fold_dir) {
  const auto model_path = fold_dir / "model.json";
  const auto j = io::read_json_file(model_path);
  LoadedModel m;
  m.model_hash = hex64(fnv1a(j.dump()));
  m.vocab = textprep::Vocabulary::load(fold_dir / "vocab.txt");
  const auto expected = j.value("vocab_hash", std::string());
  if (expected != m.vocab.hash()) {
    throw InputError("vocabulary " + (fold_dir / "vocab.txt").string() + " (hash " + m.vocab.hash() +
                     ") does not match model " + m.model_hash + " (expects vocabulary " + expected + ")");
  }
  const auto kind = j.value("kind", std::string());
  if (kind == "logit") {
    m.kind = ModelKind::Logit;
    m.logit = logit::logit_model_from_json(j);
  } else if (kind == "cnn") {
    m.kind = ModelKind::Cnn;
    m.cnn = convnet::convnet_model_from_json(j);
    if (m.cnn->shape().vocab != m.vocab.size()) throw InputError("cnn model " + m.model_hash + " vocabulary size mismatch");
  } else {
    throw InputError(model_path.string() + ": unknown model kind '" + kind + "'");
  }
  return m;
}

struct PairRef {
  std::uint32_t bug;
  std::uint32_t doc;
};

/// Scores pairs in input order, fanned out over workers.
inline std::vector<double> score_pairs(const LoadedModel& model, const IndexedCorpus& corpus,
                                       std::span<const PairRef> pairs, std::size_t workers) {
  std::vector<double> scores(pairs.size());
  parallel_for(pairs.size(), workers, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) scores[i] = model.score(corpus.bugs[pairs[i].bug], corpus.docs[pairs[i].doc]);
  });
  return scores;
}

// ---------------------------------------------------------------- train

struct FoldSummary {
  std::size_t fold = 0;
  std::size_t vocab_size = 0;
  std::size_t train_pairs = 0;
  std::size_t val_pairs = 0;
  std::size_t iterations = 0;  // boosting iterations or best epoch
};

inline FoldSummary train_fold(const TokenCorpus& tc, const MatrixResult& mx, std::size_t k, const RunConfig& config,
                              const Layout& layout, const Context& ctx) {
  const auto train_ids = mx.plan.training_ids(k);
  const auto& val_ids = mx.plan.folds[k];
  const auto vocab = pair_vocabulary(tc, mx.pairs, train_ids);
  const IndexedCorpus indexed(tc, vocab);
  const auto hash = config_hash(config);
  const auto dir = layout.fold(k);
  fs::create_directories(dir);
  vocab.save(dir / "vocab.txt");

  FoldSummary s{k + 1, vocab.size(), train_ids.size(), val_ids.size(), 0};
  nlohmann::json model_json;
  std::vector<fs::path> artifacts = {dir / "vocab.txt", dir / "model.json"};
  if (config.model == ModelKind::Logit) {
    logit::TrainingSet data;
    data.num_attributes = vocab.size();
    for (auto id : train_ids) {
      data.rows.push_back(bow_pair(indexed.bugs[mx.pairs.bug[id]], indexed.docs[mx.pairs.doc[id]]));
      data.labels.push_back(mx.pairs.linked[id]);
    }
    logit::BoostConfig bc;
    bc.max_iterations = config.max_boost_iters;
    bc.trim = config.trim;
    bc.cv_folds = config.cv_folds;
    bc.heuristic_stop = config.heuristic_stop;
    bc.seed = derive_seed(config.seed, "logit", k);
    const auto model = logit::train_simple_logistic(data, mx.weights, bc);
    s.iterations = model.iterations();
    model_json = logit::to_json(model);
    ctx.log("fold " + std::to_string(k + 1) + ": logit selected " + std::to_string(s.iterations) + " iterations");
  } else {
    const auto encode = [&](std::span<const std::size_t> ids, std::vector<textprep::EncodedDoc>& docs,
                            std::vector<bool>& labels) {
      for (auto id : ids) {
        docs.push_back(encode_pair(indexed.bugs[mx.pairs.bug[id]], indexed.docs[mx.pairs.doc[id]], config.max_len,
                                   vocab.pad_index()));
        labels.push_back(mx.pairs.linked[id]);
      }
    };
    std::vector<textprep::EncodedDoc> train_docs, val_docs;
    std::vector<bool> train_labels, val_labels;
    encode(train_ids, train_docs, train_labels);
    encode(val_ids, val_docs, val_labels);
    convnet::Shape shape;
    shape.vocab = vocab.size();
    shape.max_len = config.max_len;
    shape.filters = config.filters;
    shape.hidden = config.hidden;
    shape.dropout = config.dropout;
    convnet::ConvNetModel model(shape);
    Rng init(derive_seed(config.seed, "init", k));
    model.init_glorot(init);
    convnet::TrainConfig tc_cfg;
    tc_cfg.epochs = config.epochs.value_or(preset_epochs(tc.bug_ids.size()));
    tc_cfg.batch_size = config.batch_size;
    tc_cfg.weights = mx.weights;
    tc_cfg.seed = derive_seed(config.seed, "train", k);
    tc_cfg.patience = config.patience;
    tc_cfg.adam.lr = config.lr;
    auto result = convnet::train(std::move(model), train_docs, train_labels, val_docs, val_labels, tc_cfg);
    for (const auto& e : result.history) {
      char line[128];
      std::snprintf(line, sizeof line, "fold %zu: epoch %zu train %.6f val %.6f", k + 1, e.epoch, e.train_loss,
                    e.val_loss);
      ctx.log(line);
    }
    s.iterations = result.best_epoch;
    model_json = convnet::to_json(result.best);
    model_json["best_epoch"] = result.best_epoch;
    auto out = io::open_output(dir / "history.csv");
    out << convnet::history_csv(result.history);
    artifacts.push_back(dir / "history.csv");
  }
  model_json["vocab_hash"] = vocab.hash();
  model_json["config_hash"] = hash;
  model_json["seed"] = config.seed;
  model_json["fold"] = k + 1;
  io::write_json_file(dir / "model.json", model_json);
  record_stage(layout, "train_fold_" + std::to_string(k + 1), config, artifacts);
  return s;
}

inline std::vector<FoldSummary> stage_train(const Layout& layout, const RunConfig& config, const Context& ctx = {}) {
  const auto tc = read_tokens(layout.prep());
  const auto mx = read_matrix(layout, tc);
  const auto resolved = resolve(config, tc.bug_ids.size());
  std::vector<FoldSummary> out;
  for (std::size_t k = 0; k < mx.plan.folds.size(); ++k) out.push_back(train_fold(tc, mx, k, resolved, layout, ctx));
  return out;
}

// ---------------------------------------------------------------- eval

inline nlohmann::json stage_eval(const Layout& layout, const RunConfig& config, const Context& ctx = {}) {
  const auto tc = read_tokens(layout.prep());
  const auto mx = read_matrix(layout, tc);
  const auto resolved = resolve(config, tc.bug_ids.size());
  std::vector<PairRef> refs;
  for (auto id : mx.plan.test) refs.push_back({mx.pairs.bug[id], mx.pairs.doc[id]});

  std::vector<std::vector<rankeval::PairPrediction>> per_fold;
  std::vector<fs::path> artifacts;
  for (std::size_t k = 0; k < mx.plan.folds.size(); ++k) {
    const auto model = load_model(layout.fold(k));
    const IndexedCorpus indexed(tc, model.vocab);
    const auto scores = score_pairs(model, indexed, refs, ctx.workers);
    std::vector<rankeval::PairPrediction> preds;
    const auto path = layout.eval() / ("predictions_fold_" + std::to_string(k + 1) + ".jsonl");
    auto out = io::open_output(path);
    for (std::size_t i = 0; i < refs.size(); ++i) {
      const auto id = mx.plan.test[i];
      preds.push_back({tc.bug_ids[refs[i].bug], tc.file_ids[refs[i].doc], scores[i], mx.pairs.linked[id]});
      io::write_json_line(out, {{"bug_id", preds.back().bug_id},
                                {"file_id", preds.back().file_id},
                                {"score", scores[i]},
                                {"label", preds.back().linked ? 1 : 0}});
    }
    artifacts.push_back(path);
    per_fold.push_back(std::move(preds));
  }
  const auto report = rankeval::evaluate_run(per_fold);
  auto j = rankeval::to_json(report);
  j["config"] = to_json(resolved);
  j["config_hash"] = config_hash(resolved);
  j["seed"] = resolved.seed;
  j["matrix"] = {{"bugs", mx.counts.bugs},
                 {"files", mx.counts.files},
                 {"linked", mx.counts.linked},
                 {"non_linked", mx.counts.non_linked()}};
  j["test_pairs"] = refs.size();
  io::write_json_file(layout.eval() / "report.json", j);
  const std::string title = "Model " + std::string(to_string(resolved.model)) + ", variant " +
                            std::string(trace::to_string(resolved.variant)) + ", " +
                            std::to_string(refs.size()) + " test pairs, config " + config_hash(resolved);
  {
    auto out = io::open_output(layout.eval() / "report.txt");
    out << rankeval::format_table(report, title);
  }
  artifacts.push_back(layout.eval() / "report.json");
  artifacts.push_back(layout.eval() / "report.txt");
  record_stage(layout, "eval", resolved, artifacts);
  return j;
}

// ---------------------------------------------------------------- rank

/// Ranks every file of the trained variant against a query. When the query
/// is a known bug id its linked files are flagged relevant.
inline rankeval::RankedList rank_query(const Layout& layout, std::size_t fold, const TokenList& query,
                                       const std::string& bug_id, std::size_t workers) {
  const auto tc = read_tokens(layout.prep());
  const auto m = io::read_json_file(layout.matrix() / "matrix.json");
  const auto variant = trace::parse_variant(m.at("variant").get<std::string>());
  const auto model = load_model(layout.fold(fold));
  IndexedCorpus indexed(tc, model.vocab);
  indexed.bugs = {to_indices(query, model.vocab)};

  std::set<std::string> relevant;
  for (const auto& l : tc.links) {
    if (l.bug_id == bug_id) relevant.insert(l.file_path);
  }
  const int threshold = trace::min_bugginess(variant);
  std::vector<PairRef> refs;
  for (std::uint32_t d = 0; d < tc.file_ids.size(); ++d) {
    if (tc.bugginess[d] >= threshold) refs.push_back({0, d});
  }
  if (refs.empty()) throw InputError("no files to rank");
  const auto scores = score_pairs(model, indexed, refs, workers);
  std::vector<rankeval::ScoredFile> files;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto& id = tc.file_ids[refs[i].doc];
    files.push_back({id, scores[i], relevant.contains(id)});
  }
  return rankeval::rank_files(bug_id, std::move(files));
}

}  // namespace buglocate::pipeline
