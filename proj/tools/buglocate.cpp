// Command-line front end: ingest | prep | matrix | train | eval | rank | synth | run.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "buglocate/ingest.hpp"
#include "buglocate/pipeline.hpp"
#include "buglocate/synth.hpp"

namespace fs = std::filesystem;
using namespace buglocate;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitUsage = 2;

struct Flags {
  std::string out;
  std::string config_file;
  bool dry_run = false;
  bool quiet = false;

  std::string variant;
  std::string model;
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  std::size_t batch_size = 0;
  std::size_t max_len = 0;
  std::size_t filters = 0;
  double trim = 0.0;
  std::size_t max_boost_iters = 0;
  std::size_t folds = 0;
  double test_frac = 0.0;
  std::size_t patience = 0;

  // inputs
  std::string corpus;
  std::string reports;
  std::string mapping;
  std::string repo;
  std::string ext = ".java";
  std::string synth;  // BxF

  // synth
  std::size_t bugs = 50;
  std::size_t files = 200;
  std::size_t planted = 5;
  std::size_t background = 200;
  std::size_t noise = 20;

  // rank
  std::size_t fold = 1;
  std::size_t top_k = 5;
  std::string bug_id;
  std::string query;

  std::vector<std::pair<std::string, CLI::Option*>> overrides;
};

void add_out(CLI::App* cmd, Flags& f) {
  cmd->add_option("--out", f.out, "Work directory")->required();
  cmd->add_flag("--dry-run", f.dry_run, "Print the resolved plan and exit without side effects");
  cmd->add_option("--config", f.config_file, "JSON config file (flags take precedence)");
  cmd->add_flag("-q,--quiet", f.quiet, "Suppress progress lines");
}

void add_hyper(CLI::App* cmd, Flags& f) {
  const auto add = [&](const std::string& key, CLI::Option* opt) { f.overrides.emplace_back(key, opt); };
  add("variant", cmd->add_option("--variant", f.variant, "all | buggy | verybuggy"));
  add("model", cmd->add_option("--model", f.model, "cnn | logit"));
  add("seed", cmd->add_option("--seed", f.seed, "Random seed"));
  add("epochs", cmd->add_option("--epochs", f.epochs, "CNN epochs (default: preset by bug count)"));
  add("batch_size", cmd->add_option("--batch-size", f.batch_size, "CNN mini-batch size"));
  add("max_len", cmd->add_option("--max-len", f.max_len, "Max merged sentence length n"));
  add("filters", cmd->add_option("--filters", f.filters, "CNN filters per width"));
  add("trim", cmd->add_option("--trim", f.trim, "LogitBoost weight-trimming mass"));
  add("max_boost_iters", cmd->add_option("--max-boost-iters", f.max_boost_iters, "LogitBoost iteration cap"));
  add("folds", cmd->add_option("--folds", f.folds, "Cross-validation folds"));
  add("test_frac", cmd->add_option("--test-frac", f.test_frac, "Held-out test fraction"));
  add("patience", cmd->add_option("--patience", f.patience, "CNN early-stopping patience (0 = off)"));
}

void add_synth(CLI::App* cmd, Flags& f) {
  cmd->add_option("--bugs", f.bugs, "Number of bug reports");
  cmd->add_option("--files", f.files, "Number of source files");
  cmd->add_option("--planted", f.planted, "Planted tokens per linked pair");
  cmd->add_option("--background", f.background, "Background vocabulary size");
  cmd->add_option("--noise", f.noise, "Noise tokens per text");
}

void add_ingest(CLI::App* cmd, Flags& f) {
  cmd->add_option("--reports", f.reports, "Bug reports (JSON Lines)");
  cmd->add_option("--mapping", f.mapping, "Fix mapping (TSV)");
  cmd->add_option("--repo", f.repo, "Git working directory");
  cmd->add_option("--ext", f.ext, "Source file extension");
}

/// Defaults, then the work directory's saved config, then --config, then flags.
pipeline::RunConfig resolve_config(const Flags& f) {
  pipeline::RunConfig c;
  const pipeline::Layout layout{f.out};
  if (fs::exists(layout.root / "config.json")) pipeline::apply_json(c, io::read_json_file(layout.root / "config.json"));
  if (!f.config_file.empty()) {
    if (!fs::exists(f.config_file)) throw InputError("config file not found: " + f.config_file);
    pipeline::apply_json(c, io::read_json_file(f.config_file));
  }
  nlohmann::json flags = nlohmann::json::object();
  for (const auto& [key, opt] : f.overrides) {
    if (opt->count() == 0) continue;
    if (key == "variant") flags[key] = f.variant;
    else if (key == "model") flags[key] = f.model;
    else if (key == "seed") flags[key] = f.seed;
    else if (key == "epochs") flags[key] = f.epochs;
    else if (key == "batch_size") flags[key] = f.batch_size;
    else if (key == "max_len") flags[key] = f.max_len;
    else if (key == "filters") flags[key] = f.filters;
    else if (key == "trim") flags[key] = f.trim;
    else if (key == "max_boost_iters") flags[key] = f.max_boost_iters;
    else if (key == "folds") flags[key] = f.folds;
    else if (key == "test_frac") flags[key] = f.test_frac;
    else if (key == "patience") flags[key] = f.patience;
  }
  pipeline::apply_json(c, flags);
  return c;
}

void save_config(const pipeline::Layout& layout, const pipeline::RunConfig& c) {
  io::write_json_file(layout.root / "config.json", pipeline::to_json(c));
}

pipeline::Context make_context(const Flags& f) {
  pipeline::Context ctx;
  if (!f.quiet) ctx.log = [](const std::string& line) { std::cerr << line << '\n'; };
  return ctx;
}

void require_path(const std::string& path, const char* what) {
  if (path.empty()) throw InputError(std::string("missing required input: ") + what);
  if (!fs::exists(path)) throw InputError(std::string(what) + " not found: " + path);
}

void print_plan(const std::vector<std::string>& steps, const pipeline::RunConfig& c) {
  std::cout << "plan (dry run, nothing written):\n";
  for (const auto& s : steps) std::cout << "  " << s << '\n';
  std::cout << "config " << pipeline::config_hash(c) << ":\n" << pipeline::to_json(c).dump(2) << '\n';
}

synth::SynthSpec synth_spec(const Flags& f, std::uint64_t seed, std::size_t max_len) {
  synth::SynthSpec s;
  s.num_bugs = f.bugs;
  s.num_files = f.files;
  if (!f.synth.empty()) {
    const auto x = f.synth.find('x');
    try {
      if (x == std::string::npos) throw std::invalid_argument("no x");
      s.num_bugs = std::stoul(f.synth.substr(0, x));
      s.num_files = std::stoul(f.synth.substr(x + 1));
    } catch (const std::exception&) {
      throw InputError("--synth expects BUGSxFILES, e.g. 50x200; got '" + f.synth + "'");
    }
  }
  s.planted = f.planted;
  s.background = f.background;
  s.noise = f.noise;
  s.max_len = max_len;
  s.seed = seed;
  s.validate();
  return s;
}

int cmd_synth(const Flags& f, const pipeline::RunConfig& c) {
  const pipeline::Layout layout{f.out};
  const auto spec = synth_spec(f, c.seed, c.max_len);
  if (f.dry_run) {
    print_plan({"synth " + std::to_string(spec.num_bugs) + " bugs x " + std::to_string(spec.num_files) + " files -> " +
                layout.corpus().string()},
               c);
    return kExitOk;
  }
  ingest::write_corpus(layout.corpus(), synth::generate(spec));
  std::cout << "wrote synthetic corpus to " << layout.corpus().string() << '\n';
  return kExitOk;
}

int cmd_ingest(const Flags& f, const pipeline::RunConfig& c) {
  const pipeline::Layout layout{f.out};
  require_path(f.reports, "bug reports");
  require_path(f.mapping, "fix mapping");
  require_path(f.repo, "repository");
  if (f.dry_run) {
    print_plan({"ingest " + f.reports + " + " + f.mapping + " from " + f.repo + " -> " + layout.corpus().string()}, c);
    return kExitOk;
  }
  const auto ctx = make_context(f);
  auto reports = ingest::parse_bug_reports(f.reports);
  auto mapping = ingest::parse_fix_mapping(f.mapping, &reports);
  for (const auto& w : mapping.warnings) ctx.log("warning: " + w);
  std::vector<ingest::BeforeFixDoc> before;
  for (const auto& m : mapping.mappings) {
    auto r = ingest::extract_before_fix(f.repo, m);
    if (r.doc) before.push_back(std::move(*r.doc));
    if (r.skip) ctx.log("skip: " + r.skip->what + ": " + r.skip->reason);
  }
  auto snap = ingest::snapshot_repo_files(f.repo, f.ext);
  for (const auto& s : snap.skips) ctx.log("skip: " + s.what + ": " + s.reason);
  const auto corpus = ingest::build_corpus(std::move(reports), mapping.mappings, before, snap.docs);
  ingest::write_corpus(layout.corpus(), corpus);
  pipeline::record_stage(layout, "ingest", c,
                         {layout.corpus() / "bugs.jsonl", layout.corpus() / "docs.jsonl", layout.corpus() / "links.tsv"});
  std::cout << "corpus: " << corpus.bugs.size() << " bugs, " << corpus.docs.size() << " files, " << corpus.links.size()
            << " links\n";
  return kExitOk;
}

int cmd_prep(const Flags& f, const pipeline::RunConfig& c) {
  const pipeline::Layout layout{f.out};
  const fs::path corpus = f.corpus.empty() ? layout.corpus() : fs::path(f.corpus);
  require_path(corpus.string(), "corpus directory");
  if (f.dry_run) {
    print_plan({"prep " + corpus.string() + " -> " + layout.prep().string()}, c);
    return kExitOk;
  }
  const auto s = pipeline::stage_prep(corpus, layout, c, make_context(f));
  std::cout << "prep: " << s.bugs << " bugs, " << s.docs << " files, " << s.links << " links\n";
  return kExitOk;
}

int cmd_matrix(const Flags& f, const pipeline::RunConfig& c) {
  const pipeline::Layout layout{f.out};
  require_path(layout.prep().string(), "prep directory");
  if (f.dry_run) {
    print_plan({"matrix " + layout.prep().string() + " -> " + layout.matrix().string()}, c);
    return kExitOk;
  }
  const auto r = pipeline::stage_matrix(layout, c, make_context(f));
  std::cout << "matrix: B=" << r.counts.bugs << " S=" << r.counts.files << " L=" << r.counts.linked
            << " Z=" << r.counts.non_linked() << " test=" << r.plan.test.size() << " folds=" << r.plan.folds.size()
            << '\n';
  return kExitOk;
}

int cmd_train(const Flags& f, const pipeline::RunConfig& c) {
  const pipeline::Layout layout{f.out};
  require_path((layout.matrix() / "foldplan.json").string(), "fold plan");
  if (f.dry_run) {
    print_plan({"train " + std::string(pipeline::to_string(c.model)) + " per fold -> " +
                (layout.root / "train").string()},
               c);
    return kExitOk;
  }
  for (const auto& s : pipeline::stage_train(layout, c, make_context(f))) {
    std::cout << "fold " << s.fold << ": vocab " << s.vocab_size << ", train " << s.train_pairs << ", val "
              << s.val_pairs << ", " << (c.model == pipeline::ModelKind::Cnn ? "best epoch " : "iterations ")
              << s.iterations << '\n';
  }
  return kExitOk;
}

int cmd_eval(const Flags& f, const pipeline::RunConfig& c) {
  const pipeline::Layout layout{f.out};
  require_path((layout.fold(0) / "model.json").string(), "trained model");
  if (f.dry_run) {
    print_plan({"eval test pairs with every fold model -> " + (layout.eval() / "report.json").string()}, c);
    return kExitOk;
  }
  pipeline::stage_eval(layout, c, make_context(f));
  auto in = io::open_input(layout.eval() / "report.txt");
  std::cout << in.rdbuf();
  return kExitOk;
}

int cmd_rank(const Flags& f, const pipeline::RunConfig& c) {
  const pipeline::Layout layout{f.out};
  require_path((layout.fold(f.fold - 1) / "model.json").string(), "trained model");
  if (f.bug_id.empty() == f.query.empty()) throw InputError("rank needs exactly one of --bug-id or --query");
  if (f.top_k < 1) throw InputError("-k must be >= 1");
  if (f.dry_run) {
    print_plan({"rank files with fold " + std::to_string(f.fold) + " model, top " + std::to_string(f.top_k)}, c);
    return kExitOk;
  }
  textprep::TokenList query;
  if (!f.bug_id.empty()) {
    const auto tc = pipeline::read_tokens(layout.prep());
    const auto it = std::find(tc.bug_ids.begin(), tc.bug_ids.end(), f.bug_id);
    if (it == tc.bug_ids.end()) throw InputError("unknown bug id: " + f.bug_id);
    query = tc.bug_tokens[static_cast<std::size_t>(it - tc.bug_ids.begin())];
  } else {
    query = textprep::normalize_bug_text(f.query);
  }
  const auto ranked = pipeline::rank_query(layout, f.fold - 1, query, f.bug_id, worker_count());
  const std::size_t k = std::min(f.top_k, ranked.files.size());
  for (std::size_t i = 0; i < k; ++i) {
    const auto& file = ranked.files[i];
    std::printf("%zu\t%.6f\t%s%s\n", i + 1, file.score, file.file_id.c_str(), file.relevant ? "\t*" : "");
  }
  return kExitOk;
}

int cmd_run(const Flags& f, pipeline::RunConfig c) {
  const pipeline::Layout layout{f.out};
  const int sources = static_cast<int>(!f.synth.empty()) + static_cast<int>(!f.corpus.empty()) +
                      static_cast<int>(!f.reports.empty());
  if (sources != 1) throw InputError("run needs exactly one of --synth, --corpus or --reports/--mapping/--repo");
  if (!f.corpus.empty()) require_path(f.corpus, "corpus directory");
  if (!f.reports.empty()) {
    require_path(f.reports, "bug reports");
    require_path(f.mapping, "fix mapping");
    require_path(f.repo, "repository");
  }
  if (f.dry_run) {
    const std::string source = !f.synth.empty() ? "synth " + f.synth : !f.corpus.empty() ? "corpus " + f.corpus
                                                                                         : "ingest " + f.repo;
    print_plan({source + " -> " + layout.corpus().string(), "prep -> " + layout.prep().string(),
                "matrix -> " + layout.matrix().string(), "train -> " + (layout.root / "train").string(),
                "eval -> " + layout.eval().string()},
               c);
    return kExitOk;
  }
  const auto start = std::chrono::steady_clock::now();
  fs::path corpus = layout.corpus();
  if (!f.synth.empty()) {
    ingest::write_corpus(layout.corpus(), synth::generate(synth_spec(f, c.seed, c.max_len)));
  } else if (!f.corpus.empty()) {
    corpus = f.corpus;
  } else if (const int rc = cmd_ingest(f, c); rc != kExitOk) {
    return rc;
  }
  const auto ctx = make_context(f);
  const auto prep = pipeline::stage_prep(corpus, layout, c, ctx);
  c = pipeline::resolve(c, prep.bugs);
  save_config(layout, c);
  pipeline::stage_matrix(layout, c, ctx);
  pipeline::stage_train(layout, c, ctx);
  pipeline::stage_eval(layout, c, ctx);
  auto in = io::open_input(layout.eval() / "report.txt");
  std::cout << in.rdbuf();
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ctx.log("run finished in " + std::to_string(secs) + " s");
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bug localization by pairwise classification of bug reports and source files"};
  app.require_subcommand(1);
  Flags f;

  auto* synth_cmd = app.add_subcommand("synth", "Generate a planted-token corpus");
  add_out(synth_cmd, f);
  add_hyper(synth_cmd, f);
  add_synth(synth_cmd, f);
  synth_cmd->add_option("--synth", f.synth, "Shorthand BUGSxFILES");

  auto* ingest_cmd = app.add_subcommand("ingest", "Extract a corpus from bug reports, a fix mapping and a git repo");
  add_out(ingest_cmd, f);
  add_hyper(ingest_cmd, f);
  add_ingest(ingest_cmd, f);

  auto* prep_cmd = app.add_subcommand("prep", "Normalize bug and source text into tokens");
  add_out(prep_cmd, f);
  add_hyper(prep_cmd, f);
  prep_cmd->add_option("--corpus", f.corpus, "Corpus directory (default OUT/corpus)");

  auto* matrix_cmd = app.add_subcommand("matrix", "Build the traceability pairs and the fold plan");
  add_out(matrix_cmd, f);
  add_hyper(matrix_cmd, f);

  auto* train_cmd = app.add_subcommand("train", "Train one model per fold");
  add_out(train_cmd, f);
  add_hyper(train_cmd, f);

  auto* eval_cmd = app.add_subcommand("eval", "Score the test pairs and write report.json");
  add_out(eval_cmd, f);
  add_hyper(eval_cmd, f);

  auto* rank_cmd = app.add_subcommand("rank", "Rank files for one bug report");
  add_out(rank_cmd, f);
  add_hyper(rank_cmd, f);
  rank_cmd->add_option("--fold", f.fold, "Fold model to use (1-based)")->check(CLI::PositiveNumber);
  rank_cmd->add_option("-k,--top", f.top_k, "Number of files to print");
  rank_cmd->add_option("--bug-id", f.bug_id, "Known bug id from the corpus");
  rank_cmd->add_option("--query", f.query, "Free bug-report text");

  auto* run_cmd = app.add_subcommand("run", "synth/ingest, prep, matrix, train and eval in one go");
  add_out(run_cmd, f);
  add_hyper(run_cmd, f);
  add_synth(run_cmd, f);
  add_ingest(run_cmd, f);
  run_cmd->add_option("--synth", f.synth, "Generate a BUGSxFILES planted corpus");
  run_cmd->add_option("--corpus", f.corpus, "Existing corpus directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  const char* stage = app.get_subcommands().front()->get_name().c_str();
  try {
    const auto config = resolve_config(f);
    const pipeline::Layout layout{f.out};
    const std::string name = stage;
    if (!f.dry_run && name != "run") {
      fs::create_directories(layout.root);
      save_config(layout, config);
    }
    if (name == "synth") return cmd_synth(f, config);
    if (name == "ingest") return cmd_ingest(f, config);
    if (name == "prep") return cmd_prep(f, config);
    if (name == "matrix") return cmd_matrix(f, config);
    if (name == "train") return cmd_train(f, config);
    if (name == "eval") return cmd_eval(f, config);
    if (name == "rank") return cmd_rank(f, config);
    if (name == "run") return cmd_run(f, config);
  } catch (const InputError& e) {
    std::cerr << "buglocate " << stage << ": error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "buglocate " << stage << ": internal error: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitInternal;
}
