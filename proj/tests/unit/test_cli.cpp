#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <string>

#include "buglocate/corpus.hpp"
#include "buglocate/textprep.hpp"
#include "oracles.hpp"

using namespace buglocate;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string output;
};

Outcome cli(const std::string& args) {
  const std::string cmd = std::string(BUGLOCATE_CLI_PATH) + " " + args + " 2>&1";
  Outcome o;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return o;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) o.output.append(buf, n);
  const int status = ::pclose(pipe);
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return o;
}

const std::string kSmallRun =
    "run --synth 12x30 --noise 10 --max-len 32 --folds 3 --seed 5 --max-boost-iters 15 -q --out ";

std::size_t count_lines(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

}  // namespace

TEST(Cli, MissingInputExitsTwoAndNamesPath) {
  const auto dir = oracle::temp_dir("cli");
  const auto missing = dir / "no_such_corpus";
  const auto o = cli("prep --out " + (dir / "w").string() + " --corpus " + missing.string());
  EXPECT_EQ(o.code, 2) << o.output;
  EXPECT_NE(o.output.find(missing.string()), std::string::npos) << o.output;
  fs::remove_all(dir);
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(cli("train").code, 2);
  EXPECT_EQ(cli("run --out /tmp/x --model svm --dry-run").code, 2);
  EXPECT_EQ(cli("frobnicate").code, 2);
}

TEST(Cli, DryRunHasNoSideEffects) {
  const auto dir = oracle::temp_dir("cli");
  const auto work = dir / "w";
  const auto o = cli(kSmallRun + work.string() + " --dry-run");
  EXPECT_EQ(o.code, 0) << o.output;
  EXPECT_FALSE(o.output.empty());
  EXPECT_FALSE(fs::exists(work));
  fs::remove_all(dir);
}

TEST(Cli, RunThenRankAndVocabularyMismatch) {
  const auto dir = oracle::temp_dir("cli");
  const auto work = (dir / "w").string();
  const auto run = cli(kSmallRun + work);
  ASSERT_EQ(run.code, 0) << run.output;
  EXPECT_TRUE(fs::exists(dir / "w" / "eval" / "report.json"));
  EXPECT_NE(run.output.find("MAP"), std::string::npos);

  const auto rank = cli("rank --out " + work + " --bug-id SYN-01 -k 3");
  ASSERT_EQ(rank.code, 0) << rank.output;
  EXPECT_EQ(count_lines(rank.output), 3u) << rank.output;
  EXPECT_NE(rank.output.find("src/synth/File"), std::string::npos);

  const auto query = cli("rank --out " + work + " --query 'zqbbb xkbb' -k 2");
  EXPECT_EQ(query.code, 0) << query.output;

  const auto fold = dir / "w" / "train" / "fold_1";
  textprep::Vocabulary(textprep::TokenList{"stale"}).save(fold / "vocab.txt");
  const auto model_hash = hex64(fnv1a(io::read_json_file(fold / "model.json").dump()));
  const auto bad = cli("rank --out " + work + " --bug-id SYN-01");
  EXPECT_EQ(bad.code, 2) << bad.output;
  EXPECT_NE(bad.output.find(model_hash), std::string::npos) << bad.output;
  fs::remove_all(dir);
}
