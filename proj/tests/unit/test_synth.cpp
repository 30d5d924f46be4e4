#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <string>

#include "buglocate/synth.hpp"
#include "buglocate/textprep.hpp"

using namespace buglocate;

TEST(Synth, ShapeAndLinks) {
  synth::SynthSpec spec;
  const auto c = synth::generate(spec);
  ASSERT_EQ(c.bugs.size(), 50u);
  ASSERT_EQ(c.docs.size(), 200u);
  ASSERT_EQ(c.links.size(), 50u);
  EXPECT_EQ(c.bugs[0].id, "SYN-01");
  EXPECT_EQ(c.docs[199].file_id, "src/synth/File200.java");
  for (std::size_t i = 0; i < 50; ++i) {
    EXPECT_EQ(c.links[i].bug_id, c.bugs[i].id);
    EXPECT_EQ(c.links[i].file_path, c.docs[i].file_id);
  }
  for (std::size_t i = 0; i < 200; ++i) EXPECT_EQ(c.docs[i].bugginess, i < 50 ? 1 : 0);
}

TEST(Synth, PlantedTokensSurviveNormalization) {
  synth::SynthSpec spec;
  spec.num_bugs = 10;
  spec.num_files = 30;
  const auto c = synth::generate(spec);
  for (std::size_t i = 0; i < spec.num_bugs; ++i) {
    const auto bug = textprep::normalize_bug_text(c.bugs[i].text());
    const auto file = textprep::normalize_source(c.docs[i].raw_text);
    EXPECT_EQ(bug.size(), spec.planted + spec.noise);
    EXPECT_EQ(file.size(), spec.planted + spec.noise);
    const std::set<std::string> b(bug.begin(), bug.end()), f(file.begin(), file.end());
    for (std::size_t k = 0; k < spec.planted; ++k) {
      const auto tok = synth::planted_token(spec, i, k);
      EXPECT_TRUE(b.contains(tok)) << tok;
      EXPECT_TRUE(f.contains(tok)) << tok;
      // reserved to bug i: no other file carries it
      for (std::size_t j = 0; j < spec.num_files; ++j) {
        if (j != i) {
          EXPECT_EQ(c.docs[j].raw_text.find(tok), std::string::npos);
        }
      }
    }
  }
}

TEST(Synth, DeterministicPerSeed) {
  synth::SynthSpec spec;
  spec.num_bugs = 5;
  spec.num_files = 10;
  const auto a = synth::generate(spec);
  const auto b = synth::generate(spec);
  spec.seed = 2;
  const auto c = synth::generate(spec);
  EXPECT_EQ(a.bugs[3].summary, b.bugs[3].summary);
  EXPECT_EQ(a.docs[7].raw_text, b.docs[7].raw_text);
  EXPECT_NE(a.docs[7].raw_text, c.docs[7].raw_text);
}

TEST(Synth, Validation) {
  synth::SynthSpec spec;
  spec.num_files = 10;
  EXPECT_THROW(synth::generate(spec), InputError);
  spec = {};
  spec.max_len = 10;
  EXPECT_THROW(synth::generate(spec), InputError);
  spec = {};
  spec.planted = 0;
  EXPECT_THROW(synth::generate(spec), InputError);
}

TEST(Synth, SingleLinkSharesExactlyK) {
  synth::SynthSpec spec;
  spec.num_bugs = 1;
  spec.num_files = 1;
  spec.planted = 3;
  const auto c = synth::generate(spec);
  ASSERT_EQ(c.links.size(), 1u);
  const auto bug = textprep::normalize_bug_text(c.bugs[0].text());
  const auto file = textprep::normalize_source(c.docs[0].raw_text);
  std::set<std::string> shared;
  for (const auto& t : bug) {
    if (t.rfind("zq", 0) == 0 && std::find(file.begin(), file.end(), t) != file.end()) shared.insert(t);
  }
  EXPECT_EQ(shared.size(), 3u);
}

TEST(Synth, ConstructionAuditOverAllPairs) {
  const synth::SynthSpec spec;
  const auto c = synth::generate(spec);
  const auto planted = [](const std::string& text) {
    std::set<std::string> out;
    for (const auto& t : textprep::normalize_bug_text(text)) {
      if (t.rfind("zq", 0) == 0) out.insert(t);
    }
    return out;
  };
  std::vector<std::set<std::string>> files;
  for (const auto& d : c.docs) files.push_back(planted(d.raw_text));
  for (std::size_t b = 0; b < c.bugs.size(); ++b) {
    const auto bp = planted(c.bugs[b].text());
    for (std::size_t f = 0; f < files.size(); ++f) {
      std::size_t shared = 0;
      for (const auto& t : bp) shared += files[f].count(t);
      if (f == b) {
        EXPECT_GE(shared, spec.planted);
      } else {
        EXPECT_EQ(shared, 0u) << "bug " << b << " file " << f;
      }
    }
  }
}
