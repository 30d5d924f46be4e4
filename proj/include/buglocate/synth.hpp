#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "buglocate/common.hpp"
#include "buglocate/corpus.hpp"

namespace buglocate::synth {

struct SynthSpec {
  std::size_t num_bugs = 50;
  std::size_t num_files = 200;
  std::size_t planted = 5;      // tokens shared by each linked pair
  std::size_t background = 200;  // size of the shared noise vocabulary
  std::size_t noise = 20;       // noise tokens per bug report and per file
  std::size_t max_len = 64;     // planted + noise must fit
  std::uint64_t seed = 1;

  void validate() const {
    if (num_bugs < 1) throw InputError("synth: need at least one bug");
    if (num_files < num_bugs) throw InputError("synth: need at least as many files as bugs");
    if (planted < 1) throw InputError("synth: need at least one planted token per link");
    if (noise > 0 && background < 1) throw InputError("synth: noise needs a background vocabulary");
    if (planted + noise > max_len) throw InputError("synth: planted + noise tokens exceed the max length");
  }
};

namespace detail {

// Consonants other than s and y: words over this alphabet have no vowels, so
// the stemmer leaves them alone, and none of them is a keyword or stop word.
inline constexpr char kAlphabet[] = "bcdfghjklmnpqrtvwxz";
inline constexpr std::size_t kRadix = sizeof kAlphabet - 1;

inline std::string encode(std::size_t value, std::size_t width) {
  std::string out(width, kAlphabet[0]);
  for (std::size_t i = width; i-- > 0;) {
    out[i] = kAlphabet[value % kRadix];
    value /= kRadix;
  }
  return out;
}

inline std::size_t width_for(std::size_t count) {
  std::size_t width = 1;
  for (std::size_t cap = kRadix; cap < count; cap *= kRadix) ++width;
  return width;
}

inline std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

inline std::string zero_pad(std::size_t v, std::size_t width) {
  auto s = std::to_string(v);
  return std::string(width > s.size() ? width - s.size() : 0, '0') + s;
}

}  // namespace detail

/// Planted token `slot` of bug `bug`; reserved to that bug.
inline std::string planted_token(const SynthSpec& spec, std::size_t bug, std::size_t slot) {
  return "zq" + detail::encode(bug * spec.planted + slot, detail::width_for(spec.num_bugs * spec.planted));
}

inline std::string background_token(const SynthSpec& spec, std::size_t i) {
  return "xk" + detail::encode(i, detail::width_for(spec.background));
}

/// Bug i is linked to file i and both carry bug i's planted tokens. Every
/// bug report and file also gets `noise` background tokens drawn with
/// replacement; token order within a text is shuffled.
inline Corpus generate(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const auto text = [&](std::size_t planted_for) {
    std::vector<std::string> words;
    if (planted_for != SIZE_MAX) {
      for (std::size_t k = 0; k < spec.planted; ++k) words.push_back(planted_token(spec, planted_for, k));
    }
    for (std::size_t k = 0; k < spec.noise; ++k) words.push_back(background_token(spec, rng.below(spec.background)));
    rng.shuffle(words);
    return detail::join(words);
  };

  const std::size_t bug_width = std::to_string(spec.num_bugs).size();
  const std::size_t file_width = std::to_string(spec.num_files).size();
  Corpus corpus;
  for (std::size_t i = 0; i < spec.num_bugs; ++i) {
    BugReport b;
    b.id = "SYN-" + detail::zero_pad(i + 1, bug_width);
    b.summary = text(i);
    b.fix_commits = {"synthetic"};
    corpus.bugs.push_back(std::move(b));
  }
  for (std::size_t i = 0; i < spec.num_files; ++i) {
    SourceDoc d;
    d.file_id = "src/synth/File" + detail::zero_pad(i + 1, file_width) + ".java";
    d.raw_text = text(i < spec.num_bugs ? i : SIZE_MAX);
    d.bugginess = i < spec.num_bugs ? 1 : 0;
    corpus.docs.push_back(std::move(d));
  }
  for (std::size_t i = 0; i < spec.num_bugs; ++i) {
    corpus.links.push_back({corpus.bugs[i].id, corpus.docs[i].file_id, "synthetic"});
  }
  return corpus;
}

}  // namespace buglocate::synth
