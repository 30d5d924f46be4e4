#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "buglocate/common.hpp"
#include "buglocate/porter.hpp"

namespace buglocate::textprep {

using TokenList = std::vector<std::string>;

// Java reserved words (50 keywords) plus the literals true/false/null.
inline const std::unordered_set<std::string_view>& java_keywords() {
  static const std::unordered_set<std::string_view> words = {
      "abstract", "assert", "boolean", "break", "byte", "case", "catch", "char",
      "class", "const", "continue", "default", "do", "double", "else", "enum",
      "extends", "final", "finally", "float", "for", "goto", "if", "implements",
      "import", "instanceof", "int", "interface", "long", "native", "new", "package",
      "private", "protected", "public", "return", "short", "static", "strictfp",
      "super", "switch", "synchronized", "this", "throw", "throws", "transient", "try",
      "void", "volatile", "while", "true", "false", "null"};
  return words;
}

// Articles, prepositions, pronouns, conjunctions and auxiliaries.
inline const std::unordered_set<std::string_view>& english_stop_words() {
  static const std::unordered_set<std::string_view> words = {
      "a", "an", "the", "in", "on", "at", "of", "to", "for", "from", "by", "with",
      "into", "onto", "about", "as", "over", "under", "is", "are", "was", "were", "be",
      "been", "being", "am", "it", "its", "this", "that", "these", "those", "i", "me",
      "my", "we", "us", "our", "you", "your", "he", "him", "his", "she", "her", "they",
      "them", "their", "and", "or", "but", "if", "then", "so", "do", "does", "did",
      "has", "have", "had", "there", "which", "who", "whom", "what", "when", "where",
      "will", "would", "can", "could", "should", "shall", "may", "might", "must"};
  return words;
}

inline bool is_ascii_alpha(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
}
inline bool is_upper(char c) { return c >= 'A' && c <= 'Z'; }
inline bool is_lower(char c) { return c >= 'a' && c <= 'z'; }

/// Splits an identifier at lower->upper boundaries and before the last
/// capital of a capital run that is followed by a lowercase letter.
inline TokenList camel_split(std::string_view token) {
  TokenList parts;
  std::size_t start = 0;
  for (std::size_t i = 1; i < token.size(); ++i) {
    const char prev = token[i - 1];
    const char cur = token[i];
    const bool lower_to_upper = !is_upper(prev) && is_upper(cur);
    const bool acronym_end = is_upper(prev) && is_upper(cur) && i + 1 < token.size() &&
                             is_lower(token[i + 1]);
    if (lower_to_upper || acronym_end) {
      parts.emplace_back(token.substr(start, i - start));
      start = i;
    }
  }
  if (start < token.size()) parts.emplace_back(token.substr(start));
  return parts;
}

inline std::string porter_stem(std::string_view token) { return porter::stem(token); }

/// Removes // and /* */ comments. String and character literal contents are
/// kept; block comments are replaced by their newlines so line structure
/// survives.
inline std::string strip_comments(std::string_view src) {
  std::string out;
  out.reserve(src.size());
  enum class State { Code, Line, Block, Str, Chr } state = State::Code;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const char c = src[i];
    const char next = i + 1 < src.size() ? src[i + 1] : '\0';
    switch (state) {
      case State::Code:
        if (c == '/' && next == '/') {
          state = State::Line;
          ++i;
        } else if (c == '/' && next == '*') {
          state = State::Block;
          out.push_back(' ');
          ++i;
        } else {
          if (c == '"') state = State::Str;
          if (c == '\'') state = State::Chr;
          out.push_back(c);
        }
        break;
      case State::Line:
        if (c == '\n') {
          state = State::Code;
          out.push_back('\n');
        }
        break;
      case State::Block:
        if (c == '*' && next == '/') {
          state = State::Code;
          ++i;
        } else if (c == '\n') {
          out.push_back('\n');
        }
        break;
      case State::Str:
      case State::Chr:
        out.push_back(c);
        if (c == '\\' && next != '\0') {
          out.push_back(next);
          ++i;
        } else if ((state == State::Str && c == '"') || (state == State::Chr && c == '\'') ||
                   c == '\n') {
          state = State::Code;
        }
        break;
    }
  }
  return out;
}

/// Drops `package ...;` and `import ...;` declaration lines.
inline std::string drop_declarations(std::string_view src) {
  std::string out;
  out.reserve(src.size());
  std::size_t pos = 0;
  while (pos <= src.size()) {
    std::size_t eol = src.find('\n', pos);
    if (eol == std::string_view::npos) eol = src.size();
    const std::string_view line = src.substr(pos, eol - pos);
    const std::string_view t = trim(line);
    const auto starts_decl = [&](std::string_view kw) {
      return t.size() > kw.size() && t.substr(0, kw.size()) == kw &&
             !is_ascii_alpha(t[kw.size()]) && t[kw.size()] != '_' &&
             !(t[kw.size()] >= '0' && t[kw.size()] <= '9');
    };
    if (!(starts_decl("package") || starts_decl("import"))) out.append(line);
    if (eol < src.size()) out.push_back('\n');
    pos = eol + 1;
  }
  return out;
}

/// Splits on every character that is not an ASCII letter (punctuation,
/// digits, whitespace and non-ASCII bytes all separate words).
inline TokenList alpha_words(std::string_view text) {
  TokenList words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && !is_ascii_alpha(text[i])) ++i;
    const std::size_t start = i;
    while (i < text.size() && is_ascii_alpha(text[i])) ++i;
    if (i > start) words.emplace_back(text.substr(start, i - start));
  }
  return words;
}

namespace detail {

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// camel split -> lowercase -> length guard -> optional stop list -> stem.
inline void split_and_stem(const TokenList& words, bool drop_keywords, bool drop_stop_words,
                           TokenList& out) {
  const auto& keywords = java_keywords();
  const auto& stops = english_stop_words();
  for (const auto& w : words) {
    if (drop_keywords && keywords.contains(w)) continue;
    for (const auto& part : camel_split(w)) {
      if (part.size() < 2) continue;
      std::string lower = to_lower(part);
      if (drop_stop_words && stops.contains(lower)) continue;
      std::string stemmed = porter::stem(lower);
      if (stemmed.size() < 2) continue;
      out.push_back(std::move(stemmed));
    }
  }
}

}  // namespace detail

/// Source-code normalization: comments, package/import lines, punctuation and
/// digits, Java reserved words; then camel split, lowercase, Porter stem.
inline TokenList normalize_source(std::string_view raw_text) {
  const std::string code = drop_declarations(strip_comments(raw_text));
  TokenList out;
  detail::split_and_stem(alpha_words(code), /*drop_keywords=*/true, /*drop_stop_words=*/false,
                         out);
  return out;
}

/// Bug-report normalization: punctuation and digits, camel split, lowercase,
/// English stop words, Porter stem.
inline TokenList normalize_bug_text(std::string_view raw_text) {
  TokenList out;
  detail::split_and_stem(alpha_words(raw_text), /*drop_keywords=*/false,
                         /*drop_stop_words=*/true, out);
  return out;
}

/// Token dictionary in first-occurrence order. Index size() is reserved for
/// padding and lies outside the one-hot range.
class Vocabulary {
 public:
  Vocabulary() = default;

  explicit Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    index_.reserve(tokens_.size());
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (!index_.emplace(tokens_[i], static_cast<std::int32_t>(i)).second) {
        throw InputError("duplicate vocabulary token: " + tokens_[i]);
      }
    }
  }

  std::size_t size() const { return tokens_.size(); }
  std::int32_t pad_index() const { return static_cast<std::int32_t>(tokens_.size()); }

  /// Index of `token`, or -1 when out of vocabulary.
  std::int32_t lookup(std::string_view token) const {
    const auto it = index_.find(std::string(token));
    return it == index_.end() ? -1 : it->second;
  }

  const std::string& token(std::size_t i) const { return tokens_.at(i); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// Content hash used to tie trained models to the dictionary they saw.
  std::string hash() const {
    std::uint64_t h = fnv1a("vocab");
    for (const auto& t : tokens_) {
      h = fnv1a(t, h);
      h = fnv1a("\n", h);
    }
    return hex64(h);
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write vocabulary: " + path.string());
    for (const auto& t : tokens_) out << t << '\n';
  }

  static Vocabulary load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot read vocabulary: " + path.string());
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      tokens.push_back(line);
    }
    return Vocabulary(std::move(tokens));
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> index_;
};

inline Vocabulary build_vocabulary(std::span<const TokenList> documents) {
  std::vector<std::string> tokens;
  std::unordered_set<std::string> seen;
  for (const auto& doc : documents) {
    for (const auto& t : doc) {
      if (seen.insert(t).second) tokens.push_back(t);
    }
  }
  if (tokens.empty()) throw InputError("cannot build a vocabulary from an empty corpus");
  return Vocabulary(std::move(tokens));
}

/// Fixed-length index sequence; positions past true_length hold the pad index.
struct EncodedDoc {
  std::vector<std::int32_t> indices;
  std::size_t true_length = 0;
};

/// Keeps the first `n` in-vocabulary tokens; out-of-vocabulary tokens are dropped.
inline EncodedDoc encode_indices(std::span<const std::string> tokens, const Vocabulary& vocab,
                                 std::size_t n) {
  if (n == 0) throw InputError("max sentence length must be >= 1");
  EncodedDoc doc;
  doc.indices.assign(n, vocab.pad_index());
  for (const auto& t : tokens) {
    if (doc.true_length == n) break;
    const std::int32_t idx = vocab.lookup(t);
    if (idx >= 0) doc.indices[doc.true_length++] = idx;
  }
  return doc;
}

enum class BowMode { Presence, Count };

/// Sparse attribute vector with entries sorted by attribute index.
struct BowVector {
  std::vector<std::pair<std::uint32_t, double>> entries;

  bool empty() const { return entries.empty(); }
  double get(std::uint32_t attribute) const {
    const auto it = std::lower_bound(entries.begin(), entries.end(), attribute,
                                     [](const auto& e, std::uint32_t a) { return e.first < a; });
    return it != entries.end() && it->first == attribute ? it->second : 0.0;
  }
};

inline BowVector vectorize_bow(std::span<const std::string> tokens, const Vocabulary& vocab,
                               BowMode mode = BowMode::Presence) {
  std::vector<std::uint32_t> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) {
    const std::int32_t idx = vocab.lookup(t);
    if (idx >= 0) ids.push_back(static_cast<std::uint32_t>(idx));
  }
  std::sort(ids.begin(), ids.end());
  BowVector bow;
  for (std::size_t i = 0; i < ids.size();) {
    std::size_t j = i;
    while (j < ids.size() && ids[j] == ids[i]) ++j;
    bow.entries.emplace_back(ids[i], mode == BowMode::Presence ? 1.0 : static_cast<double>(j - i));
    i = j;
  }
  return bow;
}

}  // namespace buglocate::textprep
