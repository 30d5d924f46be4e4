#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "buglocate/common.hpp"

namespace buglocate {

struct BugReport {
  std::string id;
  std::string summary;
  std::string description;
  std::vector<std::string> fix_commits;

  /// Query text: summary and description joined by a space.
  std::string text() const {
    if (description.empty()) return summary;
    if (summary.empty()) return description;
    return summary + " " + description;
  }
};

struct FixMapping {
  std::string bug_id;
  std::string file_path;
  std::string commit_hash;
};

struct SourceDoc {
  std::string file_id;
  std::string raw_text;
  int bugginess = 0;

  bool buggy() const { return bugginess >= 1; }
};

/// Bug reports, source documents and the bug->file links between them.
struct Corpus {
  std::vector<BugReport> bugs;
  std::vector<SourceDoc> docs;
  std::vector<FixMapping> links;
};

namespace io {

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open input file: " + path.string());
  return in;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open output file: " + path.string());
  return out;
}

/// Calls `fn(json, line_number)` for every non-blank line; line numbers are 1-based.
inline void for_each_json_line(const std::filesystem::path& path,
                               const std::function<void(const nlohmann::json&, std::size_t)>& fn) {
  auto in = open_input(path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": malformed JSON: " +
                       e.what());
    }
    fn(j, lineno);
  }
}

inline void write_json_line(std::ostream& out, const nlohmann::json& j) {
  out << j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  auto out = open_output(path);
  out << j.dump(2, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  auto in = open_input(path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(path.string() + ": malformed JSON: " + e.what());
  }
}

}  // namespace io
}  // namespace buglocate
