#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "buglocate/common.hpp"
#include "buglocate/corpus.hpp"
#include "buglocate/process.hpp"

namespace buglocate::ingest {

/// A non-fatal extraction failure (root commit, file added by the fix, unreadable file).
struct Skip {
  std::string what;
  std::string reason;
};

namespace detail {

inline std::string string_field(const nlohmann::json& j, const char* key, const std::string& where) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) return {};
  if (!it->is_string()) throw InputError(where + ": field '" + key + "' must be a string");
  return it->get<std::string>();
}

inline std::vector<std::string> split_tabs(std::string_view line) {
  std::vector<std::string> cols;
  std::size_t pos = 0;
  while (true) {
    const std::size_t tab = line.find('\t', pos);
    cols.emplace_back(trim(line.substr(pos, tab == std::string_view::npos ? line.npos : tab - pos)));
    if (tab == std::string_view::npos) break;
    pos = tab + 1;
  }
  return cols;
}

}  // namespace detail

/// Reads JSON-Lines bug reports. Accepts `{id, summary, description, fix_commits}`
/// and the corpus form `{id, text}`.
inline std::vector<BugReport> parse_bug_reports(const std::filesystem::path& path) {
  std::vector<BugReport> reports;
  std::unordered_set<std::string> ids;
  io::for_each_json_line(path, [&](const nlohmann::json& j, std::size_t lineno) {
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (!j.is_object()) throw InputError(where + ": expected a JSON object");
    BugReport r;
    r.id = detail::string_field(j, "id", where);
    r.summary = detail::string_field(j, "summary", where);
    r.description = detail::string_field(j, "description", where);
    if (r.summary.empty() && r.description.empty()) r.summary = detail::string_field(j, "text", where);
    if (const auto it = j.find("fix_commits"); it != j.end() && !it->is_null()) {
      if (!it->is_array()) throw InputError(where + ": field 'fix_commits' must be an array");
      for (const auto& c : *it) {
        if (!c.is_string()) throw InputError(where + ": fix_commits entries must be strings");
        r.fix_commits.push_back(c.get<std::string>());
      }
    }
    if (trim(r.id).empty()) throw InputError(where + ": missing bug id");
    if (trim(r.summary).empty() && trim(r.description).empty()) {
      throw InputError(where + ": bug " + r.id + " has no text");
    }
    if (!ids.insert(r.id).second) throw InputError(where + ": duplicate bug id " + r.id);
    reports.push_back(std::move(r));
  });
  return reports;
}

struct MappingResult {
  std::vector<FixMapping> mappings;
  std::vector<std::string> warnings;
};

/// Reads a `bug_id<TAB>file_path<TAB>commit_hash` table, dropping `#` comments,
/// an optional header row and duplicate (bug, file) rows (first row wins).
/// When `reports` is given, rows naming unknown bugs are dropped with a warning.
inline MappingResult parse_fix_mapping(const std::filesystem::path& path,
                                       const std::vector<BugReport>* reports = nullptr) {
  std::unordered_set<std::string> known;
  if (reports) {
    for (const auto& r : *reports) known.insert(r.id);
  }
  MappingResult result;
  std::set<std::pair<std::string, std::string>> seen;
  auto in = io::open_input(path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string_view t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    auto cols = detail::split_tabs(line);
    if (cols.size() != 3 || cols[0].empty() || cols[1].empty() || cols[2].empty()) {
      throw InputError(path.string() + ":" + std::to_string(lineno) +
                       ": expected bug_id, file_path, commit_hash separated by tabs");
    }
    if (cols[0] == "bug_id" && cols[1] == "file_path") continue;
    if (reports && !known.contains(cols[0])) {
      result.warnings.push_back(path.string() + ":" + std::to_string(lineno) +
                                ": unknown bug id " + cols[0]);
      continue;
    }
    if (!seen.emplace(cols[0], cols[1]).second) continue;
    result.mappings.push_back({std::move(cols[0]), std::move(cols[1]), std::move(cols[2])});
  }
  return result;
}

/// File text at the parent of a fixing commit.
struct BeforeFixDoc {
  std::string file_path;
  std::string commit_hash;
  std::string parent_hash;
  long long commit_time = 0;
  std::string raw_text;

  SourceDoc as_source_doc() const { return {file_path + "@" + commit_hash, raw_text, 0}; }
};

struct ExtractResult {
  std::optional<BeforeFixDoc> doc;
  std::optional<Skip> skip;
};

/// Reads the before-fix revision of `mapping.file_path` through `git show`,
/// which leaves HEAD and the working tree untouched.
inline ExtractResult extract_before_fix(const std::filesystem::path& repo, const FixMapping& mapping) {
  const std::string& commit = mapping.commit_hash;
  const std::string what = mapping.file_path + "@" + commit;
  if (process::git(repo, {"rev-parse", "--verify", "--quiet", commit + "^{commit}"}).exit_code != 0) {
    throw InputError("commit not found in " + repo.string() + ": " + commit);
  }
  const auto parent = process::git(repo, {"rev-parse", "--verify", "--quiet", commit + "^1"});
  if (parent.exit_code != 0) return {std::nullopt, Skip{what, "commit has no parent"}};
  BeforeFixDoc doc;
  doc.file_path = mapping.file_path;
  doc.commit_hash = commit;
  doc.parent_hash = std::string(trim(parent.out));
  const auto time = process::git(repo, {"show", "-s", "--format=%ct", commit});
  doc.commit_time = time.exit_code == 0 ? std::stoll(std::string(trim(time.out))) : 0;
  auto content = process::git(repo, {"show", doc.parent_hash + ":" + mapping.file_path});
  if (content.exit_code != 0) return {std::nullopt, Skip{what, "file absent before the fix"}};
  doc.raw_text = std::move(content.out);
  return {std::move(doc), std::nullopt};
}

struct SnapshotResult {
  std::vector<SourceDoc> docs;
  std::vector<Skip> skips;
};

/// Every tracked file with the given extension, read from the working tree,
/// in path order. All documents start with bugginess 0.
inline SnapshotResult snapshot_repo_files(const std::filesystem::path& repo,
                                          const std::string& extension = ".java") {
  if (!std::filesystem::is_directory(repo)) throw InputError("repository not found: " + repo.string());
  const auto listing = process::git(repo, {"ls-files", "-z"});
  if (listing.exit_code != 0) throw InputError("not a git repository: " + repo.string());
  SnapshotResult result;
  std::vector<std::string> paths;
  std::size_t pos = 0;
  while (pos < listing.out.size()) {
    const std::size_t end = listing.out.find('\0', pos);
    std::string p = listing.out.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
    pos = end == std::string::npos ? listing.out.size() : end + 1;
    if (p.size() >= extension.size() && p.compare(p.size() - extension.size(), extension.size(), extension) == 0) {
      paths.push_back(std::move(p));
    }
  }
  std::sort(paths.begin(), paths.end());
  for (auto& p : paths) {
    std::ifstream in(repo / p, std::ios::binary);
    if (!in) {
      result.skips.push_back({p, "unreadable file"});
      continue;
    }
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    result.docs.push_back({std::move(p), std::move(text), 0});
  }
  return result;
}

/// Merges before-fix revisions into the snapshot and labels bugginess.
///
/// A (bug, file) mapping becomes a link only if its before-fix text exists.
/// Mapped files carry the before-fix text of their earliest fixing commit.
inline Corpus build_corpus(std::vector<BugReport> reports, const std::vector<FixMapping>& mappings,
                           const std::vector<BeforeFixDoc>& before_fix_docs,
                           const std::vector<SourceDoc>& snapshot_docs) {
  std::unordered_map<std::string, std::size_t> bug_order;
  for (std::size_t i = 0; i < reports.size(); ++i) bug_order.emplace(reports[i].id, i);

  std::map<std::pair<std::string, std::string>, const BeforeFixDoc*> before_fix;
  for (const auto& d : before_fix_docs) before_fix.emplace(std::pair{d.file_path, d.commit_hash}, &d);

  std::map<std::string, SourceDoc> docs;
  for (const auto& d : snapshot_docs) docs.emplace(d.file_id, SourceDoc{d.file_id, d.raw_text, 0});

  struct FileLinks {
    std::set<std::string> bugs;
    const BeforeFixDoc* earliest = nullptr;
  };
  std::map<std::string, FileLinks> linked;
  std::vector<FixMapping> links;
  for (const auto& m : mappings) {
    if (!bug_order.contains(m.bug_id)) continue;
    const auto it = before_fix.find({m.file_path, m.commit_hash});
    if (it == before_fix.end()) continue;
    auto& fl = linked[m.file_path];
    if (!fl.bugs.insert(m.bug_id).second) continue;
    const BeforeFixDoc* d = it->second;
    if (!fl.earliest || d->commit_time < fl.earliest->commit_time ||
        (d->commit_time == fl.earliest->commit_time && d->commit_hash < fl.earliest->commit_hash)) {
      fl.earliest = d;
    }
    links.push_back(m);
  }
  for (const auto& [path, fl] : linked) {
    auto& doc = docs[path];
    doc.file_id = path;
    doc.raw_text = fl.earliest->raw_text;
    doc.bugginess = static_cast<int>(fl.bugs.size());
  }

  std::sort(links.begin(), links.end(), [&](const FixMapping& a, const FixMapping& b) {
    const auto ba = bug_order.at(a.bug_id);
    const auto bb = bug_order.at(b.bug_id);
    return ba != bb ? ba < bb : a.file_path < b.file_path;
  });

  Corpus corpus;
  corpus.bugs = std::move(reports);
  corpus.docs.reserve(docs.size());
  for (auto& [_, d] : docs) corpus.docs.push_back(std::move(d));
  corpus.links = std::move(links);
  return corpus;
}

/// Writes `bugs.jsonl`, `docs.jsonl` and `links.tsv` under `dir`.
inline void write_corpus(const std::filesystem::path& dir, const Corpus& corpus) {
  std::filesystem::create_directories(dir);
  {
    auto out = io::open_output(dir / "bugs.jsonl");
    for (const auto& b : corpus.bugs) io::write_json_line(out, {{"id", b.id}, {"text", b.text()}});
  }
  {
    auto out = io::open_output(dir / "docs.jsonl");
    for (const auto& d : corpus.docs) {
      io::write_json_line(out, {{"file_id", d.file_id}, {"bugginess", d.bugginess}, {"raw_text", d.raw_text}});
    }
  }
  auto out = io::open_output(dir / "links.tsv");
  out << "# bug_id\tfile_path\tcommit_hash\n";
  for (const auto& l : corpus.links) out << l.bug_id << '\t' << l.file_path << '\t' << l.commit_hash << '\n';
}

inline std::vector<SourceDoc> parse_docs(const std::filesystem::path& path) {
  std::vector<SourceDoc> docs;
  std::unordered_set<std::string> ids;
  io::for_each_json_line(path, [&](const nlohmann::json& j, std::size_t lineno) {
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (!j.is_object()) throw InputError(where + ": expected a JSON object");
    SourceDoc d;
    d.file_id = detail::string_field(j, "file_id", where);
    d.raw_text = detail::string_field(j, "raw_text", where);
    if (const auto it = j.find("bugginess"); it != j.end()) {
      if (!it->is_number_integer() || it->get<long long>() < 0) {
        throw InputError(where + ": bugginess must be a non-negative integer");
      }
      d.bugginess = it->get<int>();
    }
    if (d.file_id.empty()) throw InputError(where + ": missing file_id");
    if (!ids.insert(d.file_id).second) throw InputError(where + ": duplicate file_id " + d.file_id);
    docs.push_back(std::move(d));
  });
  return docs;
}

/// Reads a corpus directory written by write_corpus (or the synthetic generator).
/// Links to unknown bugs or absent files are dropped and reported in `warnings`.
inline Corpus read_corpus(const std::filesystem::path& dir, std::vector<std::string>* warnings = nullptr) {
  Corpus corpus;
  corpus.bugs = parse_bug_reports(dir / "bugs.jsonl");
  corpus.docs = parse_docs(dir / "docs.jsonl");
  auto mapping = parse_fix_mapping(dir / "links.tsv", &corpus.bugs);
  std::unordered_set<std::string> files;
  for (const auto& d : corpus.docs) files.insert(d.file_id);
  for (auto& m : mapping.mappings) {
    if (files.contains(m.file_path)) {
      corpus.links.push_back(std::move(m));
    } else {
      mapping.warnings.push_back("link to absent file dropped: " + m.bug_id + " -> " + m.file_path);
    }
  }
  if (warnings) *warnings = std::move(mapping.warnings);
  return corpus;
}

}  // namespace buglocate::ingest
