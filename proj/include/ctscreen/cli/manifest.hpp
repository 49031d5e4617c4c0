#pragma once

// Headerless CSV manifest: path,label[,fold]. Relative paths resolve against
// the manifest's directory.

#include <filesystem>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ctscreen/cli/config.hpp"
#include "ctscreen/error.hpp"
#include "ctscreen/io_util.hpp"
#include "ctscreen/nifti_io.hpp"

namespace ctscreen::cli {

enum class Severity { NOR, MiNCP, MoNCP, SeNCP, CrNCP };

inline Severity parse_severity(const std::string& s) {
  static const char* names[] = {"NOR", "MiNCP", "MoNCP", "SeNCP", "CrNCP"};
  for (int i = 0; i < 5; ++i)
    if (s == names[i]) return static_cast<Severity>(i);
  fail(ErrorCode::ManifestError, "unknown label '" + s + "'");
}

/// Binary: NOR vs every NCP grade. Multiclass: severe and critical share a class.
inline int class_index(Severity sev, Protocol p) {
  const int v = static_cast<int>(sev);
  if (p == Protocol::Binary) return v == 0 ? 0 : 1;
  return std::min(v, 3);
}

inline std::vector<std::string> class_names(std::size_t k) {
  if (k == 2) return {"NOR", "NCP"};
  if (k == 4) return {"NOR", "MiNCP", "MoNCP", "SeNCP"};
  fail(ErrorCode::ProtocolMismatch, "no protocol has " + std::to_string(k) + " classes");
}

struct ManifestRow {
  std::filesystem::path path;
  Severity severity = Severity::NOR;
  std::optional<int> fold;
  std::string source_id;
};

struct Manifest {
  std::vector<ManifestRow> rows;

  std::vector<int> labels(Protocol p) const {
    std::vector<int> y;
    for (const auto& r : rows) y.push_back(class_index(r.severity, p));
    return y;
  }
};

inline Manifest parse_manifest(const std::string& text, const std::filesystem::path& base = {}) {
  Manifest m;
  std::set<std::string> paths, ids;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty()) continue;
    const std::string where = "manifest line " + std::to_string(lineno) + ": ";
    const auto cols = detail::split(line, ',');
    if (cols.size() < 2 || cols.size() > 3) fail(ErrorCode::ManifestError, where + "expected path,label[,fold]");
    ManifestRow row;
    if (cols[0].empty()) fail(ErrorCode::ManifestError, where + "empty path");
    row.path = std::filesystem::path(cols[0]);
    if (row.path.is_relative() && !base.empty()) row.path = base / row.path;
    try {
      row.severity = parse_severity(cols[1]);
      if (cols.size() == 3 && !cols[2].empty()) row.fold = detail::parse_number<int>(cols[2]);
    } catch (const std::exception& e) {
      fail(ErrorCode::ManifestError, where + e.what());
    }
    if (row.fold && *row.fold < 0) fail(ErrorCode::ManifestError, where + "negative fold");
    row.source_id = nifti::source_id_of(row.path);
    if (!paths.insert(row.path.lexically_normal().string()).second)
      fail(ErrorCode::ManifestError, where + "duplicate path " + cols[0]);
    if (!ids.insert(row.source_id).second)
      fail(ErrorCode::ManifestError, where + "duplicate scan id " + row.source_id);
    m.rows.push_back(std::move(row));
  }
  if (m.rows.empty()) fail(ErrorCode::ManifestError, "manifest has no rows");
  return m;
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  const Bytes b = read_file(path);
  return parse_manifest(std::string(b.begin(), b.end()), path.parent_path());
}

}  // namespace ctscreen::cli
