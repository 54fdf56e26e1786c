#include "synthalign/jsonl.hpp"

#include <fstream>
#include <sstream>

#include "synthalign/error.hpp"
#include "synthalign/text.hpp"

namespace synthalign::jsonl {

namespace fs = std::filesystem;

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io, "cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) fail(ErrorCode::io, "short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::vector<json> read(const fs::path& path) {
  const auto content = read_text(path);
  std::vector<json> rows;
  std::size_t line_no = 0;
  for (auto line : text::split_lines(content)) {
    ++line_no;
    line = text::trim(line);
    if (line.empty()) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      fail(ErrorCode::io, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return rows;
}

void write(const fs::path& path, const std::vector<json>& rows) {
  std::string content;
  for (const auto& row : rows) {
    content += row.dump();
    content += '\n';
  }
  write_text_atomic(path, content);
}

void append(const fs::path& path, const json& row) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) fail(ErrorCode::io, "cannot append to " + path.string());
  out << row.dump() << '\n';
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    fail(ErrorCode::io, path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& value) {
  write_text_atomic(path, value.dump(2) + "\n");
}

}  // namespace synthalign::jsonl
