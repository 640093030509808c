#pragma once

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <system_error>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "falsecite/error.hpp"
#include "falsecite/text.hpp"

namespace falsecite {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace detail {
inline std::string temp_suffix() {
  static std::atomic<unsigned> counter{0};
  return ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter++);
}
}  // namespace detail

/// Output file written to a sibling temp path and renamed into place on
/// commit(). An uncommitted file is removed on destruction.
class AtomicFile {
 public:
  explicit AtomicFile(fs::path target, std::ios::openmode mode = std::ios::out | std::ios::trunc)
      : target_(std::move(target)), temp_(target_.string() + detail::temp_suffix()) {
    if (target_.has_parent_path()) {
      std::error_code ec;
      fs::create_directories(target_.parent_path(), ec);
    }
    out_.open(temp_, mode | std::ios::binary);
    if (!out_) throw Error("cannot open " + temp_.string() + " for writing");
  }

  AtomicFile(const AtomicFile&) = delete;
  AtomicFile& operator=(const AtomicFile&) = delete;

  ~AtomicFile() {
    if (!committed_) {
      out_.close();
      std::error_code ec;
      fs::remove(temp_, ec);
    }
  }

  std::ostream& stream() { return out_; }
  const fs::path& target() const { return target_; }

  void commit() {
    out_.flush();
    if (!out_) throw Error("write failed for " + target_.string());
    out_.close();
    std::error_code ec;
    fs::rename(temp_, target_, ec);
    if (ec) throw Error("cannot move output into place at " + target_.string() + ": " + ec.message());
    committed_ = true;
  }

 private:
  fs::path target_;
  fs::path temp_;
  std::ofstream out_;
  bool committed_ = false;
};

/// Calls fn(record, line_number) for every non-blank line. Line numbers are
/// 1-based. Malformed JSON raises RecordError.
inline void for_each_jsonl(const fs::path& path, const std::function<void(const json&, std::size_t)>& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw RecordError(path.string(), line_no, std::string("invalid JSON: ") + e.what());
    }
    fn(record, line_no);
  }
  if (in.bad()) throw Error("read error on " + path.string());
}

inline void write_jsonl_line(std::ostream& out, const json& record) { out << record.dump() << '\n'; }

inline std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Reads one entry per line, dropping the line terminator (and a trailing CR)
/// but nothing else; blank lines and lines starting with '#' are skipped.
inline std::vector<std::string> read_list_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::string> items;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (is_blank(line) || trim(line).front() == '#') continue;
    items.push_back(line);
  }
  return items;
}

}  // namespace falsecite
