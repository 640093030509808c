#pragma once

// Run manifests: one per stage invocation. Each output gets a sidecar
// "<output>.manifest.json" and the output directory's manifests.jsonl log
// gains one line.

#include <algorithm>
#include <chrono>
#include <ctime>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "falsecite/hash.hpp"
#include "falsecite/io.hpp"

namespace falsecite {

inline constexpr std::string_view kToolVersion = "0.1.0";
inline constexpr std::string_view kManifestLog = "manifests.jsonl";

/// SHA-256 of a file, or of a directory as the sorted list of
/// "<relative path>\t<sha256>" lines over its regular files.
inline std::string content_hash(const fs::path& path) {
  if (!fs::is_directory(path)) return sha256_file(path);
  std::vector<std::pair<std::string, std::string>> entries;
  for (const auto& e : fs::recursive_directory_iterator(path)) {
    if (e.is_regular_file()) entries.emplace_back(fs::relative(e.path(), path).generic_string(), sha256_file(e.path()));
  }
  std::sort(entries.begin(), entries.end());
  Sha256 h;
  for (const auto& [rel, sha] : entries) h.update(rel + "\t" + sha + "\n");
  return h.hex();
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  std::map<std::string, std::string> config_hashes;
  std::map<std::string, std::string> input_hashes;
  std::optional<std::uint64_t> seed;
  std::string tool_version{kToolVersion};
  std::optional<std::string> judge_prompt_version;
  std::string started_at;
  std::string finished_at;
  std::map<std::string, std::string> output_hashes;
  /// Stage-specific counts and exclusion lists.
  json details = json::object();

  void add_input(const fs::path& p) { input_hashes[p.generic_string()] = content_hash(p); }
  void add_config(const fs::path& p) { config_hashes[p.generic_string()] = content_hash(p); }
  void add_output(const fs::path& p) { output_hashes[p.generic_string()] = content_hash(p); }

  /// Everything except timestamps, so reruns with identical inputs and
  /// outputs share an id.
  json identity() const {
    return json{{"command", command},
                {"argv", argv},
                {"config_hashes", config_hashes},
                {"input_hashes", input_hashes},
                {"seed", seed ? json(*seed) : json(nullptr)},
                {"tool_version", tool_version},
                {"judge_prompt_version", judge_prompt_version ? json(*judge_prompt_version) : json(nullptr)},
                {"output_hashes", output_hashes},
                {"details", details}};
  }

  std::string id() const { return sha256_hex(identity().dump()); }

  json to_json() const {
    json j = identity();
    j["manifest_id"] = id();
    j["started_at"] = started_at;
    j["finished_at"] = finished_at;
    return j;
  }
};

inline fs::path sidecar_path(const fs::path& output) { return fs::path(output.string() + ".manifest.json"); }

/// Writes a sidecar next to every output and appends to the log in the
/// directory of the first output.
inline void publish_manifest(const RunManifest& m, const std::vector<fs::path>& outputs) {
  if (outputs.empty()) return;
  const json j = m.to_json();
  for (const auto& out : outputs) {
    AtomicFile f(sidecar_path(out));
    f.stream() << j.dump(2) << '\n';
    f.commit();
  }
  const fs::path dir = outputs.front().has_parent_path() ? outputs.front().parent_path() : fs::path(".");
  std::ofstream log(dir / kManifestLog, std::ios::app | std::ios::binary);
  if (!log) throw Error("cannot append to " + (dir / kManifestLog).string());
  write_jsonl_line(log, j);
}

}  // namespace falsecite
