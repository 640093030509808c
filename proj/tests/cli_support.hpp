#pragma once

#include <chrono>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "falsecite/cli.hpp"
#include "support.hpp"

namespace falsecite::testing {

struct CliResult {
  int status = 0;
  std::string out;
  std::string err;
};

inline CliResult run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "falsecite");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out;
  std::ostringstream err;
  const int status = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {status, out.str(), err.str()};
}

inline void run_cli_or_throw(std::vector<std::string> args) {
  const auto r = run_cli(args);
  if (r.status != 0) throw Error("falsecite " + args.front() + " exited with " + std::to_string(r.status) + ": " + r.err);
}

struct PipelineRun {
  /// Relative path -> SHA-256 of every output except run manifests.
  std::map<std::string, std::string> hashes;
  double seconds = 0.0;
};

/// Synthetic dumps for every response with tokens: L=6, H=2, D=128, P = the
/// whitespace-split prompt length, seeded by response id.
inline void write_synthetic_dumps(const fs::path& responses, const fs::path& dir) {
  fs::create_directories(dir);
  for_each_jsonl(responses, [&](const json& j, std::size_t) {
    const auto r = harness::response_from_json(j);
    if (!r.ok() || !r.token_texts || r.token_texts->empty()) return;
    const std::size_t P = split_keep_spaces(r.prompt.prompt_text).size();
    const auto d = synthetic_dump(r.response_id, 6, 2, 128, P, *r.token_texts,
                                  static_cast<std::uint64_t>(r.response_id) + 1);
    activation::write_dump(dir / (std::to_string(r.response_id) + ".actdump"), d);
  });
}

/// Every stage on 200 claims (80 FEVER plus 40 SciQ questions) with offline
/// providers: ingest, pair x3, evaluate, judge, analyze, cluster, report.
inline PipelineRun run_pipeline(const fs::path& dir) {
  const auto start = std::chrono::steady_clock::now();
  const auto p = [&](const char* name) { return (dir / name).string(); };
  const std::string fixtures = kFixtures.string();
  write_file(dir / "fever.jsonl", fever_records(160, 80, 1));
  write_file(dir / "sciq.jsonl", sciq_records(40));
  run_cli_or_throw({"ingest", "--fever", p("fever.jsonl"), "--sciq", p("sciq.jsonl"), "--out", p("claims.jsonl")});
  run_cli_or_throw({"pair", "--claims", p("claims.jsonl"), "--mode", "none", "--out", p("cited_none.jsonl")});
  run_cli_or_throw(
      {"pair", "--claims", p("claims.jsonl"), "--mode", "random", "--seed", "3", "--out", p("cited_random.jsonl")});
  run_cli_or_throw({"pair", "--claims", p("claims.jsonl"), "--mode", "semantic", "--embed-config",
                    fixtures + "/embed_mock.toml", "--embed-cache", p("embeddings.jsonl"), "--out",
                    p("cited_semantic.jsonl")});
  run_cli_or_throw({"evaluate", "--cited", p("cited_none.jsonl"), "--cited", p("cited_random.jsonl"), "--cited",
                    p("cited_semantic.jsonl"), "--model-config", fixtures + "/echo.toml", "--out",
                    p("responses.jsonl")});
  run_cli_or_throw({"judge", "--responses", p("responses.jsonl"), "--judge-config", fixtures + "/judge_mock.toml",
                    "--out", p("verdicts.jsonl"), "--labels-out", p("labels.jsonl")});
  write_synthetic_dumps(dir / "responses.jsonl", dir / "dumps");
  run_cli_or_throw({"analyze", "--dumps", p("dumps"), "--labels", p("labels.jsonl"), "--verdicts", p("verdicts.jsonl"),
                    "--out", p("hidden.jsonl"), "--frames-out", p("frames")});
  run_cli_or_throw({"cluster", "--hidden", p("hidden.jsonl"), "--seed", "7", "--out", p("clusters.jsonl"),
                    "--plot-out", p("projection.csv")});
  run_cli_or_throw({"report", "--verdicts", p("verdicts.jsonl"), "--out", p("report.txt")});
  run_cli_or_throw({"report", "--verdicts", p("verdicts.jsonl"), "--out", p("report.csv")});

  PipelineRun run;
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string name = e.path().filename().string();
    if (name == kManifestLog || name.ends_with(".manifest.json")) continue;
    run.hashes[fs::relative(e.path(), dir).generic_string()] = sha256_hex(read_text_file(e.path()));
  }
  return run;
}

}  // namespace falsecite::testing
