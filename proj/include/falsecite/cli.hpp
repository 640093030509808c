#pragma once

// Command-line stages. run() never exits the process: it returns 0 on
// success, 1 when a stage fails (after removing its partial outputs) and 2
// on usage errors.

#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "falsecite/activation.hpp"
#include "falsecite/citation.hpp"
#include "falsecite/cluster.hpp"
#include "falsecite/config.hpp"
#include "falsecite/corpus.hpp"
#include "falsecite/dump.hpp"
#include "falsecite/harness.hpp"
#include "falsecite/io.hpp"
#include "falsecite/manifest.hpp"
#include "falsecite/parallel.hpp"

namespace falsecite::cli {

/// Outputs of one stage. Files and directories are written under temporary
/// names and renamed into place by commit(); anything uncommitted is removed
/// on destruction.
class Staging {
 public:
  Staging() = default;
  Staging(const Staging&) = delete;
  Staging& operator=(const Staging&) = delete;

  ~Staging() {
    for (const auto& d : dirs_) {
      if (!committed_) {
        std::error_code ec;
        fs::remove_all(d.temp, ec);
      }
    }
  }

  std::ostream& file(const fs::path& target) {
    files_.push_back(std::make_unique<AtomicFile>(target));
    targets_.push_back(target);
    return files_.back()->stream();
  }

  /// Returns an empty temporary directory that replaces `target` on commit.
  fs::path dir(const fs::path& target) {
    fs::path temp(target.string() + detail::temp_suffix());
    fs::create_directories(temp);
    dirs_.push_back({target, temp});
    targets_.push_back(target);
    return temp;
  }

  void commit() {
    for (auto& f : files_) f->commit();
    for (const auto& d : dirs_) {
      std::error_code ec;
      fs::remove_all(d.target, ec);
      fs::rename(d.temp, d.target, ec);
      if (ec) throw Error("cannot move output directory into place at " + d.target.string() + ": " + ec.message());
    }
    committed_ = true;
  }

  const std::vector<fs::path>& targets() const noexcept { return targets_; }

 private:
  struct Dir {
    fs::path target;
    fs::path temp;
  };
  std::vector<std::unique_ptr<AtomicFile>> files_;
  std::vector<Dir> dirs_;
  std::vector<fs::path> targets_;
  bool committed_ = false;
};

inline std::size_t default_jobs() { return std::max(1u, std::thread::hardware_concurrency()); }

inline std::string display_name(citation::Strategy s) {
  switch (s) {
    case citation::Strategy::None: return "No Citation";
    case citation::Strategy::Random: return "Random Citation";
    case citation::Strategy::Semantic: return "Semantic Citation";
  }
  return "";
}

/// Two decimals, with negative zero printed as zero.
inline std::string fixed2(double x) {
  const double r = harness::round2(x);
  return fmt::format("{:.2f}", r == 0.0 ? 0.0 : r);
}

inline std::string signed2(double x) {
  const double r = harness::round2(x);
  return r < 0.0 ? fixed2(r) : "+" + fixed2(r);
}

// ---------------------------------------------------------------------------
// ingest

struct IngestOptions {
  std::string fever;
  std::string sciq;
  std::string out;
  std::string fever_false_label = "REFUTES";
  bool sciq_skip_malformed = false;
};

inline void ingest(const IngestOptions& o, RunManifest& m, Staging& s) {
  if (o.fever.empty() && o.sciq.empty()) throw Error("ingest needs --fever and/or --sciq");
  std::vector<corpus::ClaimSet> parts;
  json sources = json::object();
  if (!o.fever.empty()) {
    corpus::FeverOptions fo;
    fo.false_label = o.fever_false_label;
    parts.push_back(corpus::load_fever(o.fever, fo));
    sources["fever"] = corpus::to_json(parts.back().manifest());
    m.add_input(o.fever);
  }
  if (!o.sciq.empty()) {
    corpus::SciqOptions so;
    so.on_malformed = o.sciq_skip_malformed ? corpus::MalformedPolicy::Skip : corpus::MalformedPolicy::Reject;
    parts.push_back(corpus::load_sciq(o.sciq, so));
    sources["sciq"] = corpus::to_json(parts.back().manifest());
    m.add_input(o.sciq);
  }
  const corpus::ClaimSet all = corpus::ClaimSet::concat(parts);
  all.write_jsonl(s.file(o.out));
  m.details = {{"sources", sources}, {"claims", all.size()}, {"content_hash", all.manifest().content_hash}};
  spdlog::info("ingest: wrote {} claims", all.size());
}

// ---------------------------------------------------------------------------
// pair

struct PairOptions {
  std::string claims;
  std::string mode;
  std::string sources;
  std::string templates;
  std::uint64_t seed = 0;
  std::string out;
  std::size_t pool_size = 0;
  std::string embed_config;
  std::string embed_cache;
  std::size_t concurrency = 0;
};

inline void pair(const PairOptions& o, RunManifest& m, Staging& s) {
  const auto strategy = citation::strategy_from_string(o.mode);
  const auto claims = corpus::ClaimSet::read_jsonl(o.claims);
  m.add_input(o.claims);
  m.seed = o.seed;

  std::vector<citation::SourceName> sources;
  if (o.sources.empty()) {
    sources = citation::default_sources();
  } else {
    for (auto& line : read_list_file(o.sources)) sources.push_back({std::string(trim(line))});
    m.add_input(o.sources);
  }
  std::vector<citation::CitationTemplate> templates;
  if (o.templates.empty()) {
    templates = citation::default_templates();
  } else {
    for (auto& line : read_list_file(o.templates)) templates.emplace_back(line);
    m.add_input(o.templates);
  }
  // The pool draw and the pairing draw use distinct streams.
  const std::uint64_t pool_seed = seed_from_text("citation-pool", o.seed);
  const auto pool = o.pool_size == 0 ? citation::citation_product(sources, templates)
                                     : citation::generate_citation_pool(sources, templates, pool_seed, o.pool_size);

  std::vector<citation::CitedClaim> cited;
  json details{{"mode", o.mode}, {"pool_size", pool.size()}, {"claims", claims.size()}};
  switch (strategy) {
    case citation::Strategy::None: cited = citation::pair_none(claims); break;
    case citation::Strategy::Random: cited = citation::pair_random(claims, pool, o.seed); break;
    case citation::Strategy::Semantic: {
      if (o.embed_config.empty() && o.embed_cache.empty()) {
        throw Error("semantic pairing needs --embed-config and/or --embed-cache");
      }
      auto store = std::make_shared<citation::VectorStore>();
      if (!o.embed_cache.empty() && fs::exists(o.embed_cache)) {
        m.add_input(o.embed_cache);
        store->load(o.embed_cache);
      }
      std::shared_ptr<citation::EmbeddingProvider> inner;
      std::size_t concurrency = o.concurrency;
      if (!o.embed_config.empty()) {
        const auto cfg = load_provider_config(o.embed_config);
        m.add_config(o.embed_config);
        inner = make_embedding_provider(cfg);
        if (concurrency == 0) concurrency = cfg.rate_limit.max_concurrency;
        details["embedding_model"] = cfg.model_name;
      }
      citation::CachingEmbeddingProvider provider(store, inner);
      citation::SemanticOptions so;
      so.max_concurrency = concurrency == 0 ? 4 : concurrency;
      cited = citation::pair_semantic(claims, pool, provider, so);
      if (!o.embed_cache.empty()) store->save(o.embed_cache);
      break;
    }
  }
  auto& out = s.file(o.out);
  for (const auto& c : cited) write_jsonl_line(out, citation::to_json(c));
  m.details = std::move(details);
  spdlog::info("pair: wrote {} cited claims ({})", cited.size(), o.mode);
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateOptions {
  std::vector<std::string> cited;
  std::string model_config;
  std::string out;
  std::int64_t id_offset = 0;
  std::size_t concurrency = 0;
  std::string cache;
};

inline std::vector<citation::CitedClaim> read_cited(const fs::path& path) {
  std::vector<citation::CitedClaim> out;
  for_each_jsonl(path, [&](const json& j, std::size_t line) {
    try {
      out.push_back(citation::cited_from_json(j));
    } catch (const std::exception& e) {
      throw RecordError(path.string(), line, e.what());
    }
  });
  return out;
}

inline void evaluate(const EvaluateOptions& o, RunManifest& m, Staging& s) {
  std::vector<citation::CitedClaim> cited;
  for (const auto& p : o.cited) {
    auto part = read_cited(p);
    cited.insert(cited.end(), part.begin(), part.end());
    m.add_input(p);
  }
  const auto cfg = load_provider_config(o.model_config);
  m.add_config(o.model_config);
  auto client = make_chat_client(cfg);
  std::optional<harness::ResponseCache> cache;
  const fs::path cache_path = o.cache.empty() ? cfg.cache_file : fs::path(o.cache);
  if (!cache_path.empty()) cache.emplace(cache_path);

  const auto responses =
      harness::prompt_all(*client, cited, cfg.params, o.concurrency ? o.concurrency : cfg.rate_limit.max_concurrency,
                          o.id_offset, cache ? &*cache : nullptr, cfg.retry_policy());
  std::size_t failed = 0;
  auto& out = s.file(o.out);
  for (const auto& r : responses) {
    if (!r.ok()) ++failed;
    write_jsonl_line(out, harness::to_json(r));
  }
  m.details = {{"model", client->model()}, {"responses", responses.size()}, {"failed", failed},
               {"id_offset", o.id_offset}};
  if (failed) spdlog::warn("evaluate: {} of {} prompts failed", failed, responses.size());
}

// ---------------------------------------------------------------------------
// judge

struct JudgeCliOptions {
  std::string responses;
  std::string judge_config;
  std::string out;
  std::string labels_out;
  std::size_t concurrency = 0;
};

inline std::vector<harness::ModelResponse> read_responses(const fs::path& path) {
  std::vector<harness::ModelResponse> out;
  for_each_jsonl(path, [&](const json& j, std::size_t line) {
    try {
      out.push_back(harness::response_from_json(j));
    } catch (const std::exception& e) {
      throw RecordError(path.string(), line, e.what());
    }
  });
  return out;
}

inline void judge(const JudgeCliOptions& o, RunManifest& m, Staging& s) {
  const auto responses = read_responses(o.responses);
  m.add_input(o.responses);
  const auto cfg = load_provider_config(o.judge_config);
  m.add_config(o.judge_config);
  m.judge_prompt_version = std::string(harness::kJudgePromptVersion);
  auto client = make_chat_client(cfg);
  harness::JudgeOptions jo;
  jo.params = cfg.params;
  jo.retry = cfg.retry_policy();

  const bool want_labels = !o.labels_out.empty();
  std::vector<harness::VerdictRecord> records(responses.size());
  std::vector<harness::LabelOutcome> labels(responses.size());
  parallel_for(responses.size(), o.concurrency ? o.concurrency : cfg.rate_limit.max_concurrency, [&](std::size_t i) {
    const auto& r = responses[i];
    auto& rec = records[i];
    rec.response_id = r.response_id;
    rec.claim_id = r.prompt.claim.id;
    rec.strategy = r.prompt.strategy;
    rec.model = r.model;
    if (!r.ok()) {
      rec.status = harness::JudgeStatus::ModelFailed;
      return;
    }
    rec.verdict = harness::judge_response(*client, r.prompt, r, jo);
    rec.status = rec.verdict ? harness::JudgeStatus::Ok : harness::JudgeStatus::JudgeFailed;
    if (want_labels && rec.verdict && rec.verdict->label == harness::VerdictLabel::Hallucinated) {
      if (r.token_texts) {
        labels[i] = harness::label_tokens(*client, r, jo);
      } else {
        labels[i].drop_reason = "response has no token_texts";
      }
    }
  });

  std::set<std::int64_t> ids;
  for (const auto& r : records) {
    if (!ids.insert(r.response_id).second) throw Error("duplicate response_id " + std::to_string(r.response_id));
  }
  json counts{{"ok", 0}, {"model_failed", 0}, {"judge_failed", 0}};
  auto& out = s.file(o.out);
  for (const auto& r : records) {
    counts[std::string(harness::to_string(r.status))] = counts[std::string(harness::to_string(r.status))].get<int>() + 1;
    write_jsonl_line(out, harness::to_json(r));
  }
  m.details = {{"judge_model", client->model()}, {"verdicts", records.size()}, {"status_counts", counts}};
  if (want_labels) {
    m.details["token_label_prompt_version"] = harness::kTokenLabelPromptVersion;
    json dropped = json::array();
    auto& lout = s.file(o.labels_out);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i].labels) {
        write_jsonl_line(lout, harness::to_json(*labels[i].labels));
      } else if (!labels[i].drop_reason.empty()) {
        dropped.push_back({{"response_id", responses[i].response_id}, {"reason", labels[i].drop_reason}});
      }
    }
    m.details["token_labels_dropped"] = std::move(dropped);
  }
}

// ---------------------------------------------------------------------------
// report

struct ReportOptions {
  std::string verdicts;
  std::string out;
};

using ModelTables = std::map<std::string, harness::RateTable>;

/// Rate tables per test model. Failed rows count as excluded; strategies
/// with no judged rows are omitted.
inline ModelTables rate_tables(const std::vector<harness::VerdictRecord>& records) {
  std::map<std::string, std::map<citation::Strategy, harness::VerdictCounts>> groups;
  for (const auto& r : records) {
    auto& c = groups[r.model][r.strategy];
    if (r.status == harness::JudgeStatus::Ok) {
      c.add(r.verdict->label);
    } else {
      ++c.excluded;
    }
  }
  ModelTables out;
  for (auto& [model, by_strategy] : groups) {
    std::map<citation::Strategy, harness::VerdictCounts> judged;
    for (const auto& [st, c] : by_strategy) {
      if (c.yes + c.no + c.unsure > 0) {
        judged[st] = c;
      } else {
        spdlog::warn("report: model {} has no judged {} responses", model, citation::to_string(st));
      }
    }
    if (!judged.empty()) out[model] = harness::compute_rate_table(judged);
  }
  return out;
}

inline std::string render_report_text(const ModelTables& tables) {
  constexpr std::array kOrder{citation::Strategy::None, citation::Strategy::Random, citation::Strategy::Semantic};
  std::string s = "Hallucination rates (%) by citation type\n\n";
  std::size_t width = 12;
  for (const auto& [model, t] : tables) width = std::max(width, model.size());
  std::string head1 = fmt::format("{:<18}", "Citation Type");
  std::string head2 = fmt::format("{:<18}", "");
  for (const auto& [model, t] : tables) {
    head1 += fmt::format(" | {:<{}}", model, width + 9);
    head2 += fmt::format(" | {:<{}}", fmt::format("{:<12} {}", "Hallucinated", "Delta"), width + 9);
  }
  s += head1 + "\n" + head2 + "\n" + std::string(head1.size(), '-') + "\n";
  for (auto st : kOrder) {
    std::string line = fmt::format("{:<18}", display_name(st));
    bool any = false;
    for (const auto& [model, t] : tables) {
      const auto* row = t.find(st);
      std::string cell = "n/a";
      if (row) {
        any = true;
        cell = fmt::format("{:<12} {}", fixed2(row->yes_pct), row->delta ? signed2(*row->delta) : std::string("--"));
      }
      line += fmt::format(" | {:<{}}", cell, width + 9);
    }
    if (any) s += line + "\n";
  }
  s += "\nDelta is the increase over the no-citation rate. Unsure verdicts are listed below.\n";
  for (const auto& [model, t] : tables) {
    s += fmt::format("\n{}\n{:<18} {:>8} {:>8} {:>8} {:>8} {:>9}\n", model, "Citation Type", "Yes", "No", "Unsure", "n",
                     "excluded");
    for (auto st : kOrder) {
      if (const auto* row = t.find(st)) {
        s += fmt::format("{:<18} {:>8} {:>8} {:>8} {:>8} {:>9}\n", display_name(st), fixed2(row->yes_pct) + "%",
                         fixed2(row->no_pct) + "%", fixed2(row->unsure_pct) + "%", row->total(), row->excluded);
      }
    }
  }
  return s;
}

inline std::string render_report_csv(const ModelTables& tables) {
  std::string s = "model,citation_type,n,yes,no,unsure,excluded,yes_pct,no_pct,unsure_pct,delta\n";
  for (const auto& [model, t] : tables) {
    for (const auto& row : t.rows) {
      s += fmt::format("{},{},{},{},{},{},{},{},{},{},{}\n", model, citation::to_string(row.strategy), row.total(),
                       row.yes, row.no, row.unsure, row.excluded, fixed2(row.yes_pct), fixed2(row.no_pct),
                       fixed2(row.unsure_pct), row.delta ? fixed2(*row.delta) : std::string());
    }
  }
  return s;
}

inline std::vector<harness::VerdictRecord> read_verdicts(const fs::path& path) {
  std::vector<harness::VerdictRecord> out;
  for_each_jsonl(path, [&](const json& j, std::size_t line) {
    try {
      out.push_back(harness::verdict_record_from_json(j));
    } catch (const std::exception& e) {
      throw RecordError(path.string(), line, e.what());
    }
  });
  return out;
}

inline void report(const ReportOptions& o, RunManifest& m, Staging& s, std::ostream& stdout_) {
  const auto records = read_verdicts(o.verdicts);
  m.add_input(o.verdicts);
  const auto tables = rate_tables(records);
  if (tables.empty()) throw Error("report: no judged verdicts in " + o.verdicts);
  const bool csv = fs::path(o.out).extension() == ".csv";
  const std::string text = csv ? render_report_csv(tables) : render_report_text(tables);
  if (o.out.empty()) {
    stdout_ << text;
  } else {
    s.file(o.out) << text;
  }
  m.details = {{"verdicts", records.size()}, {"models", tables.size()}};
}

// ---------------------------------------------------------------------------
// analyze

struct AnalyzeOptions {
  std::string dumps;
  std::string labels;
  std::string verdicts;
  std::string out;
  std::string frames_out;
  std::string head_agg = "mean";
  std::string pooling = "all";
  std::size_t jobs = 0;
};

inline void write_frame_csv(std::ostream& out, const activation::StatFrames& frames, activation::Stat stat) {
  const auto& f = frames[stat];
  out << "token";
  for (Eigen::Index l = 0; l < f.cols(); ++l) out << ",layer_" << l;
  out << '\n';
  for (Eigen::Index r = 0; r < f.rows(); ++r) {
    out << frames.token_index[static_cast<std::size_t>(r)];
    for (Eigen::Index l = 0; l < f.cols(); ++l) out << fmt::format(",{:.9g}", f(r, l));
    out << '\n';
  }
}

inline json ranking_json(const activation::LayerRanking& r) {
  json rho = json::object();
  json degenerate = json::object();
  for (auto st : activation::kStats) {
    const auto i = static_cast<Eigen::Index>(st);
    std::vector<double> row(static_cast<std::size_t>(r.rho.cols()));
    for (Eigen::Index l = 0; l < r.rho.cols(); ++l) row[static_cast<std::size_t>(l)] = r.rho(i, l);
    rho[std::string(activation::to_string(st))] = row;
    std::vector<bool> deg = r.degenerate[static_cast<std::size_t>(i)];
    degenerate[std::string(activation::to_string(st))] = deg;
  }
  return json{{"response_id", r.response_id}, {"top_layers", r.top_layers}, {"avg_rank", r.avg_rank},
              {"rho", rho},                   {"degenerate", degenerate},   {"tied", r.tied}};
}

inline void analyze(const AnalyzeOptions& o, RunManifest& m, Staging& s) {
  const auto agg = o.head_agg == "mean"  ? activation::HeadAggregation::Mean
                   : o.head_agg == "max" ? activation::HeadAggregation::Max
                                         : throw Error("unknown head aggregation '" + o.head_agg + "'");
  const auto pooling = o.pooling == "all"            ? activation::HiddenPooling::AllTokens
                       : o.pooling == "hallucinated" ? activation::HiddenPooling::HallucinatedTokens
                                                     : throw Error("unknown pooling '" + o.pooling + "'");
  if (!fs::is_directory(o.dumps)) throw Error("dump directory " + o.dumps + " does not exist");

  std::map<std::int64_t, harness::VerdictRecord> verdicts;
  for (auto& v : read_verdicts(o.verdicts)) {
    const auto id = v.response_id;
    if (!verdicts.emplace(id, std::move(v)).second) throw Error("duplicate verdict for response " + std::to_string(id));
  }
  std::map<std::int64_t, harness::TokenLabelSequence> labels;
  for_each_jsonl(o.labels, [&](const json& j, std::size_t line) {
    try {
      auto l = harness::labels_from_json(j);
      const auto id = l.response_id;
      if (!labels.emplace(id, std::move(l)).second) throw Error("duplicate labels for response " + std::to_string(id));
    } catch (const std::exception& e) {
      throw RecordError(o.labels, line, e.what());
    }
  });
  m.add_input(o.dumps);
  m.add_input(o.labels);
  m.add_input(o.verdicts);

  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(o.dumps)) {
    if (e.is_regular_file() && e.path().extension() == ".actdump") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());

  struct Result {
    std::int64_t response_id = 0;
    std::vector<activation::HiddenStateRecord> records;
    std::optional<activation::StatFrames> frames;
    std::optional<activation::LayerRanking> ranking;
    std::string skipped;
  };
  const bool want_frames = !o.frames_out.empty();
  std::vector<Result> results(files.size());
  parallel_for(files.size(), o.jobs ? o.jobs : default_jobs(), [&](std::size_t i) {
    const auto dump = activation::read_dump(files[i]);
    Result& res = results[i];
    res.response_id = dump.response_id;
    const auto v = verdicts.find(dump.response_id);
    if (v == verdicts.end()) {
      res.skipped = "no verdict";
      return;
    }
    if (v->second.status != harness::JudgeStatus::Ok) {
      res.skipped = std::string(harness::to_string(v->second.status));
      return;
    }
    const auto label = v->second.verdict->label;
    if (label == harness::VerdictLabel::Unsure) {
      res.skipped = "unsure verdict";
      return;
    }
    if (label == harness::VerdictLabel::NotHallucinated) {
      if (want_frames) res.frames = activation::build_stat_frames(dump, agg);
      res.records = activation::extract_hidden_vectors(dump, nullptr, 0, pooling);
      return;
    }
    const auto l = labels.find(dump.response_id);
    if (l == labels.end()) {
      res.skipped = "no token labels";
      return;
    }
    if (l->second.labels.size() != dump.n_tokens()) {
      res.skipped = "token labels misaligned with dump";
      return;
    }
    auto frames = activation::build_stat_frames(dump, agg);
    try {
      res.ranking = activation::rank_layers(frames, l->second);
    } catch (const activation::SingleClassLabels& e) {
      res.skipped = e.what();
      return;
    }
    res.records = activation::extract_hidden_vectors(dump, &*res.ranking, 1, pooling, &l->second);
    if (want_frames) res.frames = std::move(frames);
  });

  std::set<std::int64_t> seen;
  std::vector<const activation::HiddenStateRecord*> records;
  json excluded = json::array();
  std::size_t analyzed = 0;
  for (const auto& r : results) {
    if (!seen.insert(r.response_id).second) {
      throw Error("two dumps carry response_id " + std::to_string(r.response_id));
    }
    if (!r.skipped.empty()) {
      excluded.push_back({{"response_id", r.response_id}, {"reason", r.skipped}});
      continue;
    }
    ++analyzed;
    for (const auto& rec : r.records) records.push_back(&rec);
  }
  std::sort(records.begin(), records.end(), [](const auto* a, const auto* b) {
    return std::pair(a->response_id, a->layer) < std::pair(b->response_id, b->layer);
  });
  auto& out = s.file(o.out);
  for (const auto* r : records) write_jsonl_line(out, activation::to_json(*r));

  if (want_frames) {
    const fs::path dir = s.dir(o.frames_out);
    std::vector<const Result*> by_id;
    for (const auto& r : results) {
      if (r.frames) by_id.push_back(&r);
    }
    std::sort(by_id.begin(), by_id.end(), [](const auto* a, const auto* b) { return a->response_id < b->response_id; });
    std::ofstream rankings(dir / "rankings.jsonl", std::ios::binary);
    for (const auto* r : by_id) {
      for (auto st : activation::kStats) {
        std::ofstream f(dir / fmt::format("{}_{}.csv", r->response_id, activation::to_string(st)), std::ios::binary);
        write_frame_csv(f, *r->frames, st);
        if (!f) throw Error("cannot write frame for response " + std::to_string(r->response_id));
      }
      if (r->ranking) write_jsonl_line(rankings, ranking_json(*r->ranking));
    }
    if (!rankings) throw Error("cannot write rankings.jsonl");
  }
  m.details = {{"dumps", files.size()},        {"analyzed", analyzed},   {"records", records.size()},
               {"head_aggregation", o.head_agg}, {"pooling", o.pooling}, {"excluded", excluded}};
  spdlog::info("analyze: {} of {} dumps analyzed, {} records", analyzed, files.size(), records.size());
}

// ---------------------------------------------------------------------------
// cluster

struct ClusterOptions {
  std::string hidden;
  std::size_t k_min = 2;
  std::size_t k_max = 15;
  std::uint64_t seed = 0;
  std::string out;
  std::string plot_out;
  std::size_t components = cluster::kDefaultComponents;
  std::size_t jobs = 0;
};

inline void cluster_stage(const ClusterOptions& o, RunManifest& m, Staging& s) {
  if (o.k_min < 1 || o.k_max < o.k_min) throw Error("invalid k range");
  std::vector<activation::HiddenStateRecord> records;
  for_each_jsonl(o.hidden, [&](const json& j, std::size_t line) {
    try {
      records.push_back(activation::hidden_record_from_json(j));
    } catch (const std::exception& e) {
      throw RecordError(o.hidden, line, e.what());
    }
  });
  m.add_input(o.hidden);
  m.seed = o.seed;
  if (records.empty()) throw Error("no hidden-state records in " + o.hidden);

  const Eigen::MatrixXd X = cluster::to_matrix(records);
  const auto model = cluster::pca_fit(X, o.components);
  const Eigen::MatrixXd points = cluster::pca_transform(model, X);
  std::vector<int> labels;
  for (const auto& r : records) labels.push_back(r.halu_label);
  std::vector<std::size_t> ks;
  for (std::size_t k = o.k_min; k <= o.k_max; ++k) ks.push_back(k);
  const auto sel = cluster::select_k(points, labels, ks, o.seed, o.jobs ? o.jobs : default_jobs());
  const auto& best = sel.best;

  json per_cluster = json::array();
  for (std::size_t c = 0; c < best.per_cluster.size(); ++c) {
    const auto& pc = best.per_cluster[c];
    per_cluster.push_back({{"cluster", c},
                           {"size", pc.size},
                           {"halu_rate_pct", pc.halu_rate_pct},
                           {"score", pc.score},
                           {"empty", pc.empty}});
  }
  json scan = json::array();
  for (const auto& k : sel.scan) scan.push_back({{"k", k.k}, {"avg_score", k.avg_score}});
  std::vector<double> ev(model.explained_variance.data(),
                         model.explained_variance.data() + model.explained_variance.size());
  json centroids = json::array();
  for (Eigen::Index c = 0; c < best.centroids.rows(); ++c) {
    std::vector<double> row(static_cast<std::size_t>(best.centroids.cols()));
    for (Eigen::Index d = 0; d < best.centroids.cols(); ++d) row[static_cast<std::size_t>(d)] = best.centroids(c, d);
    centroids.push_back(row);
  }

  auto& out = s.file(o.out);
  write_jsonl_line(out, {{"type", "summary"},
                         {"k", best.k},
                         {"avg_score", best.avg_score},
                         {"per_cluster", per_cluster},
                         {"scan", scan},
                         {"records", records.size()},
                         {"components", model.n_components()},
                         {"explained_variance", ev},
                         {"seed", o.seed},
                         {"iterations", best.iterations},
                         {"converged", best.converged}});
  write_jsonl_line(out, {{"type", "centroids"}, {"centroids", centroids}});
  for (std::size_t i = 0; i < records.size(); ++i) {
    write_jsonl_line(out, {{"type", "assignment"},
                           {"response_id", records[i].response_id},
                           {"layer", records[i].layer},
                           {"halu_label", records[i].halu_label},
                           {"cluster", best.assignments[i]}});
  }
  if (!o.plot_out.empty()) {
    const auto rows = cluster::project_2d(model, records, best.assignments);
    cluster::write_projection_csv(s.file(o.plot_out), rows);
  }
  m.details = {{"records", records.size()}, {"k", best.k}, {"avg_score", best.avg_score}};
  spdlog::info("cluster: k={} avg_score={:.4f}", best.k, best.avg_score);
}

// ---------------------------------------------------------------------------
// calibrate

struct CalibrateOptions {
  std::string judge_config;
  std::string benchmark;
  std::string out;
  std::size_t concurrency = 0;
};

inline void calibrate(const CalibrateOptions& o, RunManifest& m, Staging& s, std::ostream& stdout_) {
  const auto items = harness::load_calibration_benchmark(o.benchmark);
  m.add_input(o.benchmark);
  const auto cfg = load_provider_config(o.judge_config);
  m.add_config(o.judge_config);
  m.judge_prompt_version = std::string(harness::kJudgePromptVersion);
  auto client = make_chat_client(cfg);
  harness::JudgeOptions jo;
  jo.params = cfg.params;
  jo.retry = cfg.retry_policy();
  const auto res = harness::calibrate_judge(*client, items, jo,
                                            o.concurrency ? o.concurrency : cfg.rate_limit.max_concurrency);
  const json j{{"judge_model", client->model()}, {"rows", res.rows},     {"judged", res.judged},
               {"correct", res.correct},         {"unsure", res.unsure}, {"failed", res.failed},
               {"accuracy_pct", res.accuracy_pct}};
  stdout_ << fmt::format("judge {}: {}% accuracy ({} of {} judged correct, {} unsure counted wrong, {} failed)\n",
                         client->model(), fixed2(res.accuracy_pct), res.correct, res.judged, res.unsure, res.failed);
  if (!o.out.empty()) s.file(o.out) << j.dump(2) << '\n';
  m.details = j;
}

// ---------------------------------------------------------------------------
// Entry point

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Deceptive-citation hallucination pipeline", "falsecite"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off")->capture_default_str();

  IngestOptions io;
  auto* ingest_cmd = app.add_subcommand("ingest", "Build the false-claim corpus from FEVER and SciQ files");
  ingest_cmd->add_option("--fever", io.fever, "FEVER JSONL file")->check(CLI::ExistingFile);
  ingest_cmd->add_option("--sciq", io.sciq, "SciQ JSONL file")->check(CLI::ExistingFile);
  ingest_cmd->add_option("--out", io.out, "Output claims JSONL")->required();
  ingest_cmd->add_option("--fever-false-label", io.fever_false_label, "FEVER label marking false claims")
      ->capture_default_str();
  ingest_cmd->add_flag("--sciq-skip-malformed", io.sciq_skip_malformed, "Skip SciQ records without 3 distractors");

  PairOptions po;
  auto* pair_cmd = app.add_subcommand("pair", "Attach citations to claims");
  pair_cmd->add_option("--claims", po.claims, "Claims JSONL")->required()->check(CLI::ExistingFile);
  pair_cmd->add_option("--mode", po.mode, "Pairing strategy")
      ->required()
      ->check(CLI::IsMember({"none", "random", "semantic"}));
  pair_cmd->add_option("--sources", po.sources, "Source names, one per line (default: built-in list)")
      ->check(CLI::ExistingFile);
  pair_cmd->add_option("--templates", po.templates, "Citation frames with one {} each (default: built-in list)")
      ->check(CLI::ExistingFile);
  pair_cmd->add_option("--seed", po.seed, "Random seed")->capture_default_str();
  pair_cmd->add_option("--out", po.out, "Output cited-claims JSONL")->required();
  pair_cmd->add_option("--pool-size", po.pool_size, "Sample this many citations (0: every combination)")
      ->capture_default_str();
  pair_cmd->add_option("--embed-config", po.embed_config, "Embedding provider config")->check(CLI::ExistingFile);
  pair_cmd->add_option("--embed-cache", po.embed_cache, "Content-addressed embedding vector file");
  pair_cmd->add_option("--concurrency", po.concurrency, "Embedding requests in flight (0: from config)");

  EvaluateOptions eo;
  auto* eval_cmd = app.add_subcommand("evaluate", "Prompt a test model with cited claims");
  eval_cmd->add_option("--cited", eo.cited, "Cited-claims JSONL (repeatable)")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--model-config", eo.model_config, "Test-model config")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--out", eo.out, "Output responses JSONL")->required();
  eval_cmd->add_option("--id-offset", eo.id_offset, "First response id")->capture_default_str();
  eval_cmd->add_option("--concurrency", eo.concurrency, "Requests in flight (0: from config)");
  eval_cmd->add_option("--cache", eo.cache, "Response cache file (default: from config)");

  JudgeCliOptions jo;
  auto* judge_cmd = app.add_subcommand("judge", "Label responses with a judge model");
  judge_cmd->add_option("--responses", jo.responses, "Responses JSONL")->required()->check(CLI::ExistingFile);
  judge_cmd->add_option("--judge-config", jo.judge_config, "Judge config")->required()->check(CLI::ExistingFile);
  judge_cmd->add_option("--out", jo.out, "Output verdicts JSONL")->required();
  judge_cmd->add_option("--labels-out", jo.labels_out, "Token labels JSONL for hallucinated responses");
  judge_cmd->add_option("--concurrency", jo.concurrency, "Requests in flight (0: from config)");

  ReportOptions ro;
  auto* report_cmd = app.add_subcommand("report", "Tabulate hallucination rates");
  report_cmd->add_option("--verdicts", ro.verdicts, "Verdicts JSONL")->required()->check(CLI::ExistingFile);
  report_cmd->add_option("--out", ro.out, "Output table (.csv for CSV, otherwise text; default: stdout)");

  AnalyzeOptions ao;
  auto* analyze_cmd = app.add_subcommand("analyze", "Rank layers and extract hidden-state vectors from dumps");
  analyze_cmd->add_option("--dumps", ao.dumps, "Directory of .actdump files")->required();
  analyze_cmd->add_option("--labels", ao.labels, "Token labels JSONL")->required()->check(CLI::ExistingFile);
  analyze_cmd->add_option("--verdicts", ao.verdicts, "Verdicts JSONL")->required()->check(CLI::ExistingFile);
  analyze_cmd->add_option("--out", ao.out, "Output hidden-state records JSONL")->required();
  analyze_cmd->add_option("--frames-out", ao.frames_out, "Directory for per-response stat frames and rankings");
  analyze_cmd->add_option("--head-agg", ao.head_agg, "Head aggregation")
      ->check(CLI::IsMember({"mean", "max"}))
      ->capture_default_str();
  analyze_cmd->add_option("--pooling", ao.pooling, "Token pooling for hidden states")
      ->check(CLI::IsMember({"all", "hallucinated"}))
      ->capture_default_str();
  analyze_cmd->add_option("--jobs", ao.jobs, "Worker threads (0: all cores)");

  ClusterOptions co;
  auto* cluster_cmd = app.add_subcommand("cluster", "Cluster hidden-state records and pick k");
  cluster_cmd->add_option("--hidden", co.hidden, "Hidden-state records JSONL")->required()->check(CLI::ExistingFile);
  cluster_cmd->add_option("--k-min", co.k_min, "Smallest k")->capture_default_str();
  cluster_cmd->add_option("--k-max", co.k_max, "Largest k")->capture_default_str();
  cluster_cmd->add_option("--seed", co.seed, "Random seed")->capture_default_str();
  cluster_cmd->add_option("--out", co.out, "Output report JSONL")->required();
  cluster_cmd->add_option("--plot-out", co.plot_out, "Output 2-D projection CSV");
  cluster_cmd->add_option("--components", co.components, "PCA components")->capture_default_str();
  cluster_cmd->add_option("--jobs", co.jobs, "Worker threads (0: all cores)");

  CalibrateOptions cao;
  auto* calibrate_cmd = app.add_subcommand("calibrate", "Measure judge accuracy on a labelled benchmark");
  calibrate_cmd->add_option("--judge-config", cao.judge_config, "Judge config")->required()->check(CLI::ExistingFile);
  calibrate_cmd->add_option("--benchmark", cao.benchmark, "Benchmark JSONL")->required()->check(CLI::ExistingFile);
  calibrate_cmd->add_option("--out", cao.out, "Output result JSON");
  calibrate_cmd->add_option("--concurrency", cao.concurrency, "Requests in flight (0: from config)");

  if (argc > 1 && argv[1][0] != '-' && app.get_subcommand_no_throw(argv[1]) == nullptr) {
    err << "unknown subcommand '" << argv[1] << "'\n" << app.help();
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    err << app.help();
    return 2;
  }
  // Without the flag an embedding host keeps its own level.
  if (app.count("--log-level") > 0) spdlog::set_level(spdlog::level::from_str(log_level));

  CLI::App* sub = app.get_subcommands().front();
  RunManifest m;
  m.command = sub->get_name();
  m.argv.assign(argv + 1, argv + argc);
  m.started_at = utc_timestamp();
  try {
    Staging s;
    if (sub == ingest_cmd) ingest(io, m, s);
    else if (sub == pair_cmd) pair(po, m, s);
    else if (sub == eval_cmd) evaluate(eo, m, s);
    else if (sub == judge_cmd) judge(jo, m, s);
    else if (sub == report_cmd) report(ro, m, s, out);
    else if (sub == analyze_cmd) analyze(ao, m, s);
    else if (sub == cluster_cmd) cluster_stage(co, m, s);
    else if (sub == calibrate_cmd) calibrate(cao, m, s, out);
    s.commit();
    for (const auto& t : s.targets()) m.add_output(t);
    m.finished_at = utc_timestamp();
    publish_manifest(m, s.targets());
  } catch (const std::exception& e) {
    err << "falsecite " << m.command << ": " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace falsecite::cli
