#pragma once

// False-claim ingestion: FEVER refuted claims and SciQ distractor statements.

#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "falsecite/error.hpp"
#include "falsecite/hash.hpp"
#include "falsecite/io.hpp"
#include "falsecite/text.hpp"

namespace falsecite::corpus {

enum class Origin { FeverFalse, SciqDistractor };

inline std::string_view to_string(Origin o) {
  return o == Origin::FeverFalse ? "fever_false" : "sciq_distractor";
}

inline Origin origin_from_string(std::string_view s) {
  if (s == "fever_false") return Origin::FeverFalse;
  if (s == "sciq_distractor") return Origin::SciqDistractor;
  throw Error("unknown claim origin '" + std::string(s) + "'");
}

struct Claim {
  std::string id;
  std::string text;
  Origin origin = Origin::FeverFalse;
  std::string source_record;
  std::optional<int> distractor_index;

  friend bool operator==(const Claim&, const Claim&) = default;
};

inline void validate(const Claim& c) {
  if (c.id.empty()) throw Error("claim with empty id");
  if (c.text.empty()) throw Error("claim " + c.id + " has empty text");
  if (trim(c.text).size() != c.text.size()) {
    throw Error("claim " + c.id + " has leading or trailing whitespace");
  }
  const bool sciq = c.origin == Origin::SciqDistractor;
  if (sciq != c.distractor_index.has_value()) {
    throw Error("claim " + c.id + ": distractor_index must be present exactly for SciQ claims");
  }
  if (c.distractor_index && (*c.distractor_index < 0 || *c.distractor_index > 2)) {
    throw Error("claim " + c.id + ": distractor_index out of range 0..2");
  }
}

inline json to_json(const Claim& c) {
  json j;
  j["id"] = c.id;
  j["text"] = c.text;
  j["origin"] = to_string(c.origin);
  j["source_record"] = c.source_record;
  j["distractor_index"] = c.distractor_index ? json(*c.distractor_index) : json(nullptr);
  return j;
}

inline Claim claim_from_json(const json& j) {
  Claim c;
  c.id = j.at("id").get<std::string>();
  c.text = j.at("text").get<std::string>();
  c.origin = origin_from_string(j.at("origin").get<std::string>());
  c.source_record = j.at("source_record").get<std::string>();
  if (auto it = j.find("distractor_index"); it != j.end() && !it->is_null()) {
    c.distractor_index = it->get<int>();
  }
  validate(c);
  return c;
}

struct ClaimSetManifest {
  std::vector<std::string> input_paths;
  std::size_t records_read = 0;
  std::size_t records_skipped = 0;
  std::size_t claims = 0;
  std::string content_hash;
};

inline json to_json(const ClaimSetManifest& m) {
  return json{{"input_paths", m.input_paths},
              {"records_read", m.records_read},
              {"records_skipped", m.records_skipped},
              {"claims", m.claims},
              {"content_hash", m.content_hash}};
}

/// Immutable ordered claim collection. Construction validates every claim and
/// id uniqueness, and stamps the manifest with a hash of the serialized claims.
class ClaimSet {
 public:
  ClaimSet() { manifest_.content_hash = hash_claims(claims_); }

  ClaimSet(std::vector<Claim> claims, ClaimSetManifest manifest)
      : claims_(std::move(claims)), manifest_(std::move(manifest)) {
    std::set<std::string_view> seen;
    for (const auto& c : claims_) {
      validate(c);
      if (!seen.insert(c.id).second) throw Error("duplicate claim id '" + c.id + "'");
    }
    manifest_.claims = claims_.size();
    manifest_.content_hash = hash_claims(claims_);
  }

  const std::vector<Claim>& claims() const noexcept { return claims_; }
  const ClaimSetManifest& manifest() const noexcept { return manifest_; }
  std::size_t size() const noexcept { return claims_.size(); }
  bool empty() const noexcept { return claims_.empty(); }
  const Claim& operator[](std::size_t i) const { return claims_[i]; }
  auto begin() const noexcept { return claims_.begin(); }
  auto end() const noexcept { return claims_.end(); }

  /// Concatenates sets in argument order; ids must stay unique.
  static ClaimSet concat(const std::vector<ClaimSet>& parts) {
    std::vector<Claim> all;
    ClaimSetManifest m;
    for (const auto& p : parts) {
      all.insert(all.end(), p.claims_.begin(), p.claims_.end());
      const auto& pm = p.manifest_;
      m.input_paths.insert(m.input_paths.end(), pm.input_paths.begin(), pm.input_paths.end());
      m.records_read += pm.records_read;
      m.records_skipped += pm.records_skipped;
    }
    return ClaimSet(std::move(all), std::move(m));
  }

  void write_jsonl(std::ostream& out) const {
    for (const auto& c : claims_) write_jsonl_line(out, to_json(c));
  }

  static ClaimSet read_jsonl(const fs::path& path) {
    std::vector<Claim> claims;
    ClaimSetManifest m;
    m.input_paths.push_back(path.string());
    for_each_jsonl(path, [&](const json& j, std::size_t line) {
      ++m.records_read;
      try {
        claims.push_back(claim_from_json(j));
      } catch (const std::exception& e) {
        throw RecordError(path.string(), line, e.what());
      }
    });
    return ClaimSet(std::move(claims), std::move(m));
  }

 private:
  static std::string hash_claims(const std::vector<Claim>& claims) {
    Sha256 h;
    for (const auto& c : claims) h.update(to_json(c).dump()).update("\n");
    return h.hex();
  }

  std::vector<Claim> claims_;
  ClaimSetManifest manifest_;
};

// ---------------------------------------------------------------------------
// FEVER

struct FeverOptions {
  /// Label value marking a refuted claim. Matched case-insensitively; a JSON
  /// boolean false label is also treated as refuted.
  std::string false_label = "REFUTES";
  std::string claim_field = "claim";
  std::string label_field = "label";
  std::string id_field = "id";
};

namespace detail {

inline std::string record_id(const json& record, const std::string& field, std::size_t line) {
  auto it = record.find(field);
  if (it == record.end() || it->is_null()) return "line" + std::to_string(line);
  if (it->is_string()) return it->get<std::string>();
  if (it->is_number_integer()) return std::to_string(it->get<long long>());
  return it->dump();
}

}  // namespace detail

inline ClaimSet load_fever(const fs::path& path, const FeverOptions& opts = {}) {
  std::vector<Claim> claims;
  ClaimSetManifest m;
  m.input_paths.push_back(path.string());
  for_each_jsonl(path, [&](const json& rec, std::size_t line) {
    ++m.records_read;
    if (!rec.is_object()) throw RecordError(path.string(), line, "record is not an object");
    auto claim_it = rec.find(opts.claim_field);
    if (claim_it == rec.end() || !claim_it->is_string()) {
      throw RecordError(path.string(), line, "missing claim field '" + opts.claim_field + "'");
    }
    auto label_it = rec.find(opts.label_field);
    if (label_it == rec.end() || label_it->is_null()) {
      throw RecordError(path.string(), line, "missing label field '" + opts.label_field + "'");
    }
    bool refuted = false;
    if (label_it->is_boolean()) {
      refuted = !label_it->get<bool>();
    } else if (label_it->is_string()) {
      refuted = iequals(label_it->get<std::string>(), opts.false_label);
    } else {
      throw RecordError(path.string(), line, "label must be a string or boolean");
    }
    if (!refuted) {
      ++m.records_skipped;
      return;
    }
    const std::string text(trim(claim_it->get<std::string>()));
    if (text.empty()) throw RecordError(path.string(), line, "empty claim text");
    Claim c;
    c.source_record = detail::record_id(rec, opts.id_field, line);
    c.id = "fever-" + c.source_record;
    c.text = text;
    c.origin = Origin::FeverFalse;
    claims.push_back(std::move(c));
  });
  return ClaimSet(std::move(claims), std::move(m));
}

// ---------------------------------------------------------------------------
// SciQ

/// Declarative false statement built from a question and one wrong answer.
/// Both parts are quoted and otherwise copied verbatim.
inline std::string render_sciq_claim(std::string_view question, std::string_view incorrect_answer) {
  if (question.empty()) throw Error("render_sciq_claim: empty question");
  if (incorrect_answer.empty()) throw Error("render_sciq_claim: empty incorrect answer");
  std::string out;
  out.reserve(question.size() + incorrect_answer.size() + 24);
  out += "the answer to \"";
  out += question;
  out += "\" is \"";
  out += incorrect_answer;
  out += '"';
  return out;
}

enum class MalformedPolicy { Reject, Skip };

struct SciqOptions {
  MalformedPolicy on_malformed = MalformedPolicy::Reject;
  std::string id_field = "id";
};

namespace detail {

/// Distractors in source order: either a "distractors" array or the
/// distractor1..distractorN fields of the public dump. Non-string entries
/// come back empty so the caller can reject them.
inline std::vector<std::string> sciq_distractors(const json& rec) {
  std::vector<std::string> out;
  auto take = [&](const json& v) { out.push_back(v.is_string() ? v.get<std::string>() : std::string{}); };
  if (auto it = rec.find("distractors"); it != rec.end() && it->is_array()) {
    for (const auto& d : *it) take(d);
    return out;
  }
  for (int k = 1;; ++k) {
    auto it = rec.find("distractor" + std::to_string(k));
    if (it == rec.end()) break;
    take(*it);
  }
  return out;
}

}  // namespace detail

inline ClaimSet load_sciq(const fs::path& path, const SciqOptions& opts = {}) {
  std::vector<Claim> claims;
  ClaimSetManifest m;
  m.input_paths.push_back(path.string());
  for_each_jsonl(path, [&](const json& rec, std::size_t line) {
    ++m.records_read;
    auto reject = [&](const std::string& why) {
      if (opts.on_malformed == MalformedPolicy::Skip) {
        ++m.records_skipped;
        return;
      }
      throw RecordError(path.string(), line, why);
    };
    if (!rec.is_object()) return reject("record is not an object");
    auto q = rec.find("question");
    if (q == rec.end() || !q->is_string() || q->get<std::string>().empty()) {
      return reject("missing question");
    }
    const auto distractors = detail::sciq_distractors(rec);
    if (distractors.size() != 3) {
      return reject("expected exactly 3 distractors, found " + std::to_string(distractors.size()));
    }
    for (const auto& d : distractors) {
      if (is_blank(d)) return reject("blank distractor");
    }
    const std::string source = detail::record_id(rec, opts.id_field, line);
    for (int k = 0; k < 3; ++k) {
      Claim c;
      c.source_record = source;
      c.id = "sciq-" + source + "-d" + std::to_string(k);
      c.text = render_sciq_claim(q->get<std::string>(), distractors[k]);
      c.origin = Origin::SciqDistractor;
      c.distractor_index = k;
      claims.push_back(std::move(c));
    }
  });
  return ClaimSet(std::move(claims), std::move(m));
}

}  // namespace falsecite::corpus
