#pragma once

// Provider configuration files (TOML) for test models, judges and embedding
// providers. Secrets never live in these files: the bearer token comes from
// FALSECITE_API_TOKEN_<PROVIDER>.

#include <cctype>
#include <cstdlib>
#include <memory>
#include <string>
#include <vector>

#include <toml.hpp>

#include "falsecite/chat.hpp"
#include "falsecite/embedding.hpp"
#include "falsecite/error.hpp"
#include "falsecite/harness.hpp"
#include "falsecite/hash.hpp"
#include "falsecite/http.hpp"

namespace falsecite {

struct RateLimit {
  std::size_t max_concurrency = 4;
  int max_retries = 3;
  int base_delay_ms = 500;
  int max_delay_ms = 8000;
};

struct ProviderConfig {
  /// Names the token variable and the provider in manifests.
  std::string provider = "default";
  /// http | echo | replay | mock-judge | mock
  std::string kind = "http";
  std::string protocol = "openai-chat";
  std::string endpoint_url;
  std::string model_name;
  int timeout_s = 120;
  fs::path replay_file;
  fs::path cache_file;
  std::uint64_t seed = 0;
  std::size_t dimension = 64;
  double hallucination_rate = 0.6;
  double unsure_rate = 0.05;
  harness::DecodingParams params;
  RateLimit rate_limit;
  /// SHA-256 of the file contents, recorded in run manifests.
  std::string content_hash;

  harness::RetryPolicy retry_policy() const {
    harness::RetryPolicy p;
    p.max_attempts = rate_limit.max_retries + 1;
    p.base_delay = std::chrono::milliseconds(rate_limit.base_delay_ms);
    p.max_delay = std::chrono::milliseconds(rate_limit.max_delay_ms);
    return p;
  }

  std::string token_env_var() const {
    std::string name = "FALSECITE_API_TOKEN_";
    for (char c : provider) name.push_back(std::isalnum(static_cast<unsigned char>(c)) ? static_cast<char>(std::toupper(static_cast<unsigned char>(c))) : '_');
    return name;
  }
};

namespace detail {

/// Whole-word match on the key split at non-alphanumerics, so max_tokens is
/// allowed while access_token and api-key are not.
inline bool looks_secret(std::string_view key) {
  std::vector<std::string> words(1);
  for (char c : to_upper(key)) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      words.back().push_back(c);
    } else if (!words.back().empty()) {
      words.emplace_back();
    }
  }
  for (std::size_t i = 0; i < words.size(); ++i) {
    const auto& w = words[i];
    if (w == "TOKEN" || w == "APIKEY" || w == "SECRET" || w == "PASSWORD" || w == "AUTHORIZATION" || w == "BEARER") {
      return true;
    }
    if (w == "KEY" && i > 0 && words[i - 1] == "API") return true;
  }
  return false;
}

inline void reject_secrets(const toml::table& t, const std::string& where) {
  for (const auto& [k, v] : t) {
    if (looks_secret(k.str())) {
      throw Error(where + ": key '" + std::string(k.str()) +
                  "' looks like a secret; supply tokens through FALSECITE_API_TOKEN_<PROVIDER> instead");
    }
    if (const auto* sub = v.as_table()) reject_secrets(*sub, where);
  }
}

inline json toml_to_json(const toml::node& n) {
  if (const auto* t = n.as_table()) {
    json j = json::object();
    for (const auto& [k, v] : *t) j[std::string(k.str())] = toml_to_json(v);
    return j;
  }
  if (const auto* a = n.as_array()) {
    json j = json::array();
    for (const auto& v : *a) j.push_back(toml_to_json(v));
    return j;
  }
  if (auto v = n.value_exact<std::string>()) return *v;
  if (auto v = n.value_exact<int64_t>()) return *v;
  if (auto v = n.value_exact<double>()) return *v;
  if (auto v = n.value_exact<bool>()) return *v;
  return json(n.is_date_time() || n.is_date() || n.is_time() ? json() : json());
}

}  // namespace detail

inline ProviderConfig parse_provider_config(std::string_view text, const fs::path& origin = {}) {
  toml::table tbl;
  try {
    tbl = toml::parse(text, origin.string());
  } catch (const toml::parse_error& e) {
    throw Error("config " + origin.string() + ": " + std::string(e.description()));
  }
  detail::reject_secrets(tbl, "config " + origin.string());

  ProviderConfig c;
  c.content_hash = sha256_hex(text);
  const fs::path base = origin.has_parent_path() ? origin.parent_path() : fs::path{};
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() || base.empty() ? fs::path(p) : base / p; };

  c.provider = tbl["provider"].value_or(c.provider);
  c.kind = tbl["kind"].value_or(c.kind);
  c.protocol = tbl["protocol"].value_or(c.protocol);
  c.endpoint_url = tbl["endpoint_url"].value_or(std::string{});
  c.model_name = tbl["model_name"].value_or(std::string{});
  c.timeout_s = tbl["timeout_s"].value_or(c.timeout_s);
  if (auto p = tbl["replay_file"].value<std::string>()) c.replay_file = resolve(*p);
  if (auto p = tbl["cache_file"].value<std::string>()) c.cache_file = resolve(*p);
  c.seed = static_cast<std::uint64_t>(tbl["seed"].value_or(int64_t{0}));
  c.dimension = static_cast<std::size_t>(tbl["dimension"].value_or(int64_t{64}));
  c.hallucination_rate = tbl["hallucination_rate"].value_or(c.hallucination_rate);
  c.unsure_rate = tbl["unsure_rate"].value_or(c.unsure_rate);

  if (const auto* params = tbl["params"].as_table()) {
    for (const auto& [k, v] : *params) {
      const std::string key(k.str());
      if (key == "temperature") {
        c.params.temperature = v.value_or(c.params.temperature);
      } else if (key == "max_tokens") {
        c.params.max_tokens = static_cast<int>(v.value_or(int64_t{c.params.max_tokens}));
      } else if (key == "return_tokens") {
        c.params.want_tokens = v.value_or(false);
      } else {
        c.params.extra[key] = detail::toml_to_json(v);
      }
    }
  }
  if (const auto* rl = tbl["rate_limit"].as_table()) {
    c.rate_limit.max_concurrency = static_cast<std::size_t>((*rl)["max_concurrency"].value_or(int64_t{4}));
    c.rate_limit.max_retries = static_cast<int>((*rl)["max_retries"].value_or(int64_t{3}));
    c.rate_limit.base_delay_ms = static_cast<int>((*rl)["base_delay_ms"].value_or(int64_t{500}));
    c.rate_limit.max_delay_ms = static_cast<int>((*rl)["max_delay_ms"].value_or(int64_t{8000}));
  }
  if (c.rate_limit.max_concurrency == 0) throw Error("config " + origin.string() + ": max_concurrency must be positive");

  if (c.kind == "http") {
    if (c.endpoint_url.empty()) throw Error("config " + origin.string() + ": http provider needs endpoint_url");
    if (c.model_name.empty()) throw Error("config " + origin.string() + ": http provider needs model_name");
  } else if (c.kind == "replay") {
    if (c.replay_file.empty()) throw Error("config " + origin.string() + ": replay provider needs replay_file");
  } else if (c.kind != "echo" && c.kind != "mock-judge" && c.kind != "mock") {
    throw Error("config " + origin.string() + ": unknown provider kind '" + c.kind + "'");
  }
  if (c.model_name.empty()) c.model_name = c.kind;
  return c;
}

inline ProviderConfig load_provider_config(const fs::path& path) {
  return parse_provider_config(read_text_file(path), path);
}

inline HttpSettings http_settings(const ProviderConfig& c) {
  HttpSettings s;
  s.endpoint_url = c.endpoint_url;
  s.model_name = c.model_name;
  s.protocol = protocol_from_string(c.protocol);
  s.timeout = std::chrono::seconds(c.timeout_s);
  if (const char* tok = std::getenv(c.token_env_var().c_str())) s.token = tok;
  return s;
}

inline std::unique_ptr<harness::ChatClient> make_chat_client(const ProviderConfig& c) {
  if (c.kind == "http") return std::make_unique<HttpChatClient>(http_settings(c));
  if (c.kind == "echo") return std::make_unique<harness::EchoChatClient>(c.model_name);
  if (c.kind == "replay") return std::make_unique<harness::ReplayChatClient>(c.model_name, c.replay_file);
  if (c.kind == "mock-judge") {
    return std::make_unique<harness::MockJudgeClient>(c.model_name, c.seed, c.hallucination_rate, c.unsure_rate);
  }
  throw Error("provider kind '" + c.kind + "' cannot serve chat completions");
}

inline std::shared_ptr<citation::EmbeddingProvider> make_embedding_provider(const ProviderConfig& c) {
  if (c.kind == "http") return std::make_shared<HttpEmbeddingProvider>(http_settings(c), c.retry_policy());
  if (c.kind == "mock") return std::make_shared<citation::MockEmbeddingProvider>(c.dimension, c.seed);
  throw Error("provider kind '" + c.kind + "' cannot serve embeddings");
}

}  // namespace falsecite
