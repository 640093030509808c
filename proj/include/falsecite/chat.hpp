#pragma once

// Chat endpoint abstraction used by the test-model and judge stages, with
// bounded-backoff retries, a response cache and offline client doubles.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "falsecite/error.hpp"
#include "falsecite/hash.hpp"
#include "falsecite/io.hpp"
#include "falsecite/rng.hpp"
#include "falsecite/text.hpp"

namespace falsecite::harness {

struct ChatMessage {
  std::string role;
  std::string content;
};

/// Decoding parameters. Defaults are greedy with a length cap.
struct DecodingParams {
  double temperature = 0.0;
  int max_tokens = 256;
  /// Ask the endpoint for per-token strings (needed for token labelling).
  bool want_tokens = false;
  /// Provider-specific extras passed through verbatim.
  json extra = json::object();

  json to_json() const {
    return json{{"temperature", temperature}, {"max_tokens", max_tokens}, {"want_tokens", want_tokens}, {"extra", extra}};
  }
  std::string hash() const { return sha256_hex(to_json().dump()); }
};

struct ChatRequest {
  std::vector<ChatMessage> messages;
  DecodingParams params;

  std::string prompt_hash() const {
    Sha256 h;
    for (const auto& m : messages) h.update(m.role).update("\x1f").update(m.content).update("\x1e");
    return h.hex();
  }

  /// Content of the last user message.
  const std::string& user_content() const {
    for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
      if (it->role == "user") return it->content;
    }
    throw Error("chat request has no user message");
  }
};

struct ChatReply {
  std::string text;
  std::optional<std::vector<std::string>> tokens;
  std::int64_t latency_ms = 0;
};

/// Retryable failure: connection errors, timeouts, HTTP 408/429/5xx.
class TransientError : public Error {
 public:
  using Error::Error;
};

/// Non-retryable endpoint failure.
class EndpointError : public Error {
 public:
  using Error::Error;
};

class ChatClient {
 public:
  virtual ~ChatClient() = default;
  /// Must be safe to call from several threads at once.
  virtual ChatReply complete(const ChatRequest& request) = 0;
  virtual std::string model() const = 0;
};

struct RetryPolicy {
  int max_attempts = 4;
  std::chrono::milliseconds base_delay{500};
  std::chrono::milliseconds max_delay{8000};
  std::function<void(std::chrono::milliseconds)> sleep = [](std::chrono::milliseconds d) {
    std::this_thread::sleep_for(d);
  };
};

/// Exponential backoff on TransientError; EndpointError and the final
/// transient failure propagate.
inline ChatReply complete_with_retry(ChatClient& client, const ChatRequest& request, const RetryPolicy& policy) {
  auto delay = policy.base_delay;
  for (int attempt = 1;; ++attempt) {
    try {
      return client.complete(request);
    } catch (const TransientError&) {
      if (attempt >= policy.max_attempts) throw;
      if (policy.sleep) policy.sleep(delay);
      delay = std::min(delay * 2, policy.max_delay);
    }
  }
}

/// Replies keyed by (model, prompt hash, params hash). Optionally backed by
/// an append-only JSONL file.
class ResponseCache {
 public:
  ResponseCache() = default;

  explicit ResponseCache(fs::path path) : path_(std::move(path)) {
    if (fs::exists(path_)) {
      for_each_jsonl(path_, [&](const json& j, std::size_t) {
        ChatReply r;
        r.text = j.at("text").get<std::string>();
        if (auto it = j.find("tokens"); it != j.end() && !it->is_null()) r.tokens = it->get<std::vector<std::string>>();
        entries_[j.at("key").get<std::string>()] = std::move(r);
      });
    }
  }

  static std::string key(const std::string& model, const ChatRequest& req) {
    return sha256_hex(model + "\n" + req.prompt_hash() + "\n" + req.params.hash());
  }

  std::optional<ChatReply> find(const std::string& key) const {
    std::lock_guard lock(mu_);
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  void put(const std::string& key, const ChatReply& reply) {
    std::lock_guard lock(mu_);
    entries_[key] = reply;
    if (!path_.empty()) {
      std::ofstream out(path_, std::ios::app | std::ios::binary);
      if (!out) throw Error("cannot append to response cache " + path_.string());
      json j{{"key", key}, {"text", reply.text}};
      j["tokens"] = reply.tokens ? json(*reply.tokens) : json(nullptr);
      write_jsonl_line(out, j);
    }
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
  }

 private:
  fs::path path_;
  mutable std::mutex mu_;
  std::map<std::string, ChatReply> entries_;
};

// ---------------------------------------------------------------------------
// Offline clients

/// Replies with the user prompt itself, tokenised on whitespace boundaries.
class EchoChatClient final : public ChatClient {
 public:
  explicit EchoChatClient(std::string model = "echo") : model_(std::move(model)) {}

  ChatReply complete(const ChatRequest& request) override {
    ChatReply r;
    r.text = request.user_content();
    r.tokens = split_keep_spaces(r.text);
    return r;
  }

  std::string model() const override { return model_; }

 private:
  std::string model_;
};

/// Wraps a callable; used for scripted test doubles.
class FunctionChatClient final : public ChatClient {
 public:
  using Fn = std::function<ChatReply(const ChatRequest&)>;
  FunctionChatClient(std::string model, Fn fn) : model_(std::move(model)), fn_(std::move(fn)) {}

  ChatReply complete(const ChatRequest& request) override { return fn_(request); }
  std::string model() const override { return model_; }

 private:
  std::string model_;
  Fn fn_;
};

/// Replays recorded replies keyed by the SHA-256 of the user prompt.
/// Fixture rows: {"prompt": ... | "prompt_sha256": ..., "reply": ..., "tokens": [...]?}.
class ReplayChatClient final : public ChatClient {
 public:
  ReplayChatClient(std::string model, const fs::path& fixture) : model_(std::move(model)) {
    for_each_jsonl(fixture, [&](const json& j, std::size_t line) {
      std::string key;
      if (auto it = j.find("prompt_sha256"); it != j.end()) {
        key = it->get<std::string>();
      } else if (auto p = j.find("prompt"); p != j.end()) {
        key = sha256_hex(p->get<std::string>());
      } else {
        throw RecordError(fixture.string(), line, "replay row needs 'prompt' or 'prompt_sha256'");
      }
      ChatReply r;
      r.text = j.at("reply").get<std::string>();
      if (auto t = j.find("tokens"); t != j.end() && !t->is_null()) r.tokens = t->get<std::vector<std::string>>();
      replies_[key] = std::move(r);
    });
  }

  ChatReply complete(const ChatRequest& request) override {
    auto it = replies_.find(sha256_hex(request.user_content()));
    if (it == replies_.end()) throw EndpointError("replay fixture has no reply for this prompt");
    return it->second;
  }

  std::string model() const override { return model_; }

 private:
  std::string model_;
  std::map<std::string, ChatReply> replies_;
};

}  // namespace falsecite::harness
