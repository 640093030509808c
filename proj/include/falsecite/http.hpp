#pragma once

// HTTP chat and embedding clients for OpenAI-compatible endpoints.

#include <chrono>
#include <optional>
#include <regex>
#include <string>
#include <utility>

#include <httplib.h>
// <resolv.h> defines _res as a macro, which breaks Eigen when included later.
#ifdef _res
#undef _res
#endif

#include "falsecite/chat.hpp"
#include "falsecite/embedding.hpp"
#include "falsecite/error.hpp"

namespace falsecite {

struct HttpTarget {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

inline HttpTarget parse_endpoint_url(const std::string& url) {
  static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)", std::regex::icase);
  std::smatch m;
  if (!std::regex_match(url, m, kUrl)) throw Error("invalid endpoint URL '" + url + "'");
  return {m[1].str(), m[2].matched ? m[2].str() : std::string("/")};
}

enum class Protocol { OpenAIChat, OpenAICompletions, OpenAIEmbeddings };

inline Protocol protocol_from_string(const std::string& s) {
  if (s == "openai-chat") return Protocol::OpenAIChat;
  if (s == "openai-completions") return Protocol::OpenAICompletions;
  if (s == "openai-embeddings") return Protocol::OpenAIEmbeddings;
  throw Error("unknown endpoint protocol '" + s + "'");
}

struct HttpSettings {
  std::string endpoint_url;
  std::string model_name;
  Protocol protocol = Protocol::OpenAIChat;
  /// Bearer token, taken from the environment by the caller. May be empty.
  std::string token;
  std::chrono::seconds timeout{120};
};

namespace detail {

/// POSTs a JSON body; maps connection failures and 408/429/5xx to
/// TransientError and other non-2xx statuses to EndpointError.
inline json post_json(const HttpSettings& s, const json& body) {
  const HttpTarget target = parse_endpoint_url(s.endpoint_url);
  httplib::Client client(target.origin);
  client.set_connection_timeout(s.timeout);
  client.set_read_timeout(s.timeout);
  client.set_write_timeout(s.timeout);
  httplib::Headers headers;
  if (!s.token.empty()) headers.emplace("Authorization", "Bearer " + s.token);
  auto res = client.Post(target.path, headers, body.dump(), "application/json");
  if (!res) throw harness::TransientError("request to " + s.endpoint_url + " failed: " + httplib::to_string(res.error()));
  const int status = res->status;
  if (status == 408 || status == 429 || status >= 500) {
    throw harness::TransientError("endpoint returned HTTP " + std::to_string(status));
  }
  if (status < 200 || status >= 300) {
    throw harness::EndpointError("endpoint returned HTTP " + std::to_string(status) + ": " + res->body.substr(0, 500));
  }
  try {
    return json::parse(res->body);
  } catch (const json::parse_error& e) {
    throw harness::EndpointError(std::string("endpoint returned invalid JSON: ") + e.what());
  }
}

}  // namespace detail

class HttpChatClient final : public harness::ChatClient {
 public:
  explicit HttpChatClient(HttpSettings settings) : s_(std::move(settings)) {
    if (s_.protocol == Protocol::OpenAIEmbeddings) throw Error("chat client cannot use the embeddings protocol");
    parse_endpoint_url(s_.endpoint_url);
  }

  harness::ChatReply complete(const harness::ChatRequest& req) override {
    json body = req.params.extra.is_object() ? req.params.extra : json::object();
    body["model"] = s_.model_name;
    body["temperature"] = req.params.temperature;
    body["max_tokens"] = req.params.max_tokens;
    if (s_.protocol == Protocol::OpenAIChat) {
      json messages = json::array();
      for (const auto& m : req.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
      body["messages"] = std::move(messages);
      if (req.params.want_tokens) body["logprobs"] = true;
    } else {
      std::string prompt;
      for (const auto& m : req.messages) {
        if (!prompt.empty()) prompt += "\n\n";
        prompt += m.content;
      }
      body["prompt"] = std::move(prompt);
      if (req.params.want_tokens) body["logprobs"] = 1;
    }

    const auto start = std::chrono::steady_clock::now();
    const json res = detail::post_json(s_, body);
    harness::ChatReply reply;
    reply.latency_ms =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();
    try {
      const json& choice = res.at("choices").at(0);
      if (s_.protocol == Protocol::OpenAIChat) {
        reply.text = choice.at("message").at("content").get<std::string>();
        if (auto lp = choice.find("logprobs"); lp != choice.end() && lp->is_object() && lp->contains("content")) {
          std::vector<std::string> tokens;
          for (const auto& t : lp->at("content")) tokens.push_back(t.at("token").get<std::string>());
          reply.tokens = std::move(tokens);
        }
      } else {
        reply.text = choice.at("text").get<std::string>();
        if (auto lp = choice.find("logprobs"); lp != choice.end() && lp->is_object() && lp->contains("tokens")) {
          reply.tokens = lp->at("tokens").get<std::vector<std::string>>();
        }
      }
    } catch (const json::exception& e) {
      throw harness::EndpointError(std::string("unexpected completion payload: ") + e.what());
    }
    return reply;
  }

  std::string model() const override { return s_.model_name; }

 private:
  HttpSettings s_;
};

class HttpEmbeddingProvider final : public citation::EmbeddingProvider {
 public:
  HttpEmbeddingProvider(HttpSettings settings, harness::RetryPolicy retry = {})
      : s_(std::move(settings)), retry_(std::move(retry)) {
    parse_endpoint_url(s_.endpoint_url);
  }

  citation::EmbeddingVector embed(const std::string& text) override {
    const json body{{"model", s_.model_name}, {"input", text}};
    auto delay = retry_.base_delay;
    for (int attempt = 1;; ++attempt) {
      try {
        const json res = detail::post_json(s_, body);
        try {
          return citation::EmbeddingVector{res.at("data").at(0).at("embedding").get<std::vector<double>>()};
        } catch (const json::exception& e) {
          throw harness::EndpointError(std::string("unexpected embedding payload: ") + e.what());
        }
      } catch (const harness::TransientError&) {
        if (attempt >= retry_.max_attempts) throw;
        if (retry_.sleep) retry_.sleep(delay);
        delay = std::min(delay * 2, retry_.max_delay);
      }
    }
  }

  std::string name() const override { return s_.model_name; }

 private:
  HttpSettings s_;
  harness::RetryPolicy retry_;
};

}  // namespace falsecite
