#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "falsecite/error.hpp"
#include "falsecite/hash.hpp"
#include "falsecite/io.hpp"
#include "falsecite/rng.hpp"

namespace falsecite::citation {

struct EmbeddingVector {
  std::vector<double> values;

  std::size_t dimension() const noexcept { return values.size(); }
  friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;
};

inline void check_finite(const EmbeddingVector& v) {
  if (v.values.empty()) throw Error("embedding has zero dimension");
  for (double x : v.values) {
    if (!std::isfinite(x)) throw Error("embedding contains a non-finite value");
  }
}

/// Text -> vector. Implementations must be safe to call concurrently and must
/// return the same dimension for every text.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual EmbeddingVector embed(const std::string& text) = 0;
  virtual std::string name() const = 0;
};

/// Deterministic pseudo-embeddings derived from the text hash. Offline
/// pipelines and tests use it in place of a real embedding model.
class MockEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit MockEmbeddingProvider(std::size_t dimension = 64, std::uint64_t seed = 0)
      : dimension_(dimension), seed_(seed) {
    if (dimension == 0) throw Error("mock embedding dimension must be positive");
  }

  EmbeddingVector embed(const std::string& text) override {
    SeededRng rng(seed_from_text(text, seed_));
    EmbeddingVector v;
    v.values.resize(dimension_);
    for (double& x : v.values) x = 2.0 * rng.unit() - 1.0;
    return v;
  }

  std::string name() const override { return "mock-" + std::to_string(dimension_); }

 private:
  std::size_t dimension_;
  std::uint64_t seed_;
};

/// Content-addressed vector store: one JSONL row {"key": sha256(text),
/// "values": [...]} per text. Rows are written sorted by key so the file is
/// identical for identical contents.
class VectorStore {
 public:
  static std::string key_for(const std::string& text) { return sha256_hex(text); }

  void load(const fs::path& path) {
    for_each_jsonl(path, [&](const json& j, std::size_t line) {
      try {
        EmbeddingVector v{j.at("values").get<std::vector<double>>()};
        check_finite(v);
        put_key(j.at("key").get<std::string>(), std::move(v));
      } catch (const RecordError&) {
        throw;
      } catch (const std::exception& e) {
        throw RecordError(path.string(), line, e.what());
      }
    });
  }

  void save(const fs::path& path) const {
    std::lock_guard lock(mu_);
    AtomicFile out(path);
    for (const auto& [key, v] : entries_) write_jsonl_line(out.stream(), json{{"key", key}, {"values", v.values}});
    out.commit();
  }

  std::optional<EmbeddingVector> find(const std::string& text) const {
    std::lock_guard lock(mu_);
    auto it = entries_.find(key_for(text));
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  void put(const std::string& text, EmbeddingVector v) { put_key(key_for(text), std::move(v)); }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
  }

 private:
  void put_key(std::string key, EmbeddingVector v) {
    std::lock_guard lock(mu_);
    if (dimension_ == 0) dimension_ = v.dimension();
    if (v.dimension() != dimension_) {
      throw Error("vector store dimension mismatch: expected " + std::to_string(dimension_) + ", got " +
                  std::to_string(v.dimension()));
    }
    entries_.insert_or_assign(std::move(key), std::move(v));
  }

  mutable std::mutex mu_;
  std::map<std::string, EmbeddingVector> entries_;
  std::size_t dimension_ = 0;
};

/// Serves vectors from a VectorStore; misses go to the inner provider (when
/// present) and are written back to the store.
class CachingEmbeddingProvider final : public EmbeddingProvider {
 public:
  CachingEmbeddingProvider(std::shared_ptr<VectorStore> store, std::shared_ptr<EmbeddingProvider> inner)
      : store_(std::move(store)), inner_(std::move(inner)) {}

  EmbeddingVector embed(const std::string& text) override {
    if (auto hit = store_->find(text)) return *hit;
    if (!inner_) throw Error("no cached embedding for text with key " + VectorStore::key_for(text));
    EmbeddingVector v = inner_->embed(text);
    check_finite(v);
    store_->put(text, v);
    return v;
  }

  std::string name() const override { return inner_ ? inner_->name() : "vector-file"; }

 private:
  std::shared_ptr<VectorStore> store_;
  std::shared_ptr<EmbeddingProvider> inner_;
};

}  // namespace falsecite::citation
