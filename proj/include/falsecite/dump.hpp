#pragma once

// Activation dump container and its on-disk format.
//
// Layout (all integers and floats little-endian):
//   u64   header length N
//   N     UTF-8 JSON header {response_id, model, L, H, D, P, T, token_texts,
//         dtype: "f32", byte_order: "little"}
//   f32   attention[T][L][H][P]   attention of generated token t over the P
//                                 input positions, per layer and head
//   f32   hidden[T][L+1][D]       slot 0 is the embedding output, slot l the
//                                 output of block l
//   u64   FNV-1a 64 over the attention bytes followed by the hidden bytes

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "falsecite/error.hpp"
#include "falsecite/hash.hpp"
#include "falsecite/io.hpp"

namespace falsecite::activation {

static_assert(std::endian::native == std::endian::little, "dump I/O assumes a little-endian host");

/// Attention rows are slices of softmax rows, so they may sum to less than 1.
inline constexpr double kAttentionSumTolerance = 1e-3;

struct ModelMeta {
  std::string model;
  std::size_t n_layers = 0;        // L
  std::size_t n_heads = 0;         // H
  std::size_t hidden_size = 0;     // D
  std::size_t n_input_tokens = 0;  // P

  friend bool operator==(const ModelMeta&, const ModelMeta&) = default;
};

struct ActivationDump {
  std::int64_t response_id = 0;
  ModelMeta meta;
  std::vector<std::string> token_texts;
  std::vector<float> attention;
  std::vector<float> hidden;

  std::size_t n_tokens() const noexcept { return token_texts.size(); }
  std::size_t hidden_slots() const noexcept { return meta.n_layers + 1; }

  std::size_t attention_size() const noexcept {
    return n_tokens() * meta.n_layers * meta.n_heads * meta.n_input_tokens;
  }
  std::size_t hidden_size() const noexcept { return n_tokens() * hidden_slots() * meta.hidden_size; }

  std::span<const float> attention_row(std::size_t t, std::size_t layer, std::size_t head) const {
    const std::size_t p = meta.n_input_tokens;
    const std::size_t offset = ((t * meta.n_layers + layer) * meta.n_heads + head) * p;
    return std::span<const float>(attention).subspan(offset, p);
  }

  std::span<float> attention_row(std::size_t t, std::size_t layer, std::size_t head) {
    const std::size_t p = meta.n_input_tokens;
    const std::size_t offset = ((t * meta.n_layers + layer) * meta.n_heads + head) * p;
    return std::span<float>(attention).subspan(offset, p);
  }

  std::span<const float> hidden_row(std::size_t t, std::size_t slot) const {
    const std::size_t d = meta.hidden_size;
    return std::span<const float>(hidden).subspan((t * hidden_slots() + slot) * d, d);
  }

  std::span<float> hidden_row(std::size_t t, std::size_t slot) {
    const std::size_t d = meta.hidden_size;
    return std::span<float>(hidden).subspan((t * hidden_slots() + slot) * d, d);
  }

  /// Zero-filled dump with the given shape.
  static ActivationDump zeros(std::int64_t response_id, ModelMeta meta, std::vector<std::string> tokens) {
    ActivationDump d;
    d.response_id = response_id;
    d.meta = std::move(meta);
    d.token_texts = std::move(tokens);
    d.attention.assign(d.attention_size(), 0.0f);
    d.hidden.assign(d.hidden_size(), 0.0f);
    return d;
  }
};

inline void validate(const ActivationDump& d) {
  const auto& m = d.meta;
  if (m.n_layers == 0 || m.n_heads == 0 || m.hidden_size == 0 || m.n_input_tokens == 0) {
    throw Error("dump " + std::to_string(d.response_id) + ": L, H, D and P must be positive");
  }
  if (d.attention.size() != d.attention_size()) {
    throw Error("dump " + std::to_string(d.response_id) + ": attention size does not match T*L*H*P");
  }
  if (d.hidden.size() != d.hidden_size()) {
    throw Error("dump " + std::to_string(d.response_id) + ": hidden size does not match T*(L+1)*D");
  }
  for (std::size_t t = 0; t < d.n_tokens(); ++t) {
    for (std::size_t l = 0; l < m.n_layers; ++l) {
      for (std::size_t h = 0; h < m.n_heads; ++h) {
        double sum = 0.0;
        for (float v : d.attention_row(t, l, h)) {
          if (!std::isfinite(v)) throw Error("dump " + std::to_string(d.response_id) + ": non-finite attention value");
          if (v < 0.0f) throw Error("dump " + std::to_string(d.response_id) + ": negative attention value");
          sum += v;
        }
        if (sum > 1.0 + kAttentionSumTolerance) {
          throw Error("dump " + std::to_string(d.response_id) + ": attention row (t=" + std::to_string(t) +
                      ", layer=" + std::to_string(l) + ", head=" + std::to_string(h) + ") sums to " +
                      std::to_string(sum));
        }
      }
    }
  }
  for (float v : d.hidden) {
    if (!std::isfinite(v)) throw Error("dump " + std::to_string(d.response_id) + ": non-finite hidden value");
  }
}

inline std::uint64_t dump_checksum(std::span<const float> attention, std::span<const float> hidden) {
  Fnv1a64 h;
  h.update(std::as_bytes(attention));
  h.update(std::as_bytes(hidden));
  return h.value();
}

inline json dump_header(const ActivationDump& d) {
  return json{{"response_id", d.response_id},
              {"model", d.meta.model},
              {"L", d.meta.n_layers},
              {"H", d.meta.n_heads},
              {"D", d.meta.hidden_size},
              {"P", d.meta.n_input_tokens},
              {"T", d.n_tokens()},
              {"token_texts", d.token_texts},
              {"dtype", "f32"},
              {"byte_order", "little"}};
}

inline void write_dump(std::ostream& out, const ActivationDump& d) {
  validate(d);
  const std::string header = dump_header(d).dump();
  const std::uint64_t len = header.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(d.attention.data()),
            static_cast<std::streamsize>(d.attention.size() * sizeof(float)));
  out.write(reinterpret_cast<const char*>(d.hidden.data()),
            static_cast<std::streamsize>(d.hidden.size() * sizeof(float)));
  const std::uint64_t sum = dump_checksum(d.attention, d.hidden);
  out.write(reinterpret_cast<const char*>(&sum), sizeof sum);
}

inline void write_dump(const fs::path& path, const ActivationDump& d) {
  AtomicFile f(path);
  write_dump(f.stream(), d);
  f.commit();
}

namespace detail {

class ByteReader {
 public:
  ByteReader(std::span<const char> bytes, std::string name) : bytes_(bytes), name_(std::move(name)) {}

  std::span<const char> take(std::size_t n, const char* section) {
    if (bytes_.size() - pos_ < n) {
      throw Error(name_ + ": truncated file, missing " + section + " (need " + std::to_string(n) + " bytes, have " +
                  std::to_string(bytes_.size() - pos_) + ")");
    }
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  std::uint64_t take_u64(const char* section) {
    std::uint64_t v = 0;
    std::memcpy(&v, take(sizeof v, section).data(), sizeof v);
    return v;
  }

  std::vector<float> take_floats(std::size_t count, const char* section) {
    if (count > (bytes_.size() - pos_) / sizeof(float)) {
      throw Error(name_ + ": truncated file, missing " + section + " (need " + std::to_string(count) +
                  " floats, have " + std::to_string(bytes_.size() - pos_) + " bytes)");
    }
    auto raw = take(count * sizeof(float), section);
    std::vector<float> out(count);
    std::memcpy(out.data(), raw.data(), raw.size());
    return out;
  }

  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  std::span<const char> bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

inline std::size_t header_size(const json& h, const char* key) {
  auto it = h.find(key);
  if (it == h.end() || !it->is_number_unsigned()) {
    throw Error(std::string("dump header: field '") + key + "' missing or not a non-negative integer");
  }
  return it->get<std::size_t>();
}

}  // namespace detail

/// Parses and fully validates a dump held in memory.
inline ActivationDump parse_dump(std::span<const char> bytes, const std::string& name = "dump") {
  detail::ByteReader in(bytes, name);
  const std::uint64_t header_len = in.take_u64("header length");
  if (header_len > in.remaining()) in.take(header_len, "header");
  const auto header_bytes = in.take(header_len, "header");
  json h;
  try {
    h = json::parse(header_bytes.begin(), header_bytes.end());
  } catch (const json::parse_error& e) {
    throw Error(name + ": header is not valid JSON: " + e.what());
  }
  if (h.value("dtype", std::string{}) != "f32") throw Error(name + ": unsupported dtype (expected f32)");
  if (h.value("byte_order", std::string{}) != "little") throw Error(name + ": unsupported byte order");

  ActivationDump d;
  try {
    d.response_id = h.at("response_id").get<std::int64_t>();
    d.meta.model = h.value("model", std::string{});
    d.meta.n_layers = detail::header_size(h, "L");
    d.meta.n_heads = detail::header_size(h, "H");
    d.meta.hidden_size = detail::header_size(h, "D");
    d.meta.n_input_tokens = detail::header_size(h, "P");
    d.token_texts = h.at("token_texts").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw Error(name + ": malformed header: " + e.what());
  }
  if (detail::header_size(h, "T") != d.token_texts.size()) {
    throw Error(name + ": header T does not match the number of token_texts");
  }
  // Each section's element count must fit in the file before anything is allocated.
  const auto bounded_product = [&](std::initializer_list<std::size_t> dims) {
    std::size_t n = 1;
    for (std::size_t f : dims) {
      if (f != 0 && n > bytes.size() / f) throw Error(name + ": header shape exceeds file size");
      n *= f;
    }
    return n;
  };
  bounded_product({d.n_tokens(), d.meta.n_layers, d.meta.n_heads, d.meta.n_input_tokens});
  bounded_product({d.n_tokens(), d.meta.n_layers + 1, d.meta.hidden_size});
  d.attention = in.take_floats(d.attention_size(), "attention section");
  d.hidden = in.take_floats(d.hidden_size(), "hidden section");
  const std::uint64_t stored = in.take_u64("checksum");
  if (in.remaining() != 0) throw Error(name + ": " + std::to_string(in.remaining()) + " trailing bytes after checksum");
  if (stored != dump_checksum(d.attention, d.hidden)) throw Error(name + ": checksum mismatch");
  try {
    validate(d);
  } catch (const Error& e) {
    throw Error(name + ": " + e.what());
  }
  return d;
}

inline ActivationDump read_dump(const fs::path& path) {
  const std::string bytes = read_text_file(path);
  return parse_dump(std::span<const char>(bytes.data(), bytes.size()), path.string());
}

}  // namespace falsecite::activation
