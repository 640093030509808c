#pragma once

// Helpers shared by the unit suites and the acceptance runner.

#include <atomic>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "falsecite/dump.hpp"
#include "falsecite/harness.hpp"
#include "falsecite/hash.hpp"
#include "falsecite/io.hpp"

namespace falsecite::testing {

inline const fs::path kFixtures = FALSECITE_FIXTURES;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "falsecite") {
    static std::atomic<unsigned> counter{0};
    path_ = fs::temp_directory_path() /
            (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

/// Softmax rows over P + `extra` positions truncated to the first P, so each
/// row sums to at most 1 like a real input-restricted attention slice.
inline activation::ActivationDump synthetic_dump(std::int64_t response_id, std::size_t L, std::size_t H,
                                                 std::size_t D, std::size_t P, std::vector<std::string> tokens,
                                                 std::uint64_t seed) {
  activation::ModelMeta meta{"synthetic", L, H, D, P};
  auto d = activation::ActivationDump::zeros(response_id, meta, std::move(tokens));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t T = d.n_tokens();
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t extra = t;
    for (std::size_t l = 0; l < L; ++l) {
      for (std::size_t h = 0; h < H; ++h) {
        std::vector<double> logits(P + extra);
        double z = 0.0;
        for (auto& x : logits) {
          x = std::exp(normal(rng));
          z += x;
        }
        auto row = d.attention_row(t, l, h);
        for (std::size_t p = 0; p < P; ++p) row[p] = static_cast<float>(logits[p] / z * 0.999);
      }
    }
    for (std::size_t slot = 0; slot <= L; ++slot) {
      auto row = d.hidden_row(t, slot);
      for (auto& v : row) v = static_cast<float>(normal(rng) + 0.1 * static_cast<double>(slot));
    }
  }
  return d;
}

inline std::vector<std::string> token_strings(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("tok" + std::to_string(i));
  return out;
}

/// FEVER-shaped JSONL with `n_false` refuted records among `n_total`.
inline std::string fever_records(std::size_t n_total, std::size_t n_false, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<int> is_false(n_total, 0);
  for (std::size_t i = 0; i < n_false; ++i) is_false[i] = 1;
  std::shuffle(is_false.begin(), is_false.end(), rng);
  static const char* kOther[] = {"SUPPORTS", "NOT ENOUGH INFO"};
  std::string out;
  for (std::size_t i = 0; i < n_total; ++i) {
    json j{{"id", 1000 + i},
           {"label", is_false[i] ? "REFUTES" : kOther[rng() % 2]},
           {"claim", "Synthetic claim number " + std::to_string(i) + " about topic " + std::to_string(rng() % 97) + "."}};
    out += j.dump() + "\n";
  }
  return out;
}

/// SciQ-shaped JSONL with `n` well-formed questions.
inline std::string sciq_records(std::size_t n) {
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    json j{{"question", "Which quantity does experiment " + std::to_string(i) + " measure?"},
           {"distractor1", "mass " + std::to_string(i)},
           {"distractor2", "charge " + std::to_string(i)},
           {"distractor3", "spin " + std::to_string(i)},
           {"correct_answer", "energy"},
           {"support", ""}};
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace falsecite::testing
