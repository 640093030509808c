#pragma once

// Attention statistics per (generated token, layer), Spearman layer ranking
// against token hallucination labels, and pooled hidden-state extraction.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <spdlog/spdlog.h>

#include "falsecite/dump.hpp"
#include "falsecite/error.hpp"
#include "falsecite/harness.hpp"

namespace falsecite::activation {

// ---------------------------------------------------------------------------
// Attention vectors and statistics

enum class HeadAggregation { Mean, Max };

/// Head-aggregated attention of generated token t over the input positions at
/// one layer.
inline std::vector<double> token_attention_vector(const ActivationDump& dump, std::size_t t, std::size_t layer,
                                                  HeadAggregation agg = HeadAggregation::Mean) {
  if (t >= dump.n_tokens()) throw Error("token index " + std::to_string(t) + " out of range");
  if (layer >= dump.meta.n_layers) throw Error("layer index " + std::to_string(layer) + " out of range");
  const std::size_t heads = dump.meta.n_heads;
  std::vector<double> v(dump.meta.n_input_tokens, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    const auto row = dump.attention_row(t, layer, h);
    for (std::size_t p = 0; p < v.size(); ++p) {
      if (agg == HeadAggregation::Mean) {
        v[p] += row[p];
      } else {
        v[p] = h == 0 ? row[p] : std::max<double>(v[p], row[p]);
      }
    }
  }
  if (agg == HeadAggregation::Mean) {
    for (double& x : v) x /= static_cast<double>(heads);
  }
  return v;
}

struct AttentionStats {
  double mean = 0.0;
  double max = 0.0;
  double entropy = 0.0;
};

/// Mean and max of the raw vector; Shannon entropy (nats) of the vector
/// renormalised to a distribution, with 0 ln 0 = 0.
inline AttentionStats attention_stats(std::span<const double> v) {
  if (v.empty()) throw Error("attention_stats: empty vector");
  double sum = 0.0;
  double mx = v.front();
  for (double x : v) {
    if (!(x >= 0.0)) throw Error("attention_stats: negative or non-finite entry");
    sum += x;
    mx = std::max(mx, x);
  }
  if (sum <= 0.0) throw Error("attention_stats: all-zero vector, entropy undefined");
  double entropy = 0.0;
  for (double x : v) {
    if (x > 0.0) {
      const double p = x / sum;
      entropy -= p * std::log(p);
    }
  }
  return {sum / static_cast<double>(v.size()), mx, std::max(0.0, entropy)};
}

enum class Stat { Mean = 0, Max = 1, Entropy = 2 };
inline constexpr std::array<Stat, 3> kStats{Stat::Mean, Stat::Max, Stat::Entropy};

inline std::string_view to_string(Stat s) {
  switch (s) {
    case Stat::Mean: return "mean";
    case Stat::Max: return "max";
    case Stat::Entropy: return "entropy";
  }
  return "mean";
}

/// Three tokens x layers frames. Rows follow `token_index`, which lists the
/// generated tokens kept; tokens with an all-zero attention vector at any
/// layer are dropped.
struct StatFrames {
  std::array<Eigen::MatrixXd, 3> frames;
  std::vector<std::size_t> token_index;

  const Eigen::MatrixXd& operator[](Stat s) const { return frames[static_cast<std::size_t>(s)]; }
  Eigen::MatrixXd& operator[](Stat s) { return frames[static_cast<std::size_t>(s)]; }
  std::size_t rows() const noexcept { return token_index.size(); }
  std::size_t layers() const noexcept { return static_cast<std::size_t>(frames[0].cols()); }
};

inline StatFrames build_stat_frames(const ActivationDump& dump, HeadAggregation agg = HeadAggregation::Mean) {
  const std::size_t T = dump.n_tokens();
  const std::size_t L = dump.meta.n_layers;
  std::vector<AttentionStats> cells(T * L);
  std::vector<bool> keep(T, true);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t l = 0; l < L && keep[t]; ++l) {
      const auto v = token_attention_vector(dump, t, l, agg);
      try {
        cells[t * L + l] = attention_stats(v);
      } catch (const Error& e) {
        spdlog::warn("response {}: excluding token {} from stat frames: {}", dump.response_id, t, e.what());
        keep[t] = false;
      }
    }
  }
  StatFrames out;
  for (std::size_t t = 0; t < T; ++t) {
    if (keep[t]) out.token_index.push_back(t);
  }
  const auto rows = static_cast<Eigen::Index>(out.token_index.size());
  for (auto& f : out.frames) f.resize(rows, static_cast<Eigen::Index>(L));
  for (Eigen::Index r = 0; r < rows; ++r) {
    const std::size_t t = out.token_index[static_cast<std::size_t>(r)];
    for (std::size_t l = 0; l < L; ++l) {
      const auto& c = cells[t * L + l];
      const auto col = static_cast<Eigen::Index>(l);
      out[Stat::Mean](r, col) = c.mean;
      out[Stat::Max](r, col) = c.max;
      out[Stat::Entropy](r, col) = c.entropy;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Spearman

/// 1-based ranks with ties assigned the average of the positions they span.
inline std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i + 1;
    while (j < order.size() && x[order[j]] == x[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j);  // mean of positions i+1..j
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = avg;
    i = j;
  }
  return ranks;
}

struct SpearmanResult {
  double rho = 0.0;
  /// Either input had zero rank variance; rho is reported as 0.
  bool degenerate = false;
};

inline SpearmanResult spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error("spearman: length mismatch");
  if (x.size() < 2) throw Error("spearman: need at least 2 observations");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double mean = 0.5 * static_cast<double>(x.size() + 1);
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    const double dx = rx[i] - mean;
    const double dy = ry[i] - mean;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return {0.0, true};
  return {std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0), false};
}

// ---------------------------------------------------------------------------
// Layer ranking

inline constexpr std::size_t kTopLayers = 5;

class SingleClassLabels : public Error {
 public:
  using Error::Error;
};

struct LayerRanking {
  std::int64_t response_id = 0;
  /// 3 x L; rows in kStats order.
  Eigen::MatrixXd rho;
  Eigen::MatrixXd rank;
  std::array<std::vector<bool>, 3> degenerate;
  std::vector<double> avg_rank;
  /// 0-based attention layer indices, best first.
  std::vector<std::size_t> top_layers;
  /// Every layer tied on every statistic: the order is pure index order.
  bool tied = false;
};

/// Ranks layers per statistic by |rho| against the token labels (rank 1 =
/// strongest; degenerate layers last; ties to the lower index), averages the
/// three ranks and keeps the min(5, L) best layers.
inline LayerRanking rank_layers(const StatFrames& frames, const harness::TokenLabelSequence& labels,
                                std::size_t top_n = kTopLayers) {
  const std::size_t L = frames.layers();
  std::vector<double> y;
  y.reserve(frames.rows());
  for (std::size_t t : frames.token_index) {
    if (t >= labels.labels.size()) {
      throw Error("response " + std::to_string(labels.response_id) + ": token labels shorter than the dump");
    }
    y.push_back(labels.labels[t]);
  }
  if (y.size() < 2) throw SingleClassLabels("response " + std::to_string(labels.response_id) + ": fewer than 2 tokens");
  const bool has_pos = std::find(y.begin(), y.end(), 1.0) != y.end();
  const bool has_neg = std::find(y.begin(), y.end(), 0.0) != y.end();
  if (!has_pos || !has_neg) {
    throw SingleClassLabels("response " + std::to_string(labels.response_id) + ": token labels contain a single class");
  }

  LayerRanking out;
  out.response_id = labels.response_id;
  out.rho = Eigen::MatrixXd::Zero(3, static_cast<Eigen::Index>(L));
  out.rank = Eigen::MatrixXd::Zero(3, static_cast<Eigen::Index>(L));
  out.tied = true;
  std::vector<double> column(y.size());
  for (std::size_t s = 0; s < 3; ++s) {
    const Eigen::MatrixXd& f = frames.frames[s];
    out.degenerate[s].assign(L, false);
    std::vector<double> abs_rho(L);
    for (std::size_t l = 0; l < L; ++l) {
      for (std::size_t r = 0; r < y.size(); ++r) column[r] = f(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(l));
      const auto sp = spearman(column, y);
      out.rho(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(l)) = sp.rho;
      out.degenerate[s][l] = sp.degenerate;
      abs_rho[l] = std::abs(sp.rho);
    }
    std::vector<std::size_t> order(L);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (out.degenerate[s][a] != out.degenerate[s][b]) return !out.degenerate[s][a];
      if (abs_rho[a] != abs_rho[b]) return abs_rho[a] > abs_rho[b];
      return a < b;
    });
    for (std::size_t pos = 0; pos < L; ++pos) {
      out.rank(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(order[pos])) = static_cast<double>(pos + 1);
    }
    for (std::size_t l = 1; l < L; ++l) {
      if (out.degenerate[s][l] != out.degenerate[s][0] || abs_rho[l] != abs_rho[0]) out.tied = false;
    }
  }
  out.avg_rank.resize(L);
  for (std::size_t l = 0; l < L; ++l) out.avg_rank[l] = out.rank.col(static_cast<Eigen::Index>(l)).sum() / 3.0;

  std::vector<std::size_t> order(L);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return out.avg_rank[a] < out.avg_rank[b]; });
  order.resize(std::min(top_n, L));
  out.top_layers = std::move(order);
  return out;
}

// ---------------------------------------------------------------------------
// Hidden-state records

struct HiddenStateRecord {
  std::int64_t response_id = 0;
  /// Transformer block index, 1..L (hidden slot; slot 0 is the embeddings).
  std::size_t layer = 0;
  int halu_label = 0;
  std::vector<double> vector;
};

inline json to_json(const HiddenStateRecord& r) {
  return json{{"response_id", r.response_id}, {"layer", r.layer}, {"halu_label", r.halu_label}, {"vector", r.vector}};
}

inline HiddenStateRecord hidden_record_from_json(const json& j) {
  HiddenStateRecord r;
  r.response_id = j.at("response_id").get<std::int64_t>();
  r.layer = j.at("layer").get<std::size_t>();
  r.halu_label = j.at("halu_label").get<int>();
  if (r.halu_label != 0 && r.halu_label != 1) throw Error("halu_label must be 0 or 1");
  r.vector = j.at("vector").get<std::vector<double>>();
  for (double x : r.vector) {
    if (!std::isfinite(x)) throw Error("hidden-state vector contains a non-finite value");
  }
  return r;
}

enum class HiddenPooling {
  /// Mean over every generated token.
  AllTokens,
  /// Mean over the tokens labelled 1 (hallucinated responses only).
  HallucinatedTokens,
};

/// Hallucinated responses (label 1) yield one record per top layer of the
/// ranking; non-hallucinated responses (label 0) one record per block 1..L.
/// Records are sorted by layer.
inline std::vector<HiddenStateRecord> extract_hidden_vectors(const ActivationDump& dump, const LayerRanking* ranking,
                                                             int halu_label,
                                                             HiddenPooling pooling = HiddenPooling::AllTokens,
                                                             const harness::TokenLabelSequence* labels = nullptr) {
  if (halu_label != 0 && halu_label != 1) throw Error("halu_label must be 0 or 1");
  if (dump.n_tokens() == 0) throw Error("response " + std::to_string(dump.response_id) + ": dump has no tokens");
  std::vector<std::size_t> slots;
  if (halu_label == 1) {
    if (!ranking) throw Error("response " + std::to_string(dump.response_id) + ": hallucinated response needs a ranking");
    for (std::size_t l : ranking->top_layers) {
      if (l >= dump.meta.n_layers) throw Error("ranking layer out of range for dump");
      slots.push_back(l + 1);
    }
    std::sort(slots.begin(), slots.end());
  } else {
    for (std::size_t l = 1; l <= dump.meta.n_layers; ++l) slots.push_back(l);
  }

  std::vector<std::size_t> tokens;
  if (pooling == HiddenPooling::HallucinatedTokens && halu_label == 1) {
    if (!labels) throw Error("hallucinated-token pooling needs token labels");
    for (std::size_t t = 0; t < dump.n_tokens() && t < labels->labels.size(); ++t) {
      if (labels->labels[t] == 1) tokens.push_back(t);
    }
    if (tokens.empty()) throw Error("response " + std::to_string(dump.response_id) + ": no hallucinated tokens to pool");
  } else {
    tokens.resize(dump.n_tokens());
    std::iota(tokens.begin(), tokens.end(), std::size_t{0});
  }

  const std::size_t D = dump.meta.hidden_size;
  std::vector<HiddenStateRecord> out;
  out.reserve(slots.size());
  for (std::size_t slot : slots) {
    HiddenStateRecord rec;
    rec.response_id = dump.response_id;
    rec.layer = slot;
    rec.halu_label = halu_label;
    rec.vector.assign(D, 0.0);
    for (std::size_t t : tokens) {
      const auto row = dump.hidden_row(t, slot);
      for (std::size_t d = 0; d < D; ++d) rec.vector[d] += row[d];
    }
    if (tokens.size() > 1) {
      for (double& x : rec.vector) x /= static_cast<double>(tokens.size());
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace falsecite::activation
