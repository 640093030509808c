#pragma once

// PCA reduction of hidden-state records, k-means clustering, hallucination
// purity scoring and selection of k.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <fmt/format.h>

#include "falsecite/activation.hpp"
#include "falsecite/error.hpp"
#include "falsecite/io.hpp"
#include "falsecite/parallel.hpp"
#include "falsecite/rng.hpp"

namespace falsecite::cluster {

using activation::HiddenStateRecord;

inline constexpr std::size_t kDefaultComponents = 100;

// ---------------------------------------------------------------------------
// PCA

struct PcaModel {
  Eigen::VectorXd mean;
  /// n_components x D, orthonormal rows, in decreasing variance order.
  Eigen::MatrixXd components;
  /// Population variance (divisor N) along each component.
  Eigen::VectorXd explained_variance;

  std::size_t n_components() const noexcept { return static_cast<std::size_t>(components.rows()); }
  std::size_t dimension() const noexcept { return static_cast<std::size_t>(components.cols()); }
};

inline Eigen::MatrixXd to_matrix(std::span<const HiddenStateRecord> records) {
  if (records.empty()) return {};
  const std::size_t D = records.front().vector.size();
  Eigen::MatrixXd X(static_cast<Eigen::Index>(records.size()), static_cast<Eigen::Index>(D));
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].vector.size() != D) throw Error("hidden-state records have inconsistent dimensions");
    X.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(records[i].vector.data(),
                                                                               static_cast<Eigen::Index>(D));
  }
  return X;
}

namespace detail {

/// Flips each row so its largest-magnitude entry (lowest index on ties) is positive.
inline void fix_signs(Eigen::MatrixXd& rows) {
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < rows.cols(); ++c) {
      if (std::abs(rows(r, c)) > std::abs(rows(r, best))) best = c;
    }
    if (rows(r, best) < 0.0) rows.row(r) *= -1.0;
  }
}

}  // namespace detail

/// Principal components of the rows of X. Uses the D x D covariance
/// eigendecomposition when D <= N, otherwise a thin SVD of the centred data.
inline PcaModel pca_fit(const Eigen::MatrixXd& X, std::size_t n_components = kDefaultComponents) {
  const auto N = static_cast<std::size_t>(X.rows());
  const auto D = static_cast<std::size_t>(X.cols());
  if (n_components == 0) throw Error("pca_fit: n_components must be positive");
  if (N < n_components) {
    throw Error("pca_fit: need at least " + std::to_string(n_components) + " records, got " + std::to_string(N));
  }
  if (D < n_components) {
    throw Error("pca_fit: dimension " + std::to_string(D) + " is below n_components " + std::to_string(n_components));
  }
  const auto k = static_cast<Eigen::Index>(n_components);
  PcaModel m;
  m.mean = X.colwise().mean().transpose();
  const Eigen::MatrixXd centred = X.rowwise() - m.mean.transpose();

  if (D <= N) {
    const Eigen::MatrixXd cov = (centred.transpose() * centred) / static_cast<double>(N);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) throw Error("pca_fit: eigendecomposition failed");
    // Eigen sorts ascending.
    const Eigen::Index d = static_cast<Eigen::Index>(D);
    m.components.resize(k, d);
    m.explained_variance.resize(k);
    for (Eigen::Index i = 0; i < k; ++i) {
      m.components.row(i) = eig.eigenvectors().col(d - 1 - i).transpose();
      m.explained_variance(i) = std::max(0.0, eig.eigenvalues()(d - 1 - i));
    }
  } else {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(centred, Eigen::ComputeThinV);
    m.components = svd.matrixV().leftCols(k).transpose();
    m.explained_variance = svd.singularValues().head(k).array().square() / static_cast<double>(N);
  }
  detail::fix_signs(m.components);
  return m;
}

inline PcaModel pca_fit(std::span<const HiddenStateRecord> records, std::size_t n_components = kDefaultComponents) {
  return pca_fit(to_matrix(records), n_components);
}

inline Eigen::VectorXd pca_transform(const PcaModel& m, std::span<const double> x) {
  if (x.size() != m.dimension()) {
    throw Error("pca_transform: dimension mismatch (" + std::to_string(x.size()) + " vs " +
                std::to_string(m.dimension()) + ")");
  }
  const Eigen::Map<const Eigen::VectorXd> v(x.data(), static_cast<Eigen::Index>(x.size()));
  return m.components * (v - m.mean);
}

/// Row-wise transform of a batch (N x D -> N x n_components).
inline Eigen::MatrixXd pca_transform(const PcaModel& m, const Eigen::MatrixXd& X) {
  if (static_cast<std::size_t>(X.cols()) != m.dimension()) throw Error("pca_transform: dimension mismatch");
  return (X.rowwise() - m.mean.transpose()) * m.components.transpose();
}

// ---------------------------------------------------------------------------
// k-means

inline constexpr int kMaxLloydIterations = 300;

struct KMeansResult {
  std::vector<int> assignments;
  Eigen::MatrixXd centroids;
  /// Inertia after the initial assignment and after every Lloyd iteration.
  std::vector<double> inertia_history;
  int iterations = 0;
  bool converged = false;
};

namespace detail {

inline double inertia_of(const Eigen::MatrixXd& points, const Eigen::MatrixXd& centroids, const std::vector<int>& a) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) s += (points.row(i) - centroids.row(a[static_cast<std::size_t>(i)])).squaredNorm();
  return s;
}

/// Nearest centroid per point, ties to the lower cluster index.
inline std::vector<int> assign(const Eigen::MatrixXd& points, const Eigen::MatrixXd& centroids) {
  std::vector<int> a(static_cast<std::size_t>(points.rows()));
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    int best = 0;
    double best_d = (points.row(i) - centroids.row(0)).squaredNorm();
    for (Eigen::Index c = 1; c < centroids.rows(); ++c) {
      const double d = (points.row(i) - centroids.row(c)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(c);
      }
    }
    a[static_cast<std::size_t>(i)] = best;
  }
  return a;
}

}  // namespace detail

/// Lloyd's algorithm from farthest-point seeding: the first centre is a
/// seeded uniform draw, each further centre the point farthest from its
/// nearest chosen centre. Stops when assignments stabilise or after 300
/// iterations. An empty cluster is re-seeded at the point farthest from its
/// own centroid.
inline KMeansResult kmeans(const Eigen::MatrixXd& points, std::size_t k, std::uint64_t seed,
                           int max_iterations = kMaxLloydIterations) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (k < 1 || k > n) throw Error("kmeans: k=" + std::to_string(k) + " out of range 1.." + std::to_string(n));
  const auto K = static_cast<Eigen::Index>(k);

  KMeansResult res;
  res.centroids.resize(K, points.cols());
  SeededRng rng(seed);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::size_t chosen = rng.index(n);
  for (Eigen::Index c = 0; c < K; ++c) {
    res.centroids.row(c) = points.row(static_cast<Eigen::Index>(chosen));
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], (points.row(static_cast<Eigen::Index>(i)) - res.centroids.row(c)).squaredNorm());
    }
    chosen = static_cast<std::size_t>(std::max_element(nearest.begin(), nearest.end()) - nearest.begin());
  }

  res.assignments = detail::assign(points, res.centroids);
  res.inertia_history.push_back(detail::inertia_of(points, res.centroids, res.assignments));

  for (int it = 0; it < max_iterations; ++it) {
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(K, points.cols());
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums.row(res.assignments[i]) += points.row(static_cast<Eigen::Index>(i));
      ++counts[static_cast<std::size_t>(res.assignments[i])];
    }
    std::vector<Eigen::Index> empty;
    for (Eigen::Index c = 0; c < K; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        res.centroids.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
      } else {
        empty.push_back(c);
      }
    }
    if (!empty.empty()) {
      std::vector<std::pair<double, std::size_t>> far(n);
      for (std::size_t i = 0; i < n; ++i) {
        far[i] = {(points.row(static_cast<Eigen::Index>(i)) - res.centroids.row(res.assignments[i])).squaredNorm(), i};
      }
      std::stable_sort(far.begin(), far.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
      for (std::size_t e = 0; e < empty.size() && e < n && far[e].first > 0.0; ++e) {
        res.centroids.row(empty[e]) = points.row(static_cast<Eigen::Index>(far[e].second));
      }
    }
    auto next = detail::assign(points, res.centroids);
    res.inertia_history.push_back(detail::inertia_of(points, res.centroids, next));
    res.iterations = it + 1;
    const bool stable = next == res.assignments && empty.empty();
    res.assignments = std::move(next);
    if (stable) {
      res.converged = true;
      break;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Purity scoring

struct ClusterScore {
  std::size_t size = 0;
  double halu_rate_pct = 0.0;
  /// min(rate, 100 - rate): 0 for a pure cluster, 50 at worst.
  double score = 0.0;
  bool empty = false;
};

struct ClusterScores {
  std::vector<ClusterScore> clusters;
  /// Unweighted mean over non-empty clusters.
  double avg_score = 0.0;
};

inline double purity_score(double halu_rate_pct) { return std::min(halu_rate_pct, 100.0 - halu_rate_pct); }

inline ClusterScores score_clusters(std::span<const int> assignments, std::span<const int> halu_labels, std::size_t k) {
  if (assignments.size() != halu_labels.size()) throw Error("score_clusters: assignments and labels differ in length");
  std::vector<std::size_t> size(k, 0);
  std::vector<std::size_t> positive(k, 0);
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    const int c = assignments[i];
    if (c < 0 || static_cast<std::size_t>(c) >= k) throw Error("score_clusters: cluster id out of range");
    if (halu_labels[i] != 0 && halu_labels[i] != 1) throw Error("score_clusters: labels must be 0 or 1");
    ++size[static_cast<std::size_t>(c)];
    positive[static_cast<std::size_t>(c)] += static_cast<std::size_t>(halu_labels[i]);
  }
  ClusterScores out;
  out.clusters.resize(k);
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < k; ++c) {
    auto& s = out.clusters[c];
    s.size = size[c];
    if (s.size == 0) {
      s.empty = true;
      continue;
    }
    s.halu_rate_pct = 100.0 * static_cast<double>(positive[c]) / static_cast<double>(s.size);
    s.score = purity_score(s.halu_rate_pct);
    total += s.score;
    ++used;
  }
  if (used == 0) throw Error("score_clusters: no non-empty clusters");
  out.avg_score = total / static_cast<double>(used);
  return out;
}

// ---------------------------------------------------------------------------
// Selection of k

struct ClusterReport {
  std::size_t k = 0;
  std::vector<int> assignments;
  Eigen::MatrixXd centroids;
  std::vector<ClusterScore> per_cluster;
  double avg_score = 0.0;
  int iterations = 0;
  bool converged = false;
};

struct KScan {
  std::size_t k = 0;
  double avg_score = 0.0;
};

struct Selection {
  ClusterReport best;
  std::vector<KScan> scan;
};

/// Clusters for every k and keeps the one with the lowest average purity
/// score; ties go to the smaller k.
inline Selection select_k(const Eigen::MatrixXd& points, std::span<const int> labels, std::vector<std::size_t> k_values,
                          std::uint64_t seed, std::size_t max_concurrency = 1) {
  if (k_values.empty()) throw Error("select_k: empty k range");
  std::sort(k_values.begin(), k_values.end());
  k_values.erase(std::unique(k_values.begin(), k_values.end()), k_values.end());
  std::vector<ClusterReport> reports(k_values.size());
  parallel_for(k_values.size(), max_concurrency, [&](std::size_t i) {
    const std::size_t k = k_values[i];
    auto km = kmeans(points, k, seed);
    auto sc = score_clusters(km.assignments, labels, k);
    ClusterReport& r = reports[i];
    r.k = k;
    r.assignments = std::move(km.assignments);
    r.centroids = std::move(km.centroids);
    r.per_cluster = std::move(sc.clusters);
    r.avg_score = sc.avg_score;
    r.iterations = km.iterations;
    r.converged = km.converged;
  });
  Selection sel;
  std::size_t best = 0;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    sel.scan.push_back({reports[i].k, reports[i].avg_score});
    if (reports[i].avg_score < reports[best].avg_score) best = i;
  }
  sel.best = std::move(reports[best]);
  return sel;
}

// ---------------------------------------------------------------------------
// Plot data

struct ProjectionRow {
  std::int64_t response_id = 0;
  std::size_t layer = 0;
  int halu_label = 0;
  int cluster_id = 0;
  double x = 0.0;
  double y = 0.0;
};

/// (x, y) = first two principal coordinates of each record.
inline std::vector<ProjectionRow> project_2d(const PcaModel& model, std::span<const HiddenStateRecord> records,
                                             std::span<const int> assignments) {
  if (records.size() != assignments.size()) throw Error("project_2d: records and assignments differ in length");
  if (model.n_components() < 2) throw Error("project_2d: need at least 2 principal components");
  std::vector<ProjectionRow> rows;
  rows.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const Eigen::Map<const Eigen::VectorXd> v(r.vector.data(), static_cast<Eigen::Index>(r.vector.size()));
    const Eigen::VectorXd c = v - model.mean;
    rows.push_back({r.response_id, r.layer, r.halu_label, assignments[i], model.components.row(0).dot(c),
                    model.components.row(1).dot(c)});
  }
  return rows;
}

inline void write_projection_csv(std::ostream& out, std::span<const ProjectionRow> rows) {
  out << "response_id,layer,halu_label,cluster_id,x,y\n";
  for (const auto& r : rows) {
    out << fmt::format("{},{},{},{},{:.9g},{:.9g}\n", r.response_id, r.layer, r.halu_label, r.cluster_id,
                       r.x == 0.0 ? 0.0 : r.x, r.y == 0.0 ? 0.0 : r.y);
  }
}

inline void emit_projection(const fs::path& path, std::span<const ProjectionRow> rows) {
  AtomicFile f(path);
  write_projection_csv(f.stream(), rows);
  f.commit();
}

}  // namespace falsecite::cluster
