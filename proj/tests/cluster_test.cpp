#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "falsecite/cluster.hpp"
#include "support.hpp"

namespace fc = falsecite;
using namespace fc::cluster;
using fc::activation::HiddenStateRecord;

namespace {

Eigen::MatrixXd low_rank_data(std::size_t n, std::size_t d, std::size_t rank, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd basis(static_cast<Eigen::Index>(rank), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < basis.size(); ++i) basis.data()[i] = g(rng);
  Eigen::MatrixXd coeff(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(rank));
  for (Eigen::Index i = 0; i < coeff.size(); ++i) coeff.data()[i] = g(rng) * 3.0;
  Eigen::RowVectorXd offset(static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < offset.size(); ++i) offset(i) = g(rng) * 10.0;
  return (coeff * basis).rowwise() + offset;
}

double reconstruction_error(const PcaModel& m, const Eigen::MatrixXd& X) {
  const Eigen::MatrixXd z = pca_transform(m, X);
  const Eigen::MatrixXd back = (z * m.components).rowwise() + m.mean.transpose();
  return (back - X).cwiseAbs().maxCoeff();
}

/// Two well-separated Gaussian blobs; returns points and the blob of each.
std::pair<Eigen::MatrixXd, std::vector<int>> two_blobs(std::size_t per_blob, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 0.3);
  Eigen::MatrixXd X(static_cast<Eigen::Index>(2 * per_blob), 3);
  std::vector<int> blob;
  for (std::size_t i = 0; i < 2 * per_blob; ++i) {
    const int b = i < per_blob ? 0 : 1;
    const double c = b == 0 ? -10.0 : 10.0;
    X.row(static_cast<Eigen::Index>(i)) << c + g(rng), g(rng), g(rng);
    blob.push_back(b);
  }
  return {X, blob};
}

/// Expected purity score of a cluster of size m whose labels are fair coin flips.
double expected_score(std::size_t m) {
  double e = 0.0;
  double log_half_m = static_cast<double>(m) * std::log(0.5);
  for (std::size_t x = 0; x <= m; ++x) {
    const double log_p = std::lgamma(static_cast<double>(m) + 1) - std::lgamma(static_cast<double>(x) + 1) -
                         std::lgamma(static_cast<double>(m - x) + 1) + log_half_m;
    e += std::exp(log_p) * purity_score(100.0 * static_cast<double>(x) / static_cast<double>(m));
  }
  return e;
}

}  // namespace

TEST(Pca, AxisAlignedToyData) {
  // Population covariance diag(0.5, 2, 0).
  Eigen::MatrixXd X(4, 3);
  X << 1, 0, 0, -1, 0, 0, 0, 2, 0, 0, -2, 0;
  const auto m = pca_fit(X, 2);
  EXPECT_NEAR(m.explained_variance(0), 2.0, 1e-12);
  EXPECT_NEAR(m.explained_variance(1), 0.5, 1e-12);
  EXPECT_NEAR(m.components(0, 1), 1.0, 1e-12);
  EXPECT_NEAR(m.components(1, 0), 1.0, 1e-12);
  EXPECT_NEAR(m.components.row(0).norm(), 1.0, 1e-12);
  EXPECT_TRUE(m.mean.isZero(1e-15));
}

TEST(Pca, RecoversLowRankSubspaceBothBranches) {
  // D <= N uses the covariance path, D > N the SVD path.
  for (const auto& [n, d] : {std::pair<std::size_t, std::size_t>{60, 20}, {12, 40}}) {
    const auto X = low_rank_data(n, d, 3, n + d);
    const auto m = pca_fit(X, 3);
    EXPECT_LT(reconstruction_error(m, X), 1e-6) << n << "x" << d;
    const Eigen::MatrixXd gram = m.components * m.components.transpose();
    EXPECT_TRUE(gram.isIdentity(1e-6));
    for (Eigen::Index i = 1; i < 3; ++i) EXPECT_GE(m.explained_variance(i - 1), m.explained_variance(i));
  }
}

TEST(Pca, BranchesAgreeOnVariances) {
  const auto X = low_rank_data(30, 30, 5, 2);
  const auto a = pca_fit(X, 5);
  const Eigen::MatrixXd wide = X.leftCols(30);
  EXPECT_TRUE(a.explained_variance.allFinite());
  // Appending zero columns forces D > N without changing the spectrum.
  Eigen::MatrixXd padded = Eigen::MatrixXd::Zero(30, 40);
  padded.leftCols(30) = wide;
  const auto b = pca_fit(padded, 5);
  for (Eigen::Index i = 0; i < 5; ++i) {
    EXPECT_NEAR(a.explained_variance(i), b.explained_variance(i), 1e-8 * a.explained_variance(0));
    EXPECT_NEAR(std::abs(a.components.row(i).dot(b.components.row(i).leftCols(30))), 1.0, 1e-6);
  }
}

TEST(Pca, MeanMapsToOrigin) {
  const auto X = low_rank_data(25, 8, 8, 3);
  const auto m = pca_fit(X, 4);
  std::vector<double> mean(m.mean.data(), m.mean.data() + m.mean.size());
  EXPECT_TRUE(pca_transform(m, mean).isZero(1e-9));
}

TEST(Pca, RejectsTooFewRecordsOrDimensions) {
  const auto X = low_rank_data(5, 8, 2, 4);
  EXPECT_THROW(pca_fit(X, 6), fc::Error);
  EXPECT_THROW(pca_fit(X, 9), fc::Error);
  EXPECT_THROW(pca_fit(X, 0), fc::Error);
  const auto m = pca_fit(X, 2);
  EXPECT_THROW(pca_transform(m, Eigen::MatrixXd::Zero(2, 3)), fc::Error);
}

TEST(Pca, RecordsOverloadAndDimensionCheck) {
  std::vector<HiddenStateRecord> recs{{1, 1, 0, {1, 2}}, {2, 1, 1, {3, 5}}, {3, 1, 0, {0, 0}}};
  EXPECT_EQ(to_matrix(recs)(1, 1), 5.0);
  EXPECT_EQ(pca_fit(recs, 2).dimension(), 2u);
  recs.push_back({4, 1, 0, {1}});
  EXPECT_THROW(to_matrix(recs), fc::Error);
}

TEST(KMeans, SingleClusterIsTheMean) {
  const auto X = low_rank_data(40, 4, 4, 5);
  const auto r = kmeans(X, 1, 0);
  EXPECT_TRUE(r.converged);
  EXPECT_TRUE(r.centroids.row(0).isApprox(X.colwise().mean(), 1e-12));
  for (int a : r.assignments) EXPECT_EQ(a, 0);
}

TEST(KMeans, SeparatesBlobs) {
  const auto [X, blob] = two_blobs(30, 6);
  const auto r = kmeans(X, 2, 9);
  EXPECT_TRUE(r.converged);
  for (std::size_t i = 0; i < blob.size(); ++i) EXPECT_EQ(r.assignments[i] == r.assignments[0], blob[i] == blob[0]);
}

TEST(KMeans, InertiaNeverIncreases) {
  const auto X = low_rank_data(200, 5, 5, 7);
  for (std::size_t k : {2u, 5u, 9u}) {
    const auto r = kmeans(X, k, k);
    for (std::size_t i = 1; i < r.inertia_history.size(); ++i) {
      EXPECT_LE(r.inertia_history[i], r.inertia_history[i - 1] * (1 + 1e-12));
    }
  }
}

TEST(KMeans, SeedDeterministicAndRangeChecked) {
  const auto X = low_rank_data(50, 3, 3, 8);
  EXPECT_EQ(kmeans(X, 4, 1).assignments, kmeans(X, 4, 1).assignments);
  EXPECT_THROW(kmeans(X, 0, 1), fc::Error);
  EXPECT_THROW(kmeans(X, 51, 1), fc::Error);
}

TEST(KMeans, DuplicatePointsDoNotBreak) {
  Eigen::MatrixXd X = Eigen::MatrixXd::Ones(6, 2);
  const auto r = kmeans(X, 3, 2);
  EXPECT_TRUE(r.centroids.allFinite());
}

TEST(Purity, HandComputedScores) {
  // 5 records with 1 hallucinated (20%) and 20 records with 19 hallucinated (95%).
  std::vector<int> assign;
  std::vector<int> labels;
  for (int i = 0; i < 5; ++i) {
    assign.push_back(0);
    labels.push_back(i == 0);
  }
  for (int i = 0; i < 20; ++i) {
    assign.push_back(1);
    labels.push_back(i != 0);
  }
  const auto s = score_clusters(assign, labels, 2);
  EXPECT_NEAR(s.clusters[0].score, 20.0, 1e-12);
  EXPECT_NEAR(s.clusters[1].score, 5.0, 1e-12);
  EXPECT_NEAR(s.avg_score, 12.5, 1e-12);
  EXPECT_DOUBLE_EQ(purity_score(50.0), 50.0);
  EXPECT_DOUBLE_EQ(purity_score(0.0), 0.0);
  EXPECT_DOUBLE_EQ(purity_score(100.0), 0.0);
}

TEST(Purity, EmptyClustersAreSkippedInTheAverage) {
  const std::vector<int> assign{0, 0, 2, 2};
  const std::vector<int> labels{1, 1, 0, 1};
  const auto s = score_clusters(assign, labels, 3);
  EXPECT_TRUE(s.clusters[1].empty);
  EXPECT_NEAR(s.avg_score, 25.0, 1e-12);
  EXPECT_THROW(score_clusters(std::vector<int>{3}, std::vector<int>{1}, 3), fc::Error);
  EXPECT_THROW(score_clusters(std::vector<int>{0}, std::vector<int>{2}, 1), fc::Error);
}

TEST(SelectK, PerfectSeparationTiesGoToSmallestK) {
  const auto [X, blob] = two_blobs(25, 10);
  const auto sel = select_k(X, blob, {2, 3, 4, 5, 6}, 1);
  EXPECT_EQ(sel.best.k, 2u);
  EXPECT_DOUBLE_EQ(sel.best.avg_score, 0.0);
  ASSERT_EQ(sel.scan.size(), 5u);
  for (const auto& s : sel.scan) EXPECT_DOUBLE_EQ(s.avg_score, 0.0);
}

TEST(SelectK, ConcurrencyDoesNotChangeTheResult) {
  const auto X = low_rank_data(80, 4, 4, 12);
  std::vector<int> labels(80);
  for (std::size_t i = 0; i < 80; ++i) labels[i] = static_cast<int>((i * 7) % 3 == 0);
  std::vector<std::size_t> ks{2, 3, 4, 5, 6, 7, 8};
  const auto a = select_k(X, labels, ks, 3, 1);
  const auto b = select_k(X, labels, ks, 3, 4);
  EXPECT_EQ(a.best.k, b.best.k);
  EXPECT_EQ(a.best.assignments, b.best.assignments);
}

TEST(SelectK, UniformLabelsMatchBinomialExpectation) {
  // Cluster geometry is label-independent, so with fair-coin labels the mean
  // score of each k is the size-weighted binomial expectation. Smaller
  // clusters have lower expected scores, so larger k wins on average.
  const auto X = low_rank_data(240, 2, 2, 13);
  const std::vector<std::size_t> ks{2, 4, 8};
  std::map<std::size_t, std::vector<std::size_t>> sizes;
  for (std::size_t k : ks) {
    const auto r = kmeans(X, k, 5);
    std::vector<std::size_t> count(k, 0);
    for (int a : r.assignments) ++count[static_cast<std::size_t>(a)];
    sizes[k] = count;
  }
  std::map<std::size_t, double> oracle;
  for (std::size_t k : ks) {
    double s = 0.0;
    std::size_t used = 0;
    for (std::size_t m : sizes[k]) {
      if (m == 0) continue;
      s += expected_score(m);
      ++used;
    }
    oracle[k] = s / static_cast<double>(used);
  }
  EXPECT_GT(oracle[2], oracle[4]);
  EXPECT_GT(oracle[4], oracle[8]);

  std::mt19937_64 rng(99);
  const int trials = 300;
  std::map<std::size_t, std::vector<double>> observed;
  std::map<std::size_t, int> wins;
  for (int trial = 0; trial < trials; ++trial) {
    std::vector<int> labels(240);
    for (int& l : labels) l = static_cast<int>(rng() & 1u);
    const auto sel = select_k(X, labels, ks, 5);
    for (const auto& s : sel.scan) observed[s.k].push_back(s.avg_score);
    ++wins[sel.best.k];
  }
  for (std::size_t k : ks) {
    double mean = 0.0;
    for (double v : observed[k]) mean += v / trials;
    double var = 0.0;
    for (double v : observed[k]) var += (v - mean) * (v - mean) / (trials - 1);
    const double se = std::sqrt(var / trials);
    EXPECT_NEAR(mean, oracle[k], 4.0 * se + 1e-9) << "k=" << k;
  }
  EXPECT_GT(wins[8], wins[2]);
}

TEST(Projection, CsvRowsFollowTheFirstTwoComponents) {
  std::vector<HiddenStateRecord> recs{{1, 1, 0, {1, 0, 0}}, {1, 2, 0, {-1, 0, 0}}, {2, 1, 1, {0, 2, 0}},
                                      {2, 3, 1, {0, -2, 0}}};
  const auto m = pca_fit(recs, 2);
  const std::vector<int> assign{0, 0, 1, 1};
  const auto rows = project_2d(m, recs, assign);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_NEAR(rows[2].x, 2.0, 1e-12);
  EXPECT_NEAR(rows[0].y, 1.0, 1e-12);
  std::ostringstream out;
  write_projection_csv(out, rows);
  EXPECT_EQ(out.str(),
            "response_id,layer,halu_label,cluster_id,x,y\n"
            "1,1,0,0,0,1\n"
            "1,2,0,0,0,-1\n"
            "2,1,1,1,2,0\n"
            "2,3,1,1,-2,0\n");
  EXPECT_THROW(project_2d(m, recs, std::vector<int>{0}), fc::Error);
}

TEST(Pca, IsotropicDataHasEqualVariances) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd X(20000, 4);
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = g(rng);
  const auto m = pca_fit(X, 4);
  for (Eigen::Index i = 0; i < 4; ++i) EXPECT_NEAR(m.explained_variance(i), 1.0, 0.05);
}

TEST(Pca, TransformMatchesDirectMatrixProduct) {
  const auto X = low_rank_data(40, 12, 12, 9);
  const auto m = pca_fit(X, 5);
  const Eigen::MatrixXd z = pca_transform(m, X);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (Eigen::Index c = 0; c < 5; ++c) {
      long double s = 0;
      for (Eigen::Index j = 0; j < X.cols(); ++j) {
        s += static_cast<long double>(X(i, j) - m.mean(j)) * m.components(c, j);
      }
      EXPECT_NEAR(z(i, c), static_cast<double>(s), 1e-6);
    }
  }
  // The mean shifted along the first component lands on the first unit axis.
  std::vector<double> shifted(m.mean.data(), m.mean.data() + m.mean.size());
  for (std::size_t j = 0; j < shifted.size(); ++j) shifted[j] += m.components(0, static_cast<Eigen::Index>(j));
  const Eigen::VectorXd e = pca_transform(m, shifted);
  EXPECT_NEAR(e(0), 1.0, 1e-9);
  for (Eigen::Index c = 1; c < 5; ++c) EXPECT_NEAR(e(c), 0.0, 1e-9);
}
