#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "maskcl/memory.hpp"
#include "maskcl/structure.hpp"
#include "test_support.hpp"

using namespace maskcl;
using namespace maskcl::testing;

namespace {

ClusterState<double> with_neighbors(std::vector<double> sims) {
  ClusterState<double> s;
  s.neighbor_sets.resize(1);
  for (std::size_t j = 0; j < sims.size(); ++j) s.neighbor_sets[0].push_back({static_cast<int>(j) + 1, sims[j]});
  return s;
}

void check_consistent(const ClusterState<double>& s) {
  for (int l = 0; l < s.num_clusters(); ++l) {
    CHECK_FALSE(s.clusters[l].empty());
    CHECK(std::is_sorted(s.clusters[l].begin(), s.clusters[l].end()));
    for (int id : s.clusters[l]) CHECK(s.labels[id] == l);
  }
  for (std::size_t i = 0; i < s.labels.size(); ++i)
    if (s.labels[i] != kOutlier) CHECK(s.labels[i] < s.num_clusters());
}

}  // namespace

TEST_CASE("density clustering separates two far blobs") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> noise(0.0, 0.01);
  RowMatrixXd x(20, 3);
  for (int i = 0; i < 20; ++i) {
    const Eigen::Vector3d c = i % 2 == 0 ? Eigen::Vector3d(1, 0, 0) : Eigen::Vector3d(0, 1, 0);
    x.row(i) = (c + Eigen::Vector3d(noise(rng), noise(rng), noise(rng))).normalized().transpose();
  }
  const ClusterState<double> s = cluster_instances(x, ClusteringConfig{});
  CHECK(s.num_clusters() == 2);
  CHECK(s.num_outliers() == 0);
  for (int i = 0; i < 20; ++i) CHECK((s.labels[i] == s.labels[0]) == (i % 2 == 0));
  check_consistent(s);
}

TEST_CASE("density clustering of identical points is one cluster") {
  RowMatrixXd x = RowMatrixXd::Zero(6, 2);
  x.col(0).setOnes();
  const ClusterState<double> s = cluster_instances(x, ClusteringConfig{});
  CHECK(s.num_clusters() == 1);
  CHECK(s.num_outliers() == 0);
}

TEST_CASE("density clustering marks isolated points as outliers and fails when too few remain") {
  std::mt19937_64 rng(4);
  const RowMatrixXd x = random_unit_rows(5, 64, rng);
  ClusteringConfig cfg;
  cfg.eps = 0.1;
  CHECK_THROWS_AS(cluster_instances(x, cfg), ClusteringError);
}

TEST_CASE("k-means with m = N gives singletons, and reruns are identical") {
  std::mt19937_64 rng(6);
  const RowMatrixXd x = random_unit_rows(9, 4, rng);
  ClusteringConfig cfg;
  cfg.method = ClusterMethod::kmeans;
  cfg.n_clusters = 9;
  const ClusterState<double> s = cluster_instances(x, cfg);
  CHECK(s.num_clusters() == 9);
  for (const auto& c : s.clusters) CHECK(c.size() == 1);
  check_consistent(s);

  cfg.n_clusters = 3;
  const ClusterState<double> a = cluster_instances(x, cfg), b = cluster_instances(x, cfg);
  CHECK(a.labels == b.labels);
  CHECK(a.num_outliers() == 0);
}

TEST_CASE("property: clustering output is a consistent partition") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const RowMatrixXd x = random_unit_rows(10 + trial, 3, rng);
    ClusteringConfig cfg;
    cfg.method = trial % 2 ? ClusterMethod::kmeans : ClusterMethod::density;
    cfg.n_clusters = 2 + trial % 4;
    cfg.eps = 0.6;
    cfg.min_samples = 2;
    cfg.seed = static_cast<std::uint64_t>(trial);
    try {
      check_consistent(cluster_instances(x, cfg));
    } catch (const ClusteringError&) {
      CHECK(cfg.method == ClusterMethod::density);
    }
  }
}

TEST_CASE("fused centers are bank means") {
  FeatureBank<double> bank;
  std::mt19937_64 rng(2);
  bank.entries = random_unit_rows(12, 5, rng);
  ClusterState<double> s;
  s.clusters = {{0, 3, 7}, {1}, {2, 4, 5, 6, 8, 9, 10, 11}};
  const RowMatrixXd u = compute_fused_centers(s, bank);
  CHECK(u.row(1) == bank.entries.row(1));
  CHECK(u.row(0).isApprox((bank.entries.row(0) + bank.entries.row(3) + bank.entries.row(7)) / 3.0));
  s.clusters.push_back({});
  CHECK_THROWS_AS(compute_fused_centers(s, bank), InvariantError);
}

TEST_CASE("cluster_similarity examples") {
  CHECK(cluster_similarity<double>(Eigen::Vector2d(3, 4), Eigen::Vector2d(3, 4)) == doctest::Approx(1.0));
  CHECK(cluster_similarity<double>(Eigen::Vector2d(1, 0), Eigen::Vector2d(0, 1)) == doctest::Approx(0.0));
  CHECK(cluster_similarity<double>(Eigen::Vector2d(1, 1), Eigen::Vector2d(1, 0)) ==
        doctest::Approx(0.7071).epsilon(1e-4));
  CHECK_THROWS_AS(cluster_similarity<double>(Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 0)), NumericError);
}

TEST_CASE("neighbour sets") {
  RowMatrixXd u(3, 2);
  u << 1, 0, 0, 1, std::sqrt(0.5), std::sqrt(0.5);
  SUBCASE("top-1") {
    const auto a = build_neighbor_sets(u, 1);
    REQUIRE(a[0].size() == 1);
    CHECK(a[0][0].cluster == 2);
    CHECK(a[0][0].similarity == doctest::Approx(0.7071).epsilon(1e-4));
  }
  SUBCASE("saturated") {
    for (const auto& set : build_neighbor_sets(u, 5)) CHECK(set.size() == 2);
  }
  SUBCASE("k = 0") {
    for (const auto& set : build_neighbor_sets(u, 0)) CHECK(set.empty());
  }
  SUBCASE("ties go to the lower index") {
    RowMatrixXd t(3, 2);
    t << 1, 0, 0, 1, 0, 1;
    const auto a = build_neighbor_sets(t, 1);
    CHECK(a[0][0].cluster == 1);
  }
}

TEST_CASE("property: neighbour lists exclude self, are sorted and permute with the centers") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const int m = 2 + trial % 8, k = trial % 5;
    const RowMatrixXd u = random_unit_rows(m, 4, rng);
    const auto a = build_neighbor_sets(u, k);
    std::vector<int> perm(m);
    for (int i = 0; i < m; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    RowMatrixXd up(m, 4);
    for (int i = 0; i < m; ++i) up.row(i) = u.row(perm[i]);
    const auto ap = build_neighbor_sets(up, k);
    for (int l = 0; l < m; ++l) {
      CHECK(a[l].size() == static_cast<std::size_t>(std::min(k, m - 1)));
      for (std::size_t j = 0; j < a[l].size(); ++j) {
        CHECK(a[l][j].cluster != l);
        if (j) CHECK(a[l][j - 1].similarity >= a[l][j].similarity);
      }
      // Random centers have no ties, so the permuted lists map back exactly.
      for (std::size_t j = 0; j < ap[l].size(); ++j) CHECK(perm[ap[l][j].cluster] == a[perm[l]][j].cluster);
    }
  }
}

TEST_CASE("curriculum schedule") {
  for (auto [T, K] : {std::pair{60, 10}, {60, 3}, {60, 5}, {10, 10}}) {
    CAPTURE(T);
    CAPTURE(K);
    int prev = 0;
    for (int t = 1; t <= T; ++t) {
      const int k = curriculum_k(t, T, K);
      CHECK(k >= prev);
      CHECK(k >= 1);
      CHECK(k == std::max(1, static_cast<int>(std::lround(static_cast<double>(t) * K / T))));
      prev = k;
    }
    CHECK(curriculum_k(T, T, K) == K);
  }
  CHECK(curriculum_k(1, 60, 10) == 1);
  for (int t = 1; t <= 10; ++t) CHECK(curriculum_k(t, 10, 10) == t);
  CHECK_THROWS_AS(curriculum_k(1, 0, 10), ConfigError);
  CHECK_THROWS_AS(curriculum_k(0, 10, 10), ConfigError);
}

TEST_CASE("Bernoulli neighbour draws") {
  std::mt19937_64 rng(99);
  SUBCASE("certain and impossible trials") {
    const ClusterState<double> s = with_neighbors({1.0, 0.0, -0.4});
    for (int i = 0; i < 200; ++i) {
      const auto d = sample_neighbors(s, 0, rng);
      REQUIRE(d.drawn.size() == 1);
      CHECK(d.drawn[0].cluster == 1);
      CHECK(d.drawn[0].similarity == 1.0);
    }
  }
  SUBCASE("inclusion frequency") {
    const ClusterState<double> s = with_neighbors({0.7});
    int hits = 0;
    for (int i = 0; i < 10000; ++i) {
      const auto d = sample_neighbors(s, 0, rng);
      if (!d.drawn.empty()) {
        ++hits;
        CHECK(d.drawn[0].similarity == 0.7);
      }
    }
    CHECK(std::abs(hits / 10000.0 - 0.7) <= 0.02);
  }
  SUBCASE("unweighted keeps every neighbour at weight 1") {
    const ClusterState<double> s = with_neighbors({0.2, -0.3});
    const auto d = sample_neighbors(s, 0, rng, false);
    REQUIRE(d.drawn.size() == 2);
    CHECK(d.drawn[1].similarity == 1.0);
  }
  SUBCASE("seeded draws repeat") {
    const ClusterState<double> s = with_neighbors({0.5, 0.5, 0.5, 0.5});
    std::mt19937_64 a(1), b(1);
    for (int i = 0; i < 20; ++i) {
      const auto da = sample_neighbors(s, 0, a), db = sample_neighbors(s, 0, b);
      CHECK(da.drawn.size() == db.drawn.size());
    }
  }
  CHECK_THROWS_AS(sample_neighbors(with_neighbors({0.5}), 1, rng), ShapeError);
}
