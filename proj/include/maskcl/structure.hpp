#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "maskcl/error.hpp"
#include "maskcl/memory.hpp"
#include "maskcl/types.hpp"

namespace maskcl {

inline constexpr int kOutlier = -1;

template <typename Scalar>
struct Neighbor {
  int cluster = 0;
  Scalar similarity = Scalar(0);

  bool operator==(const Neighbor&) const = default;
};

template <typename Scalar>
struct ClusterState {
  std::vector<int> labels;                  // cluster index or kOutlier, one per sample
  std::vector<std::vector<int>> clusters;   // ascending sample ids per cluster
  RowMatrix<Scalar> centers;                // fused centers, one row per cluster
  std::vector<std::vector<Neighbor<Scalar>>> neighbor_sets;
  int epoch = 0;

  int num_clusters() const { return static_cast<int>(clusters.size()); }
  int num_outliers() const {
    return static_cast<int>(std::count(labels.begin(), labels.end(), kOutlier));
  }
};

template <typename Scalar>
struct NeighborDraw {
  int source_cluster = 0;
  std::vector<Neighbor<Scalar>> drawn;  // similarity field holds the weight w
};

enum class ClusterMethod { density, kmeans };

struct ClusteringConfig {
  ClusterMethod method = ClusterMethod::density;
  double eps = 0.5;
  int min_samples = 4;
  int n_clusters = 8;  // k-means only
  int max_iterations = 100;
  std::uint64_t seed = 0;

  bool operator==(const ClusteringConfig&) const = default;
};

namespace detail {

template <typename Scalar>
Matrix<Scalar> squared_distances(const RowMatrix<Scalar>& x) {
  const Eigen::Index n = x.rows();
  Matrix<Scalar> d(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d(i, i) = Scalar(0);
    for (Eigen::Index j = i + 1; j < n; ++j) d(i, j) = d(j, i) = (x.row(i) - x.row(j)).squaredNorm();
  }
  return d;
}

template <typename Scalar>
ClusterState<Scalar> state_from_labels(std::vector<int> labels, int m) {
  ClusterState<Scalar> state;
  state.clusters.assign(static_cast<std::size_t>(m), {});
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] != kOutlier) state.clusters[static_cast<std::size_t>(labels[i])].push_back(static_cast<int>(i));
  state.labels = std::move(labels);
  return state;
}

// Density clustering over the eps-ball graph. Core points have at least
// min_samples neighbours (self included); clusters are numbered in order of
// their lowest-index core point.
template <typename Scalar>
std::vector<int> density_labels(const RowMatrix<Scalar>& x, double eps, int min_samples, int& m) {
  constexpr int kUnvisited = -2;
  const Eigen::Index n = x.rows();
  const Matrix<Scalar> d2 = squared_distances(x);
  const Scalar eps2 = static_cast<Scalar>(eps * eps);
  auto ball = [&](Eigen::Index i) {
    std::vector<int> out;
    for (Eigen::Index j = 0; j < n; ++j)
      if (d2(i, j) <= eps2) out.push_back(static_cast<int>(j));
    return out;
  };
  std::vector<int> labels(static_cast<std::size_t>(n), kUnvisited);
  m = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (labels[i] != kUnvisited) continue;
    std::vector<int> seeds = ball(i);
    if (static_cast<int>(seeds.size()) < min_samples) {
      labels[i] = kOutlier;
      continue;
    }
    const int c = m++;
    labels[i] = c;
    for (std::size_t q = 0; q < seeds.size(); ++q) {
      const int j = seeds[q];
      if (labels[j] == kOutlier) labels[j] = c;
      if (labels[j] != kUnvisited) continue;
      labels[j] = c;
      std::vector<int> more = ball(j);
      if (static_cast<int>(more.size()) >= min_samples) seeds.insert(seeds.end(), more.begin(), more.end());
    }
  }
  return labels;
}

// Lloyd iterations from a seeded k-means++ start. Empty clusters are dropped
// and the survivors renumbered in ascending order.
template <typename Scalar>
std::vector<int> kmeans_labels(const RowMatrix<Scalar>& x, const ClusteringConfig& cfg, int& m) {
  const Eigen::Index n = x.rows();
  const int k = cfg.n_clusters;
  if (k < 1 || k > n) throw ConfigError("n_clusters", "must lie in [1, N]");
  std::mt19937_64 rng(cfg.seed);
  RowMatrix<Scalar> centers(k, x.cols());
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  centers.row(0) = x.row(first(rng));
  std::vector<double> nearest(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  for (int c = 1; c < k; ++c) {
    for (Eigen::Index i = 0; i < n; ++i)
      nearest[i] = std::min(nearest[i], static_cast<double>((x.row(i) - centers.row(c - 1)).squaredNorm()));
    const double total = std::accumulate(nearest.begin(), nearest.end(), 0.0);
    Eigen::Index pick = 0;
    if (total > 0.0) {
      std::discrete_distribution<Eigen::Index> weighted(nearest.begin(), nearest.end());
      pick = weighted(rng);
    } else {
      pick = first(rng);
    }
    centers.row(c) = x.row(pick);
  }

  std::vector<int> labels(static_cast<std::size_t>(n), 0);
  for (int iter = 0; iter < std::max(1, cfg.max_iterations); ++iter) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      Scalar best_d = (x.row(i) - centers.row(0)).squaredNorm();
      for (int c = 1; c < k; ++c) {
        const Scalar dc = (x.row(i) - centers.row(c)).squaredNorm();
        if (dc < best_d) {
          best_d = dc;
          best = c;
        }
      }
      changed = changed || labels[i] != best;
      labels[i] = best;
    }
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    RowMatrix<Scalar> sums = RowMatrix<Scalar>::Zero(k, x.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(labels[i]) += x.row(i);
      ++counts[labels[i]];
    }
    for (int c = 0; c < k; ++c)
      if (counts[c] > 0) centers.row(c) = sums.row(c) / static_cast<Scalar>(counts[c]);
    if (iter > 0 && !changed) break;
  }

  std::vector<int> remap(static_cast<std::size_t>(k), -1);
  m = 0;
  std::vector<int> used(static_cast<std::size_t>(k), 0);
  for (int l : labels) used[l] = 1;
  for (int c = 0; c < k; ++c)
    if (used[c]) remap[c] = m++;
  for (int& l : labels) l = remap[l];
  return labels;
}

}  // namespace detail

// Pseudo-labels from RGB features. Only the density method produces outliers.
template <typename Scalar>
ClusterState<Scalar> cluster_instances(const RowMatrix<Scalar>& features, const ClusteringConfig& cfg) {
  if (!features.allFinite()) throw NumericError("cluster_instances: non-finite features");
  int m = 0;
  std::vector<int> labels;
  if (cfg.method == ClusterMethod::density) {
    if (cfg.eps <= 0.0) throw ConfigError("eps", "must be > 0");
    if (cfg.min_samples < 1) throw ConfigError("min_samples", "must be >= 1");
    labels = detail::density_labels(features, cfg.eps, cfg.min_samples, m);
  } else {
    labels = detail::kmeans_labels(features, cfg, m);
  }
  const auto clustered =
      static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](int l) { return l != kOutlier; }));
  if (clustered < 2)
    throw ClusteringError("clustering left " + std::to_string(clustered) + " non-outlier samples (need >= 2)");
  return detail::state_from_labels<Scalar>(std::move(labels), m);
}

// Row l = mean of the bank rows over cluster l.
template <typename Scalar>
RowMatrix<Scalar> compute_fused_centers(const ClusterState<Scalar>& state, const FeatureBank<Scalar>& fused_bank) {
  return prototypes(fused_bank, state.clusters);
}

template <typename Scalar, typename DerivedA, typename DerivedB>
Scalar cluster_similarity(const Eigen::MatrixBase<DerivedA>& u_a, const Eigen::MatrixBase<DerivedB>& u_b) {
  const Scalar na = u_a.norm(), nb = u_b.norm();
  if (!(na > Scalar(0)) || !(nb > Scalar(0))) throw NumericError("cluster_similarity: zero-norm center");
  return u_a.dot(u_b) / (na * nb);
}

// Top-min(k, m-1) most similar other clusters per cluster, similarity
// descending, ties to the lower cluster index.
template <typename Scalar>
std::vector<std::vector<Neighbor<Scalar>>> build_neighbor_sets(const RowMatrix<Scalar>& centers, int k) {
  if (k < 0) throw ConfigError("k", "must be >= 0");
  const int m = static_cast<int>(centers.rows());
  Matrix<Scalar> sim(m, m);
  for (int a = 0; a < m; ++a) {
    sim(a, a) = Scalar(1);
    for (int b = a + 1; b < m; ++b)
      sim(a, b) = sim(b, a) = cluster_similarity<Scalar>(centers.row(a), centers.row(b));
  }
  const int keep = std::min(k, std::max(0, m - 1));
  std::vector<std::vector<Neighbor<Scalar>>> sets(static_cast<std::size_t>(m));
  for (int a = 0; a < m; ++a) {
    std::vector<Neighbor<Scalar>> others;
    others.reserve(static_cast<std::size_t>(m));
    for (int b = 0; b < m; ++b)
      if (b != a) others.push_back({b, sim(a, b)});
    std::stable_sort(others.begin(), others.end(), [](const auto& l, const auto& r) {
      return l.similarity > r.similarity || (l.similarity == r.similarity && l.cluster < r.cluster);
    });
    others.resize(static_cast<std::size_t>(keep));
    sets[a] = std::move(others);
  }
  return sets;
}

// Neighbour search range at epoch t of T, growing to K: max(1, round(t * K / T)).
inline int curriculum_k(int t, int total_epochs, int max_k) {
  if (total_epochs <= 0) throw ConfigError("epochs", "must be >= 1");
  if (max_k < 1) throw ConfigError("K", "must be >= 1");
  if (t < 1 || t > total_epochs) throw ConfigError("epoch", "must lie in [1, T]");
  const long long rounded = (2LL * t * max_k + total_epochs) / (2LL * total_epochs);
  return static_cast<int>(std::max(1LL, rounded));
}

// One Bernoulli trial per listed neighbour with success probability
// clamp(similarity, 0, 1); successes carry that clamped value as weight.
// With `bernoulli` off every listed neighbour is kept at weight 1.
template <typename Scalar, typename Rng>
NeighborDraw<Scalar> sample_neighbors(const ClusterState<Scalar>& state, int source, Rng& rng, bool bernoulli = true) {
  if (source < 0 || source >= static_cast<int>(state.neighbor_sets.size()))
    throw ShapeError("sample_neighbors: cluster " + std::to_string(source) + " has no neighbour set");
  NeighborDraw<Scalar> draw;
  draw.source_cluster = source;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (const Neighbor<Scalar>& nb : state.neighbor_sets[source]) {
    if (!bernoulli) {
      draw.drawn.push_back({nb.cluster, Scalar(1)});
      continue;
    }
    const Scalar p = std::clamp(nb.similarity, Scalar(0), Scalar(1));
    if (unit(rng) < static_cast<double>(p)) draw.drawn.push_back({nb.cluster, p});
  }
  return draw;
}

}  // namespace maskcl
