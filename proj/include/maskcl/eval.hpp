#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "maskcl/error.hpp"
#include "maskcl/types.hpp"

namespace maskcl {

enum class Protocol { general, clothes_change };

std::string to_string(Protocol protocol);
// Accepts "general", "clothes_change" and the short form "cc".
Protocol protocol_from_string(const std::string& name);

struct SampleMeta {
  int person_id = 0;
  int clothes_id = 0;
  int camera_id = 0;  // -1 when unknown
};

template <typename Scalar>
struct RetrievalTask {
  RowMatrix<Scalar> query_feats;
  RowMatrix<Scalar> gallery_feats;
  std::vector<SampleMeta> query_meta;
  std::vector<SampleMeta> gallery_meta;
  Protocol protocol = Protocol::general;
};

struct EvalReport {
  double map = 0.0;
  std::vector<double> cmc;  // cmc[r - 1] for ranks 1..R
  int n_valid_queries = 0;
  int n_queries = 0;
  Protocol protocol = Protocol::general;
  bool camera_exclusion_skipped = false;

  bool operator==(const EvalReport&) const = default;
};

inline constexpr int kDefaultMaxRank = 20;

// Euclidean distances, summed coordinate by coordinate in index order.
template <typename Scalar>
Matrix<Scalar> pairwise_distance(const RowMatrix<Scalar>& query, const RowMatrix<Scalar>& gallery) {
  if (query.cols() != gallery.cols()) throw ShapeError("pairwise_distance: feature dimensions differ");
  Matrix<Scalar> dist(query.rows(), gallery.rows());
  for (Eigen::Index i = 0; i < query.rows(); ++i) {
    for (Eigen::Index j = 0; j < gallery.rows(); ++j) {
      Scalar sum = Scalar(0);
      for (Eigen::Index c = 0; c < query.cols(); ++c) {
        const Scalar diff = query(i, c) - gallery(j, c);
        sum += diff * diff;
      }
      dist(i, j) = std::sqrt(sum);
    }
  }
  return dist;
}

struct GalleryMask {
  std::vector<bool> valid;
  std::vector<bool> positive;
  bool camera_exclusion_skipped = false;
};

// Items with the query's person and camera are junk under both protocols;
// clothes_change also drops the query's person in the query's outfit. When
// either camera is unknown the camera rule is not applied.
inline GalleryMask valid_gallery_mask(const SampleMeta& query, const std::vector<SampleMeta>& gallery,
                                      Protocol protocol) {
  GalleryMask out;
  out.valid.resize(gallery.size());
  out.positive.resize(gallery.size());
  for (std::size_t j = 0; j < gallery.size(); ++j) {
    const SampleMeta& g = gallery[j];
    const bool same_person = g.person_id == query.person_id;
    const bool cameras_known = g.camera_id >= 0 && query.camera_id >= 0;
    if (same_person && !cameras_known) out.camera_exclusion_skipped = true;
    bool excluded = same_person && cameras_known && g.camera_id == query.camera_id;
    if (protocol == Protocol::clothes_change && same_person && g.clothes_id == query.clothes_id) excluded = true;
    out.valid[j] = !excluded;
    out.positive[j] = !excluded && same_person;
  }
  return out;
}

// Ranks the non-excluded gallery by ascending distance, ties by gallery index.
// Queries without a positive are dropped.
template <typename Scalar>
EvalReport compute_map_cmc(const RetrievalTask<Scalar>& task, int max_rank = kDefaultMaxRank) {
  const auto nq = static_cast<std::size_t>(task.query_feats.rows());
  const auto ng = static_cast<std::size_t>(task.gallery_feats.rows());
  if (task.query_meta.size() != nq || task.gallery_meta.size() != ng)
    throw ShapeError("compute_map_cmc: metadata and feature counts differ");
  if (max_rank < 1) throw ConfigError("max_rank", "must be >= 1");
  const Matrix<Scalar> dist = pairwise_distance(task.query_feats, task.gallery_feats);

  EvalReport report;
  report.protocol = task.protocol;
  report.n_queries = static_cast<int>(nq);
  std::vector<int> first_hit_counts(static_cast<std::size_t>(max_rank), 0);
  double ap_sum = 0.0;
  std::vector<std::size_t> order(ng);
  for (std::size_t i = 0; i < nq; ++i) {
    const GalleryMask mask = valid_gallery_mask(task.query_meta[i], task.gallery_meta, task.protocol);
    report.camera_exclusion_skipped = report.camera_exclusion_skipped || mask.camera_exclusion_skipped;
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a)) <
             dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(b));
    });
    int rank = 0, hits = 0, first_hit = 0;
    double precision_sum = 0.0;
    for (std::size_t j : order) {
      if (!mask.valid[j]) continue;
      ++rank;
      if (!mask.positive[j]) continue;
      ++hits;
      if (first_hit == 0) first_hit = rank;
      precision_sum += static_cast<double>(hits) / static_cast<double>(rank);
    }
    if (hits == 0) continue;
    ++report.n_valid_queries;
    ap_sum += precision_sum / static_cast<double>(hits);
    if (first_hit <= max_rank) ++first_hit_counts[static_cast<std::size_t>(first_hit - 1)];
  }
  if (report.n_valid_queries == 0)
    throw EvalError("no query has a valid positive in the gallery under the " + to_string(task.protocol) + " protocol");

  const double n_valid = report.n_valid_queries;
  report.map = ap_sum / n_valid;
  report.cmc.resize(static_cast<std::size_t>(max_rank));
  int cumulative = 0;
  for (int r = 0; r < max_rank; ++r) {
    cumulative += first_hit_counts[static_cast<std::size_t>(r)];
    report.cmc[static_cast<std::size_t>(r)] = cumulative / n_valid;
  }
  return report;
}

}  // namespace maskcl
