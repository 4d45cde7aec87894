#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "maskcl/eval.hpp"

namespace maskcl {

// Brute-force reference for compute_map_cmc. Every rank is found by counting,
// for each gallery item, the admissible items that precede it. O(Nq * Ng^2).
template <typename Scalar>
EvalReport oracle_map_cmc(const RetrievalTask<Scalar>& task, int max_rank = kDefaultMaxRank) {
  const Eigen::Index nq = task.query_feats.rows();
  const Eigen::Index ng = task.gallery_feats.rows();
  if (static_cast<Eigen::Index>(task.query_meta.size()) != nq ||
      static_cast<Eigen::Index>(task.gallery_meta.size()) != ng)
    throw ShapeError("oracle_map_cmc: metadata and feature counts differ");
  if (task.query_feats.cols() != task.gallery_feats.cols()) throw ShapeError("oracle_map_cmc: dimension mismatch");

  auto distance = [&](Eigen::Index q, Eigen::Index g) {
    Scalar sum = Scalar(0);
    for (Eigen::Index c = 0; c < task.query_feats.cols(); ++c)
      sum += (task.query_feats(q, c) - task.gallery_feats(g, c)) * (task.query_feats(q, c) - task.gallery_feats(g, c));
    return std::sqrt(sum);
  };

  EvalReport report;
  report.protocol = task.protocol;
  report.n_queries = static_cast<int>(nq);
  report.cmc.assign(static_cast<std::size_t>(max_rank), 0.0);
  std::vector<int> found_within(static_cast<std::size_t>(max_rank), 0);
  double ap_sum = 0.0;

  for (Eigen::Index q = 0; q < nq; ++q) {
    const SampleMeta& qm = task.query_meta[static_cast<std::size_t>(q)];
    std::vector<char> admissible(static_cast<std::size_t>(ng)), correct(static_cast<std::size_t>(ng));
    for (Eigen::Index g = 0; g < ng; ++g) {
      const SampleMeta& gm = task.gallery_meta[static_cast<std::size_t>(g)];
      bool junk = false;
      if (gm.person_id == qm.person_id) {
        if (qm.camera_id != -1 && gm.camera_id != -1 && qm.camera_id == gm.camera_id) junk = true;
        if (qm.camera_id == -1 || gm.camera_id == -1) report.camera_exclusion_skipped = true;
        if (task.protocol == Protocol::clothes_change && gm.clothes_id == qm.clothes_id) junk = true;
      }
      admissible[static_cast<std::size_t>(g)] = !junk;
      correct[static_cast<std::size_t>(g)] = !junk && gm.person_id == qm.person_id;
    }

    auto precedes = [&](Eigen::Index a, Eigen::Index b) {
      const Scalar da = distance(q, a), db = distance(q, b);
      return da < db || (da == db && a < b);
    };
    // (rank, positives ranked at or above) for every positive.
    std::vector<std::pair<int, int>> ranked;
    for (Eigen::Index g = 0; g < ng; ++g) {
      if (!correct[static_cast<std::size_t>(g)]) continue;
      int rank = 1, hits = 1;
      for (Eigen::Index h = 0; h < ng; ++h) {
        if (h == g || !admissible[static_cast<std::size_t>(h)] || !precedes(h, g)) continue;
        ++rank;
        if (correct[static_cast<std::size_t>(h)]) ++hits;
      }
      ranked.emplace_back(rank, hits);
    }
    if (ranked.empty()) continue;
    std::sort(ranked.begin(), ranked.end());
    double precision_sum = 0.0;
    for (const auto& [rank, hits] : ranked) precision_sum += static_cast<double>(hits) / static_cast<double>(rank);
    ++report.n_valid_queries;
    ap_sum += precision_sum / static_cast<double>(ranked.size());
    for (int r = 1; r <= max_rank; ++r)
      if (ranked.front().first <= r) ++found_within[static_cast<std::size_t>(r - 1)];
  }
  if (report.n_valid_queries == 0) throw EvalError("oracle: no query has a valid positive");
  report.map = ap_sum / static_cast<double>(report.n_valid_queries);
  for (int r = 0; r < max_rank; ++r)
    report.cmc[static_cast<std::size_t>(r)] =
        found_within[static_cast<std::size_t>(r)] / static_cast<double>(report.n_valid_queries);
  return report;
}

}  // namespace maskcl
