#pragma once

#include <random>

#include "maskcl/eval.hpp"
#include "test_support.hpp"

namespace maskcl::testing {

// Small random retrieval task. Coarse features make distance ties common so
// the tie-break is exercised; some cameras are unknown.
inline RetrievalTask<double> random_task(std::mt19937_64& rng, Protocol protocol, bool coarse) {
  std::uniform_int_distribution<int> nq_dist(1, 8), ng_dist(1, 30), person(0, 3), outfit(0, 2), camera(-1, 2);
  std::uniform_int_distribution<int> level(-2, 2);
  const int nq = nq_dist(rng), ng = ng_dist(rng), d = 3;
  RetrievalTask<double> task;
  task.protocol = protocol;
  task.query_feats = random_unit_rows(nq, d, rng);
  task.gallery_feats = random_unit_rows(ng, d, rng);
  if (coarse) {
    for (auto* m : {&task.query_feats, &task.gallery_feats})
      for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = 0.5 * level(rng);
  }
  auto meta = [&] {
    const int p = person(rng);
    return SampleMeta{p, 3 * p + outfit(rng), camera(rng)};
  };
  for (int i = 0; i < nq; ++i) task.query_meta.push_back(meta());
  for (int j = 0; j < ng; ++j) task.gallery_meta.push_back(meta());
  return task;
}

}  // namespace maskcl::testing
