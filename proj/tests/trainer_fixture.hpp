#pragma once

#include "maskcl/data.hpp"
#include "maskcl/trainer.hpp"

namespace maskcl::testing {

// 5 persons x 2 outfits x 2 images = 20 training samples, 2 held-out persons.
inline SyntheticConfig tiny_data_config(std::uint64_t seed = 3) {
  SyntheticConfig c;
  c.n_persons = 5;
  c.n_eval_persons = 2;
  c.outfits_per_person = 2;
  c.images_per_outfit = 2;
  c.seed = seed;
  return c;
}

inline TrainConfig tiny_train_config(int epochs = 1) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 8;
  t.clusters_per_batch = 4;
  t.instances_per_cluster = 2;
  t.K = 2;
  t.clustering.method = ClusterMethod::kmeans;
  t.clustering.n_clusters = 5;
  t.model.backbone.channels = {4, 8};
  t.model.backbone.feature_dim = 16;
  t.checkpoint_every = 1;
  return t;
}

}  // namespace maskcl::testing
