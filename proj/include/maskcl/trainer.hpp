#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "maskcl/checkpoint.hpp"
#include "maskcl/data.hpp"
#include "maskcl/encoder.hpp"
#include "maskcl/losses.hpp"
#include "maskcl/memory.hpp"
#include "maskcl/structure.hpp"

namespace maskcl {

// Which bank the cluster centers for neighbour search are taken from.
enum class NeighborFeature { fused, rgb, mask, concat };

std::string to_string(NeighborFeature feature);
NeighborFeature neighbor_feature_from_string(const std::string& name);

struct TrainConfig {
  int epochs = 60;
  int batch_size = 64;
  double lr = 3.5e-4;
  int lr_step = 20;          // epochs between decays
  double lr_gamma = 0.1;
  double weight_decay = 5e-4;
  double tau = 0.05;
  double alpha = 0.2;
  int K = 10;                // final neighbour range
  ClusteringConfig clustering;
  int clusters_per_batch = 16;
  int instances_per_cluster = 4;
  int iters_per_epoch = 0;   // 0: ceil(clustered samples / batch_size)
  std::uint64_t seed = 0;
  ModelConfig model;
  bool disable_l_n = false;
  bool disable_bernoulli_weight = false;
  NeighborFeature neighbor_feature = NeighborFeature::fused;
  int checkpoint_every = 10;
  int max_failed_clusterings = 3;

  bool operator==(const TrainConfig&) const = default;
};

void validate(const TrainConfig& config);

// lr * gamma^floor((epoch - 1) / lr_step), epochs counted from 1.
double learning_rate(const TrainConfig& config, int epoch);

struct EpochDiagnostics {
  int epoch = 0;
  int m = 0;
  int n_outliers = 0;
  int k = 0;
  int steps = 0;
  double lr = 0.0;
  double mean_neighbor_sim = 0.0;
  std::optional<double> neighbor_precision;  // needs ground-truth identities
  LossBreakdown<double> mean_loss;
};

struct TrainResult {
  ModelParams<double> model;
  BankTriplet<double> banks;
  std::vector<EpochDiagnostics> epochs;
};

struct TrainOptions {
  // When set, train_log.csv, structure_log.jsonl and checkpoints/ are written here.
  std::optional<std::filesystem::path> run_dir;
  // Continue after the checkpoint's epoch. Adam moments restart from zero.
  std::optional<Checkpoint> resume;
  std::function<void(const EpochDiagnostics&)> on_epoch;
};

TrainResult run_training(const DatasetManifest& dataset, const TrainConfig& config, const TrainOptions& options = {});

// min(P, m) clusters without replacement, Q members from each (with
// replacement only when the cluster has fewer than Q members).
template <typename Scalar, typename Rng>
std::vector<int> pk_sample(const ClusterState<Scalar>& state, int clusters_per_batch, int instances_per_cluster,
                           Rng& rng) {
  const int m = state.num_clusters();
  if (m < 1) throw InvariantError("pk_sample: no clusters");
  std::vector<int> order(static_cast<std::size_t>(m));
  for (int c = 0; c < m; ++c) order[static_cast<std::size_t>(c)] = c;
  const int take = std::min(clusters_per_batch, m);
  // Partial Fisher-Yates.
  for (int c = 0; c < take; ++c) {
    std::uniform_int_distribution<int> pick(c, m - 1);
    std::swap(order[static_cast<std::size_t>(c)], order[static_cast<std::size_t>(pick(rng))]);
  }
  std::vector<int> ids;
  ids.reserve(static_cast<std::size_t>(take * instances_per_cluster));
  for (int c = 0; c < take; ++c) {
    std::vector<int> members = state.clusters[static_cast<std::size_t>(order[static_cast<std::size_t>(c)])];
    const int size = static_cast<int>(members.size());
    if (size >= instances_per_cluster) {
      for (int i = 0; i < instances_per_cluster; ++i) {
        std::uniform_int_distribution<int> pick(i, size - 1);
        std::swap(members[static_cast<std::size_t>(i)], members[static_cast<std::size_t>(pick(rng))]);
        ids.push_back(members[static_cast<std::size_t>(i)]);
      }
    } else {
      std::uniform_int_distribution<int> pick(0, size - 1);
      for (int i = 0; i < instances_per_cluster; ++i) ids.push_back(members[static_cast<std::size_t>(pick(rng))]);
    }
  }
  return ids;
}

struct ExtractedFeatures {
  RowMatrixXd x;
  RowMatrixXd x_mask;
  RowMatrixXd fused;
};

// Row i belongs to samples[i]; every row is L2-normalized.
ExtractedFeatures extract_features(const ModelParams<double>& model, std::span<const Sample* const> samples);
RowMatrixXd extract_rgb_features(const ModelParams<double>& model, std::span<const Sample* const> samples);

// Fraction of drawn neighbour clusters whose majority person matches the
// source cluster's majority person. Empty when nothing was drawn.
std::optional<double> neighbor_precision(const std::vector<int>& majority_person,
                                         const std::vector<NeighborDraw<double>>& draws);

// Most frequent person per cluster, ties to the lower person id.
std::vector<int> majority_persons(const ClusterState<double>& state, std::span<const Sample* const> samples);

}  // namespace maskcl
