#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "maskcl/data.hpp"
#include "maskcl/encoder.hpp"
#include "maskcl/eval.hpp"

namespace maskcl {

// Query and gallery features from the RGB branch alone.
RetrievalTask<double> build_retrieval_task(const ModelParams<double>& model, const DatasetManifest& dataset,
                                           Protocol protocol);

EvalReport evaluate_model(const ModelParams<double>& model, const DatasetManifest& dataset, Protocol protocol,
                          int max_rank = kDefaultMaxRank);

// {protocol, map, cmc, n_valid_queries, n_queries, checkpoint, dataset_hash, notes}
nlohmann::json eval_report_json(const EvalReport& report, const std::string& checkpoint_digest,
                                const std::string& dataset_digest);

struct ChanceLevel {
  double mean = 0.0;
  double stddev = 0.0;
};

// mAP of the task's features against gallery identities shuffled
// `permutations` times (clothes ids travel with their person).
ChanceLevel permutation_chance_map(const RetrievalTask<double>& task, int permutations, std::uint64_t seed);

}  // namespace maskcl
