#include "maskcl/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "maskcl/error.hpp"
#include "maskcl/memory.hpp"

using nlohmann::json;

namespace maskcl {

std::string to_string(Protocol protocol) {
  return protocol == Protocol::general ? "general" : "clothes_change";
}

Protocol protocol_from_string(const std::string& name) {
  if (name == "general") return Protocol::general;
  if (name == "clothes_change" || name == "cc") return Protocol::clothes_change;
  throw ConfigError("protocol", "expected general or cc, got '" + name + "'");
}

RetrievalTask<double> build_retrieval_task(const ModelParams<double>& model, const DatasetManifest& dataset,
                                           Protocol protocol) {
  const auto query = dataset.split(Split::query);
  const auto gallery = dataset.split(Split::gallery);
  if (query.empty()) throw EvalError("dataset has no query split");
  if (gallery.empty()) throw EvalError("dataset has no gallery split");
  auto encode = [&](const std::vector<const Sample*>& samples, RowMatrixXd& feats, std::vector<SampleMeta>& meta) {
    feats.resize(static_cast<Eigen::Index>(samples.size()), model.feature_dim());
    for (std::size_t i = 0; i < samples.size(); ++i) {
      feats.row(static_cast<Eigen::Index>(i)) = model.rgb_branch.forward(samples[i]->image).transpose();
      meta.push_back({samples[i]->person_id, samples[i]->clothes_id, samples[i]->camera_id});
    }
    feats = normalize_rows(feats);
  };
  RetrievalTask<double> task;
  task.protocol = protocol;
  encode(query, task.query_feats, task.query_meta);
  encode(gallery, task.gallery_feats, task.gallery_meta);
  return task;
}

EvalReport evaluate_model(const ModelParams<double>& model, const DatasetManifest& dataset, Protocol protocol,
                          int max_rank) {
  return compute_map_cmc(build_retrieval_task(model, dataset, protocol), max_rank);
}

json eval_report_json(const EvalReport& report, const std::string& checkpoint_digest,
                      const std::string& dataset_digest) {
  json notes = json::array();
  if (report.camera_exclusion_skipped)
    notes.push_back("some query/gallery pairs lack camera ids; the same-camera exclusion was skipped for them");
  return json{{"protocol", to_string(report.protocol)},
              {"map", report.map},
              {"cmc", report.cmc},
              {"n_valid_queries", report.n_valid_queries},
              {"n_queries", report.n_queries},
              {"checkpoint", checkpoint_digest},
              {"dataset_hash", dataset_digest},
              {"notes", notes}};
}

ChanceLevel permutation_chance_map(const RetrievalTask<double>& task, int permutations, std::uint64_t seed) {
  if (permutations < 2) throw ConfigError("permutations", "must be >= 2");
  std::mt19937_64 rng(seed);
  std::vector<double> maps;
  RetrievalTask<double> shuffled = task;
  for (int p = 0; p < permutations; ++p) {
    // Relabel whole gallery items: identity and outfit move together so the
    // clothes constraint stays meaningful.
    std::vector<SampleMeta> meta = task.gallery_meta;
    std::vector<std::size_t> perm(meta.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t i = 0; i < meta.size(); ++i) {
      meta[i].person_id = task.gallery_meta[perm[i]].person_id;
      meta[i].clothes_id = task.gallery_meta[perm[i]].clothes_id;
    }
    shuffled.gallery_meta = std::move(meta);
    maps.push_back(compute_map_cmc(shuffled).map);
  }
  ChanceLevel out;
  for (double m : maps) out.mean += m;
  out.mean /= static_cast<double>(maps.size());
  for (double m : maps) out.stddev += (m - out.mean) * (m - out.mean);
  out.stddev = std::sqrt(out.stddev / static_cast<double>(maps.size() - 1));
  return out;
}

}  // namespace maskcl
