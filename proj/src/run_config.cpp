#include "maskcl/run_config.hpp"

#include <fstream>

#include "maskcl/checkpoint.hpp"
#include "maskcl/error.hpp"
#include "maskcl/hash.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace maskcl {

namespace {

std::string method_name(ClusterMethod m) { return m == ClusterMethod::density ? "density" : "kmeans"; }

json clustering_to_json(const ClusteringConfig& c) {
  return json{{"method", method_name(c.method)}, {"eps", c.eps},
              {"min_samples", c.min_samples},    {"n_clusters", c.n_clusters},
              {"max_iterations", c.max_iterations}, {"seed", c.seed}};
}

template <typename Fn>
void each_key(const json& j, const std::string& section, Fn&& fn) {
  if (!j.is_object()) throw ConfigError(section, "must be an object");
  for (const auto& [key, value] : j.items()) {
    const std::string field = section + "." + key;
    try {
      if (!fn(key, value)) throw ConfigError(field, "unknown key");
    } catch (const json::exception& e) {
      throw ConfigError(field, e.what());
    }
  }
}

ClusteringConfig clustering_from_json(const json& j) {
  ClusteringConfig c;
  each_key(j, "train.clustering", [&](const std::string& key, const json& v) {
    if (key == "method") {
      const auto name = v.get<std::string>();
      if (name == "density") c.method = ClusterMethod::density;
      else if (name == "kmeans") c.method = ClusterMethod::kmeans;
      else throw ConfigError("train.clustering.method", "expected density or kmeans, got '" + name + "'");
    } else if (key == "eps") c.eps = v.get<double>();
    else if (key == "min_samples") c.min_samples = v.get<int>();
    else if (key == "n_clusters") c.n_clusters = v.get<int>();
    else if (key == "max_iterations") c.max_iterations = v.get<int>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else return false;
    return true;
  });
  return c;
}

}  // namespace

json to_json(const TrainConfig& c) {
  return json{{"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"lr", c.lr},
              {"lr_step", c.lr_step},
              {"lr_gamma", c.lr_gamma},
              {"weight_decay", c.weight_decay},
              {"tau", c.tau},
              {"alpha", c.alpha},
              {"K", c.K},
              {"clustering", clustering_to_json(c.clustering)},
              {"pk_sampling", {{"clusters_per_batch", c.clusters_per_batch},
                               {"instances_per_cluster", c.instances_per_cluster}}},
              {"iters_per_epoch", c.iters_per_epoch},
              {"seed", c.seed},
              {"model", to_json(c.model)},
              {"disable_l_n", c.disable_l_n},
              {"disable_bernoulli_weight", c.disable_bernoulli_weight},
              {"neighbor_feature", to_string(c.neighbor_feature)},
              {"checkpoint_every", c.checkpoint_every},
              {"max_failed_clusterings", c.max_failed_clusterings}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  bool batch_given = false;
  each_key(j, "train", [&](const std::string& key, const json& v) {
    if (key == "epochs") c.epochs = v.get<int>();
    else if (key == "batch_size") c.batch_size = v.get<int>(), batch_given = true;
    else if (key == "lr") c.lr = v.get<double>();
    else if (key == "lr_step") c.lr_step = v.get<int>();
    else if (key == "lr_gamma") c.lr_gamma = v.get<double>();
    else if (key == "weight_decay") c.weight_decay = v.get<double>();
    else if (key == "tau") c.tau = v.get<double>();
    else if (key == "alpha") c.alpha = v.get<double>();
    else if (key == "K") c.K = v.get<int>();
    else if (key == "clustering") c.clustering = clustering_from_json(v);
    else if (key == "pk_sampling") {
      each_key(v, "train.pk_sampling", [&](const std::string& k2, const json& v2) {
        if (k2 == "clusters_per_batch") c.clusters_per_batch = v2.get<int>();
        else if (k2 == "instances_per_cluster") c.instances_per_cluster = v2.get<int>();
        else return false;
        return true;
      });
    } else if (key == "iters_per_epoch") c.iters_per_epoch = v.get<int>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else if (key == "model") c.model = model_config_from_json(v);
    else if (key == "disable_l_n") c.disable_l_n = v.get<bool>();
    else if (key == "disable_bernoulli_weight") c.disable_bernoulli_weight = v.get<bool>();
    else if (key == "neighbor_feature") c.neighbor_feature = neighbor_feature_from_string(v.get<std::string>());
    else if (key == "checkpoint_every") c.checkpoint_every = v.get<int>();
    else if (key == "max_failed_clusterings") c.max_failed_clusterings = v.get<int>();
    else return false;
    return true;
  });
  if (!batch_given) c.batch_size = c.clusters_per_batch * c.instances_per_cluster;
  validate(c);
  return c;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  each_key(j, "config", [&](const std::string& key, const json& v) {
    if (key == "data") c.data = synthetic_config_from_json(v);
    else if (key == "train") c.train = train_config_from_json(v);
    else if (key == "eval") {
      each_key(v, "eval", [&](const std::string& k2, const json& v2) {
        if (k2 == "protocol") c.eval.protocol = protocol_from_string(v2.get<std::string>());
        else if (k2 == "max_rank") c.eval.max_rank = v2.get<int>();
        else return false;
        return true;
      });
      if (c.eval.max_rank < 1) throw ConfigError("eval.max_rank", "must be >= 1");
    } else return false;
    return true;
  });
  validate(c.data);
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string(), std::string("not valid JSON: ") + e.what());
  }
  return run_config_from_json(j);
}

json to_json(const RunConfig& c) {
  return json{{"data", to_json(c.data)},
              {"train", to_json(c.train)},
              {"eval", {{"protocol", to_string(c.eval.protocol)}, {"max_rank", c.eval.max_rank}}}};
}

std::string config_hash(const RunConfig& config) {
  json j = to_json(config);
  j["train"].erase("seed");
  return sha256_hex(j.dump());
}

std::string run_dir_name(const RunConfig& config) {
  return config_hash(config).substr(0, 12) + "-seed" + std::to_string(config.train.seed);
}

}  // namespace maskcl
