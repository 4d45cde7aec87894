#include "maskcl/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include <json.hpp>

#include "maskcl/error.hpp"
#include "maskcl/objective.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace maskcl {

std::string to_string(NeighborFeature feature) {
  switch (feature) {
    case NeighborFeature::fused:
      return "fused";
    case NeighborFeature::rgb:
      return "rgb";
    case NeighborFeature::mask:
      return "mask";
    case NeighborFeature::concat:
      return "concat";
  }
  return "fused";
}

NeighborFeature neighbor_feature_from_string(const std::string& name) {
  if (name == "fused") return NeighborFeature::fused;
  if (name == "rgb") return NeighborFeature::rgb;
  if (name == "mask") return NeighborFeature::mask;
  if (name == "concat") return NeighborFeature::concat;
  throw ConfigError("neighbor_feature", "expected fused, rgb, mask or concat, got '" + name + "'");
}

void validate(const TrainConfig& c) {
  auto positive = [](double v, const char* field) {
    if (!(v > 0)) throw ConfigError(field, "must be > 0");
  };
  positive(c.epochs, "epochs");
  positive(c.batch_size, "batch_size");
  positive(c.lr, "lr");
  positive(c.lr_step, "lr_step");
  positive(c.lr_gamma, "lr_gamma");
  if (c.weight_decay < 0) throw ConfigError("weight_decay", "must be >= 0");
  positive(c.tau, "tau");
  if (c.alpha < 0 || c.alpha > 1) throw ConfigError("alpha", "must lie in [0, 1]");
  positive(c.K, "K");
  positive(c.clusters_per_batch, "clusters_per_batch");
  positive(c.instances_per_cluster, "instances_per_cluster");
  if (c.clusters_per_batch * c.instances_per_cluster != c.batch_size)
    throw ConfigError("batch_size", "must equal clusters_per_batch * instances_per_cluster (" +
                                        std::to_string(c.clusters_per_batch) + " * " +
                                        std::to_string(c.instances_per_cluster) + ")");
  if (c.iters_per_epoch < 0) throw ConfigError("iters_per_epoch", "must be >= 0");
  positive(c.checkpoint_every, "checkpoint_every");
  positive(c.max_failed_clusterings, "max_failed_clusterings");
  if (c.clustering.method == ClusterMethod::density) {
    positive(c.clustering.eps, "clustering.eps");
    positive(c.clustering.min_samples, "clustering.min_samples");
  } else {
    positive(c.clustering.n_clusters, "clustering.n_clusters");
  }
  validate(c.model.backbone);
}

double learning_rate(const TrainConfig& config, int epoch) {
  return config.lr * std::pow(config.lr_gamma, (epoch - 1) / config.lr_step);
}

RowMatrixXd extract_rgb_features(const ModelParams<double>& model, std::span<const Sample* const> samples) {
  RowMatrixXd x(static_cast<Eigen::Index>(samples.size()), model.feature_dim());
  for (std::size_t i = 0; i < samples.size(); ++i)
    x.row(static_cast<Eigen::Index>(i)) = model.rgb_branch.forward(samples[i]->image).transpose();
  return normalize_rows(x);
}

ExtractedFeatures extract_features(const ModelParams<double>& model, std::span<const Sample* const> samples) {
  ExtractedFeatures out;
  out.x = extract_rgb_features(model, samples);
  out.x_mask.resize(out.x.rows(), out.x.cols());
  for (std::size_t i = 0; i < samples.size(); ++i)
    out.x_mask.row(static_cast<Eigen::Index>(i)) = model.mask_branch.forward(samples[i]->mask).transpose();
  out.x_mask = normalize_rows(out.x_mask);
  out.fused.resize(out.x.rows(), out.x.cols());
  for (Eigen::Index i = 0; i < out.x.rows(); ++i)
    out.fused.row(i) = fuse(model, out.x.row(i).transpose(), out.x_mask.row(i).transpose()).transpose();
  out.fused = normalize_rows(out.fused);
  return out;
}

std::vector<int> majority_persons(const ClusterState<double>& state, std::span<const Sample* const> samples) {
  std::vector<int> out;
  out.reserve(state.clusters.size());
  for (const auto& members : state.clusters) {
    std::map<int, int> counts;
    for (int id : members) ++counts[samples[static_cast<std::size_t>(id)]->person_id];
    int best = -1, best_count = 0;
    for (const auto& [person, count] : counts)
      if (count > best_count) best = person, best_count = count;
    out.push_back(best);
  }
  return out;
}

std::optional<double> neighbor_precision(const std::vector<int>& majority_person,
                                         const std::vector<NeighborDraw<double>>& draws) {
  long drawn = 0, correct = 0;
  for (const auto& draw : draws) {
    for (const auto& nb : draw.drawn) {
      ++drawn;
      if (majority_person[static_cast<std::size_t>(nb.cluster)] ==
          majority_person[static_cast<std::size_t>(draw.source_cluster)])
        ++correct;
    }
  }
  if (drawn == 0) return std::nullopt;
  return static_cast<double>(correct) / static_cast<double>(drawn);
}

namespace {

// Adam with L2 weight decay folded into the gradient.
class Adam {
 public:
  Adam(Eigen::Index size, double weight_decay)
      : m_(VectorXd::Zero(size)), v_(VectorXd::Zero(size)), weight_decay_(weight_decay) {}

  void step(VectorXd& params, const VectorXd& grad, double lr, long t) {
    const VectorXd g = grad + weight_decay_ * params;
    m_ = kBeta1 * m_ + (1.0 - kBeta1) * g;
    v_ = kBeta2 * v_ + (1.0 - kBeta2) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t));
    params.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + kEps);
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  VectorXd m_, v_;
  double weight_decay_;
};

RowMatrixXd neighbor_centers(const BankTriplet<double>& banks, const ClusterState<double>& state,
                             NeighborFeature feature) {
  switch (feature) {
    case NeighborFeature::fused:
      return compute_fused_centers(state, banks.fused);
    case NeighborFeature::rgb:
      return prototypes(banks.rgb, state.clusters);
    case NeighborFeature::mask:
      return prototypes(banks.mask, state.clusters);
    case NeighborFeature::concat: {
      const RowMatrixXd a = prototypes(banks.rgb, state.clusters);
      const RowMatrixXd b = prototypes(banks.mask, state.clusters);
      RowMatrixXd out(a.rows(), a.cols() + b.cols());
      out << a, b;
      return out;
    }
  }
  return {};
}

class RunLogs {
 public:
  RunLogs(const std::optional<fs::path>& run_dir, bool append) : dir_(run_dir) {
    if (!dir_) return;
    std::error_code ec;
    fs::create_directories(*dir_ / "checkpoints", ec);
    if (ec) throw IoError("cannot create run directory " + dir_->string() + ": " + ec.message());
    const auto mode = append ? std::ios::app : std::ios::trunc;
    steps_.open(*dir_ / "train_log.csv", std::ios::out | mode);
    structure_.open(*dir_ / "structure_log.jsonl", std::ios::out | mode);
    if (!steps_ || !structure_) throw IoError("cannot open logs in " + dir_->string());
    if (!append) steps_ << "epoch,step,l_p,l_c,l_n,total\n";
  }

  void step(int epoch, long step, const LossBreakdown<double>& loss) {
    if (!dir_) return;
    char line[256];
    std::snprintf(line, sizeof line, "%d,%ld,%.17g,%.17g,%.17g,%.17g\n", epoch, step, loss.l_p, loss.l_c, loss.l_n,
                  loss.total);
    steps_ << line;
  }

  void epoch(const EpochDiagnostics& d) {
    if (!dir_) return;
    json record{{"epoch", d.epoch},
                {"m", d.m},
                {"n_outliers", d.n_outliers},
                {"k", d.k},
                {"mean_neighbor_sim", d.mean_neighbor_sim},
                {"neighbor_precision", d.neighbor_precision ? json(*d.neighbor_precision) : json(nullptr)}};
    structure_ << record.dump() << '\n';
    steps_.flush();
    structure_.flush();
  }

  void checkpoint(const Checkpoint& ckpt, bool final) {
    if (!dir_) return;
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%03d.ckpt", ckpt.epoch);
    save_checkpoint(ckpt, *dir_ / "checkpoints" / (final ? std::string("final.ckpt") : std::string(name)));
  }

 private:
  std::optional<fs::path> dir_;
  std::ofstream steps_;
  std::ofstream structure_;
};

}  // namespace

TrainResult run_training(const DatasetManifest& dataset, const TrainConfig& config, const TrainOptions& options) {
  validate(config);
  const std::vector<const Sample*> train = dataset.split(Split::train);
  const int n = static_cast<int>(train.size());
  const int min_size = config.clustering.method == ClusterMethod::density ? config.clustering.min_samples : 1;
  if (n < std::max(2, 2 * min_size))
    throw InvariantError("training split has " + std::to_string(n) + " samples, need at least " +
                         std::to_string(std::max(2, 2 * min_size)));
  ModelConfig model_config = config.model;
  model_config.backbone.height = train.front()->height;
  model_config.backbone.width = train.front()->width;
  for (const Sample* s : train)
    if (s->height != model_config.backbone.height || s->width != model_config.backbone.width)
      throw ShapeError("training images differ in size (sample_id " + std::to_string(s->sample_id) + ")");
  const bool have_identities = dataset.generator_config.has_value();

  TrainResult result;
  int first_epoch = 1;
  if (options.resume) {
    result.model = options.resume->model;
    if (!options.resume->banks) throw SchemaError("resume checkpoint carries no memory banks");
    result.banks = *options.resume->banks;
    if (result.banks.rgb.size() != n) throw ShapeError("resume checkpoint banks do not match the training split");
    first_epoch = options.resume->epoch + 1;
  } else {
    result.model = make_model<double>(model_config, config.seed);
    const ExtractedFeatures init = extract_features(result.model, train);
    result.banks = init_banks(init.x, init.x_mask, config.alpha);
  }
  result.banks.rgb.alpha = result.banks.mask.alpha = result.banks.fused.alpha = config.alpha;

  RunLogs logs(options.run_dir, options.resume.has_value());
  ModelParams<double>& model = result.model;
  BankTriplet<double>& banks = result.banks;
  Adam adam_rgb(model.rgb_branch.size(), config.weight_decay), adam_mask(model.mask_branch.size(), config.weight_decay);
  Adam adam_pred(model.predictor.size(), config.weight_decay), adam_fuse(model.fusion.size(), config.weight_decay);
  long global_step = 0;
  int failed = 0;
  unsigned terms = kAllLosses;
  if (config.disable_l_n) terms &= ~static_cast<unsigned>(kNeighborLoss);

  for (int epoch = first_epoch; epoch <= config.epochs; ++epoch) {
    std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                      static_cast<std::uint32_t>(epoch)};
    std::mt19937_64 rng(seq);
    EpochDiagnostics diag;
    diag.epoch = epoch;
    diag.lr = learning_rate(config, epoch);
    diag.k = curriculum_k(epoch, config.epochs, config.K);

    ClusteringConfig clustering = config.clustering;
    clustering.seed = config.clustering.seed + static_cast<std::uint64_t>(epoch);
    ClusterState<double> state;
    bool clustered = true;
    try {
      state = cluster_instances(extract_rgb_features(model, train), clustering);
    } catch (const ClusteringError&) {
      clustered = false;
    }
    if (clustered) {
      diag.m = state.num_clusters();
      diag.n_outliers = state.num_outliers();
    } else {
      diag.n_outliers = n;
    }
    if (!clustered || state.num_clusters() < 2) {
      if (++failed >= config.max_failed_clusterings)
        throw TrainingAborted("clustering produced fewer than 2 clusters for " + std::to_string(failed) +
                              " consecutive epochs (last: epoch " + std::to_string(epoch) + ", m = " +
                              std::to_string(diag.m) + ", outliers = " + std::to_string(diag.n_outliers) + ")");
      logs.epoch(diag);
      result.epochs.push_back(diag);
      if (options.on_epoch) options.on_epoch(diag);
      continue;
    }
    failed = 0;
    state.epoch = epoch;
    state.centers = neighbor_centers(banks, state, config.neighbor_feature);
    state.neighbor_sets = build_neighbor_sets(state.centers, diag.k);
    {
      double sum = 0.0;
      long count = 0;
      for (const auto& set : state.neighbor_sets)
        for (const auto& nb : set) sum += nb.similarity, ++count;
      diag.mean_neighbor_sim = count ? sum / static_cast<double>(count) : 0.0;
    }
    const std::vector<int> majority = have_identities ? majority_persons(state, train) : std::vector<int>{};
    std::vector<NeighborDraw<double>> epoch_draws;

    const int clustered_samples = n - state.num_outliers();
    const int iters = config.iters_per_epoch > 0 ? config.iters_per_epoch
                                                 : (clustered_samples + config.batch_size - 1) / config.batch_size;
    LossBreakdown<double> loss_sum;
    for (int it = 0; it < iters; ++it) {
      const std::vector<int> ids = pk_sample(state, config.clusters_per_batch, config.instances_per_cluster, rng);
      const RowMatrixXd proto_rgb = prototypes(banks.rgb, state.clusters);
      const RowMatrixXd proto_mask = prototypes(banks.mask, state.clusters);
      const RowMatrixXd proto_fused = prototypes(banks.fused, state.clusters);

      // One draw per source cluster per batch, in order of first appearance.
      std::map<int, std::size_t> draw_index;
      std::vector<NeighborDraw<double>> draws;
      if (!config.disable_l_n) {
        for (int id : ids) {
          const int c = state.labels[static_cast<std::size_t>(id)];
          if (draw_index.contains(c)) continue;
          draw_index[c] = draws.size();
          draws.push_back(sample_neighbors(state, c, rng, !config.disable_bernoulli_weight));
        }
      }

      BatchInputs<double> in;
      in.proto_rgb = &proto_rgb;
      in.proto_mask = &proto_mask;
      in.proto_fused = &proto_fused;
      in.tau = config.tau;
      in.terms = terms;
      for (int id : ids) {
        const Sample* s = train[static_cast<std::size_t>(id)];
        const int c = state.labels[static_cast<std::size_t>(id)];
        in.images.push_back(&s->image);
        in.masks.push_back(&s->mask);
        in.clusters.push_back(c);
        if (!config.disable_l_n) in.draws.push_back(draws[draw_index[c]].drawn.empty() ? nullptr : &draws[draw_index[c]]);
      }
      ModelGradients<double> grads = ModelGradients<double>::zeros_like(model);
      const BatchOutputs<double> out = evaluate_batch(model, in, &grads);

      ++global_step;
      adam_rgb.step(model.rgb_branch.parameters(), grads.rgb_branch, diag.lr, global_step);
      adam_mask.step(model.mask_branch.parameters(), grads.mask_branch, diag.lr, global_step);
      adam_pred.step(model.predictor.parameters(), grads.predictor, diag.lr, global_step);
      adam_fuse.step(model.fusion.parameters(), grads.fusion, diag.lr, global_step);

      std::vector<std::size_t> order(ids.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
      for (std::size_t i : order) {
        const auto row = static_cast<Eigen::Index>(i);
        ema_update(banks.rgb, ids[i], out.x.row(row).transpose());
        ema_update(banks.mask, ids[i], out.x_mask.row(row).transpose());
        ema_update(banks.fused, ids[i], out.fused.row(row).transpose());
      }

      logs.step(epoch, global_step, out.loss);
      loss_sum.l_p += out.loss.l_p;
      loss_sum.l_c += out.loss.l_c;
      loss_sum.l_n += out.loss.l_n;
      loss_sum.total += out.loss.total;
      for (auto& d : draws) epoch_draws.push_back(std::move(d));
    }
    diag.steps = iters;
    diag.mean_loss = make_breakdown(loss_sum.l_p / iters, loss_sum.l_c / iters, loss_sum.l_n / iters);
    if (have_identities) diag.neighbor_precision = neighbor_precision(majority, epoch_draws);

    logs.epoch(diag);
    result.epochs.push_back(diag);
    if (options.on_epoch) options.on_epoch(diag);
    if (epoch % config.checkpoint_every == 0 || epoch == config.epochs)
      logs.checkpoint({model, banks, epoch, config.seed}, false);
  }
  logs.checkpoint({model, banks, config.epochs, config.seed}, true);
  return result;
}

}  // namespace maskcl
