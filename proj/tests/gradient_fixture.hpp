#pragma once

#include <algorithm>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "test_support.hpp"

namespace maskcl::testing {

// A frozen random model with a batch, prototypes and neighbour draws.
struct GradientFixture {
  ModelParams<double> model;
  std::vector<ImagePlanes> images, masks;
  std::vector<NeighborDraw<double>> draws;
  RowMatrixXd proto_rgb, proto_mask, proto_fused;
  RowMatrixXd frozen_mask_features;
  BatchInputs<double> in;

  GradientFixture(int feature_dim, int batch, int clusters, std::uint64_t seed) {
    model = make_model<double>(small_model_config(feature_dim), seed);
    std::mt19937_64 rng(seed + 1);
    const int pixels = model.config.backbone.height * model.config.backbone.width;
    for (int b = 0; b < batch; ++b) {
      images.push_back(random_planes(pixels, 3, rng));
      masks.push_back(random_binary_mask(pixels, rng));
    }
    // Cluster means of unit vectors are shorter than 1.
    proto_rgb = 0.8 * random_unit_rows(clusters, feature_dim, rng);
    proto_mask = 0.7 * random_unit_rows(clusters, feature_dim, rng);
    proto_fused = 0.9 * random_unit_rows(clusters, feature_dim, rng);
    std::uniform_int_distribution<int> cluster(0, clusters - 1);
    std::uniform_real_distribution<double> weight(0.1, 1.0);
    for (int c = 0; c < clusters; ++c) {
      NeighborDraw<double> d;
      d.source_cluster = c;
      for (int j = 0; j < clusters; ++j)
        if (j != c && (j + c) % 2 == 0) d.drawn.push_back({j, weight(rng)});
      draws.push_back(d);
    }
    in.proto_rgb = &proto_rgb;
    in.proto_mask = &proto_mask;
    in.proto_fused = &proto_fused;
    for (int b = 0; b < batch; ++b) {
      const int y = cluster(rng);
      in.images.push_back(&images[b]);
      in.masks.push_back(&masks[b]);
      in.clusters.push_back(y);
      in.draws.push_back(draws[y].drawn.empty() ? nullptr : &draws[y]);
    }
    frozen_mask_features = evaluate_batch(model, in).x_mask;
  }

  // The loss the analytic gradient belongs to: cross-view targets held at
  // their unperturbed values.
  double surrogate_loss(unsigned terms) {
    in.terms = terms;
    in.crossview_targets = &frozen_mask_features;
    const double value = evaluate_batch(model, in).loss.total;
    in.crossview_targets = nullptr;
    return value;
  }

  double loss(unsigned terms) {
    in.terms = terms;
    return evaluate_batch(model, in, nullptr).loss.total;
  }

  ModelGradients<double> gradient(unsigned terms) {
    in.terms = terms;
    ModelGradients<double> g = ModelGradients<double>::zeros_like(model);
    evaluate_batch(model, in, &g);
    return g;
  }
};

struct ParameterSetCheck {
  std::string name;
  int checked = 0;
  double worst = 0.0;
};

// Compares analytic against central differences on `coords` randomly chosen
// coordinates of each parameter set (all of them when the set is smaller).
inline std::vector<ParameterSetCheck> check_gradients(GradientFixture& fx, unsigned terms, int coords, double step,
                                                      std::uint64_t seed) {
  const ModelGradients<double> g = fx.gradient(terms);
  std::mt19937_64 rng(seed);
  struct Set {
    const char* name;
    VectorXd* params;
    const VectorXd* grad;
  };
  const Set sets[] = {{"rgb_branch", &fx.model.rgb_branch.parameters(), &g.rgb_branch},
                      {"mask_branch", &fx.model.mask_branch.parameters(), &g.mask_branch},
                      {"predictor", &fx.model.predictor.parameters(), &g.predictor},
                      {"fusion", &fx.model.fusion.parameters(), &g.fusion}};
  std::vector<ParameterSetCheck> out;
  for (const Set& s : sets) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(s.params->size()));
    for (Eigen::Index i = 0; i < s.params->size(); ++i) idx[static_cast<std::size_t>(i)] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min<std::size_t>(idx.size(), static_cast<std::size_t>(coords)));
    ParameterSetCheck check{s.name, 0, 0.0};
    for (Eigen::Index i : idx) {
      const double numeric = central_difference([&] { return fx.surrogate_loss(terms); }, (*s.params)[i], step);
      check.worst = std::max(check.worst, relative_error((*s.grad)[i], numeric));
      ++check.checked;
    }
    out.push_back(check);
  }
  return out;
}

}  // namespace maskcl::testing
