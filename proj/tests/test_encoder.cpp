#include <doctest.h>

#include <random>
#include <vector>

#include "maskcl/encoder.hpp"
#include "test_support.hpp"

using namespace maskcl;
using namespace maskcl::testing;

namespace {

// Checks d(w . branch(planes)) against central differences on sampled coordinates.
double worst_branch_error(ConvBranch<double>& branch, const ImagePlanes& planes, std::mt19937_64& rng, int coords) {
  std::normal_distribution<double> normal(0.0, 1.0);
  ConvBranch<double>::Cache cache;
  const VectorXd out = branch.forward(planes, &cache);
  VectorXd w(out.size());
  for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = normal(rng);
  VectorXd grad = VectorXd::Zero(branch.size());
  branch.backward(cache, w, grad);
  std::uniform_int_distribution<Eigen::Index> pick(0, branch.size() - 1);
  double worst = 0.0;
  for (int c = 0; c < coords; ++c) {
    const Eigen::Index i = pick(rng);
    const double numeric =
        central_difference([&] { return w.dot(branch.forward(planes)); }, branch.parameters()[i], 1e-5);
    worst = std::max(worst, relative_error(grad[i], numeric));
  }
  return worst;
}

}  // namespace

TEST_CASE("branch outputs have the configured shape and are deterministic") {
  const ModelParams<double> model = make_model<double>(small_model_config(12), 3);
  std::mt19937_64 rng(1);
  std::vector<ImagePlanes> images, masks;
  for (int b = 0; b < 4; ++b) {
    images.push_back(random_planes(16 * 8, 3, rng));
    masks.push_back(random_binary_mask(16 * 8, rng));
  }
  images.push_back(images.front());
  masks.push_back(masks.front());
  const RowMatrixXd x = encode_rgb(model, std::span<const ImagePlanes>(images));
  const RowMatrixXd xm = encode_mask(model, std::span<const ImagePlanes>(masks));
  CHECK(x.rows() == 5);
  CHECK(x.cols() == 12);
  CHECK(xm.rows() == 5);
  CHECK(x.row(0) == x.row(4));
  CHECK(xm.row(0) == xm.row(4));
  CHECK(x.allFinite());
}

TEST_CASE("an all-zero mask gives finite features") {
  const ModelParams<double> model = make_model<double>(small_model_config(), 4);
  const VectorXd f = model.mask_branch.forward(ImagePlanes::Zero(16 * 8, 1));
  CHECK(f.allFinite());
}

TEST_CASE("wrong input shapes are rejected") {
  const ModelParams<double> model = make_model<double>(small_model_config(), 4);
  CHECK_THROWS_AS(model.rgb_branch.forward(ImagePlanes::Zero(16 * 8, 1)), ShapeError);
  CHECK_THROWS_AS(model.mask_branch.forward(ImagePlanes::Zero(15 * 8, 1)), ShapeError);
  CHECK_THROWS_AS(fuse(model, VectorXd::Zero(16), VectorXd::Zero(15)), ShapeError);
  CHECK_THROWS_AS(predict(model, VectorXd::Zero(3)), ShapeError);
}

TEST_CASE("architecture validation") {
  BranchArchitecture a = small_model_config().backbone;
  a.stripes = 9;
  CHECK_THROWS_AS(validate(a), ConfigError);
  a.stripes = 1;
  CHECK_NOTHROW(validate(a));
  a.kernel = 2;
  CHECK_THROWS_AS(validate(a), ConfigError);
}

TEST_CASE("branch gradients match central differences") {
  std::mt19937_64 rng(7);
  for (int stripes : {1, 2, 4}) {
    ModelConfig config = small_model_config(8);
    config.backbone.stripes = stripes;
    ModelParams<double> model = make_model<double>(config, 10 + stripes);
    CAPTURE(stripes);
    CHECK(worst_branch_error(model.rgb_branch, random_planes(16 * 8, 3, rng), rng, 40) <= 1e-4);
    CHECK(worst_branch_error(model.mask_branch, random_binary_mask(16 * 8, rng), rng, 40) <= 1e-4);
  }
}

TEST_CASE("affine map gradients match central differences") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Activation act : {Activation::none, Activation::elu}) {
    AffineMap<double> map(6, 4, act);
    map.initialize(rng);
    for (Eigen::Index i = 0; i < map.size(); ++i) map.parameters()[i] += 0.1 * normal(rng);
    VectorXd x(6), w(4);
    for (auto& v : x) v = normal(rng);
    for (auto& v : w) v = normal(rng);
    VectorXd grad = VectorXd::Zero(map.size());
    const VectorXd d_x = map.backward(x, map.forward(x), w, grad);
    for (Eigen::Index i = 0; i < map.size(); ++i) {
      const double numeric = central_difference([&] { return w.dot(map.forward(x)); }, map.parameters()[i], 1e-5);
      CHECK(relative_error(grad[i], numeric) <= 1e-4);
    }
    for (Eigen::Index i = 0; i < 6; ++i) {
      const double numeric = central_difference([&] { return w.dot(map.forward(x)); }, x[i], 1e-5);
      CHECK(relative_error(d_x[i], numeric) <= 1e-4);
    }
  }
}

TEST_CASE("predictor and fusion special cases") {
  ModelParams<double> model = make_model<double>(small_model_config(5), 2);
  std::mt19937_64 rng(3);
  const VectorXd x = random_unit_rows(1, 5, rng).row(0).transpose();
  const VectorXd xm = random_unit_rows(1, 5, rng).row(0).transpose();

  model.predictor.weight().setIdentity();
  model.predictor.bias().setZero();
  CHECK(predict(model, x) == x);
  model.predictor.weight().setZero();
  model.predictor.bias() << 1, 2, 3, 4, 5;
  CHECK(predict(model, x) == model.predictor.bias());

  model.fusion.weight().setZero();
  model.fusion.bias().setZero();
  model.fusion.weight().leftCols(5).setIdentity();
  CHECK(fuse(model, x, xm) == x);
  model.fusion.weight().setZero();
  model.fusion.weight().rightCols(5).setIdentity();
  CHECK(fuse(model, x, xm) == xm);
}

TEST_CASE("branches have independent parameters") {
  ModelParams<double> model = make_model<double>(small_model_config(), 5);
  CHECK(model.rgb_branch.parameters().size() != model.mask_branch.parameters().size());
  std::mt19937_64 rng(4);
  const ImagePlanes image = random_planes(16 * 8, 3, rng), mask = random_binary_mask(16 * 8, rng);
  const VectorXd xm = model.mask_branch.forward(mask), x = model.rgb_branch.forward(image);
  const VectorXd saved = model.rgb_branch.parameters();
  model.rgb_branch.parameters().array() += 0.01;
  CHECK(model.mask_branch.forward(mask) == xm);
  model.rgb_branch.parameters() = saved;
  model.mask_branch.parameters().array() *= 1.5;
  CHECK(model.rgb_branch.forward(image) == x);
}

TEST_CASE("seeded construction is reproducible") {
  const auto a = make_model<double>(small_model_config(), 9), b = make_model<double>(small_model_config(), 9);
  const auto c = make_model<double>(small_model_config(), 10);
  CHECK(a.rgb_branch.parameters() == b.rgb_branch.parameters());
  CHECK(a.fusion.parameters() == b.fusion.parameters());
  CHECK(a.rgb_branch.parameters() != c.rgb_branch.parameters());
}
