#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "eval_fixture.hpp"
#include "maskcl/data.hpp"
#include "maskcl/eval_oracle.hpp"
#include "maskcl/evaluate.hpp"

using namespace maskcl;
using namespace maskcl::testing;

namespace {

RetrievalTask<double> one_query(std::vector<double> gallery_x, std::vector<SampleMeta> gallery_meta,
                                Protocol protocol = Protocol::general) {
  RetrievalTask<double> t;
  t.protocol = protocol;
  t.query_feats = RowMatrixXd::Zero(1, 1);
  t.query_meta = {{1, 3, 0}};
  t.gallery_feats.resize(static_cast<Eigen::Index>(gallery_x.size()), 1);
  for (std::size_t j = 0; j < gallery_x.size(); ++j) t.gallery_feats(static_cast<Eigen::Index>(j), 0) = gallery_x[j];
  t.gallery_meta = std::move(gallery_meta);
  return t;
}

}  // namespace

TEST_CASE("pairwise distance examples") {
  RowMatrixXd a(2, 2), b(2, 2);
  a << 1, 0, 0, 1;
  b << 1, 0, 0, 1;
  const MatrixXd d = pairwise_distance(a, b);
  CHECK(d(0, 0) == 0.0);
  CHECK(d(0, 1) == doctest::Approx(1.4142).epsilon(1e-4));

  std::mt19937_64 rng(1);
  const RowMatrixXd q = random_unit_rows(3, 2, rng), g = random_unit_rows(4, 2, rng);
  const MatrixXd dq = pairwise_distance(q, g);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) CHECK(dq(i, j) == doctest::Approx((q.row(i) - g.row(j)).norm()).epsilon(1e-14));
  CHECK_THROWS_AS(pairwise_distance(q, RowMatrixXd(2, 3)), ShapeError);
}

TEST_CASE("gallery mask examples") {
  const SampleMeta q{1, 3, 0};
  const std::vector<SampleMeta> g{{1, 3, 0}, {1, 3, 1}, {1, 5, 1}, {2, 7, 1}};
  const GalleryMask gen = valid_gallery_mask(q, g, Protocol::general);
  const GalleryMask cc = valid_gallery_mask(q, g, Protocol::clothes_change);
  CHECK(gen.valid == std::vector<bool>{false, true, true, true});
  CHECK(gen.positive == std::vector<bool>{false, true, true, false});
  CHECK(cc.valid == std::vector<bool>{false, false, true, true});
  CHECK(cc.positive == std::vector<bool>{false, false, true, false});
  CHECK_FALSE(gen.camera_exclusion_skipped);

  const GalleryMask unknown = valid_gallery_mask({1, 3, kUnknownCamera}, g, Protocol::general);
  CHECK(unknown.valid[0]);
  CHECK(unknown.camera_exclusion_skipped);
}

TEST_CASE("mAP and CMC examples") {
  SUBCASE("single positive at rank 1") {
    const EvalReport r = compute_map_cmc(one_query({0.1, 0.5}, {{1, 4, 1}, {2, 6, 1}}));
    CHECK(r.map == 1.0);
    CHECK(r.cmc[0] == 1.0);
    CHECK(r.cmc.size() == 20);
  }
  SUBCASE("positives at ranks 1 and 3") {
    const EvalReport r = compute_map_cmc(one_query({0.1, 0.2, 0.3}, {{1, 4, 1}, {2, 6, 1}, {1, 5, 1}}));
    CHECK(r.map == doctest::Approx(0.8333).epsilon(1e-4));
    CHECK(r.map == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0));
  }
  SUBCASE("ties resolve by gallery index") {
    const EvalReport r = compute_map_cmc(one_query({0.2, 0.2}, {{2, 6, 1}, {1, 4, 1}}));
    CHECK(r.map == 0.5);
    CHECK(r.cmc[0] == 0.0);
    CHECK(r.cmc[1] == 1.0);
  }
  SUBCASE("a query without positives is dropped") {
    RetrievalTask<double> t = one_query({0.1, 0.2}, {{1, 4, 1}, {2, 6, 1}});
    t.query_feats.conservativeResize(2, 1);
    t.query_feats(1, 0) = 0.0;
    t.query_meta.push_back({9, 27, 0});
    const EvalReport r = compute_map_cmc(t);
    CHECK(r.n_queries == 2);
    CHECK(r.n_valid_queries == 1);
    CHECK(r == oracle_map_cmc(t));
  }
  SUBCASE("no valid query at all") {
    const RetrievalTask<double> t = one_query({0.1}, {{1, 3, 1}}, Protocol::clothes_change);
    CHECK_THROWS_AS(compute_map_cmc(t), EvalError);
    CHECK_THROWS_AS(oracle_map_cmc(t), EvalError);
  }
  SUBCASE("bad inputs") {
    RetrievalTask<double> t = one_query({0.1}, {{1, 4, 1}});
    CHECK_THROWS_AS(compute_map_cmc(t, 0), ConfigError);
    t.gallery_meta.push_back({1, 4, 1});
    CHECK_THROWS_AS(compute_map_cmc(t), ShapeError);
  }
}

TEST_CASE("property: fast evaluation equals the brute-force oracle exactly") {
  std::mt19937_64 rng(2024);
  int compared = 0;
  for (Protocol protocol : {Protocol::general, Protocol::clothes_change}) {
    for (int trial = 0; trial < 200; ++trial) {
      const RetrievalTask<double> task = random_task(rng, protocol, trial % 2 == 0);
      bool fast_threw = false, oracle_threw = false;
      EvalReport fast, slow;
      try {
        fast = compute_map_cmc(task);
      } catch (const EvalError&) {
        fast_threw = true;
      }
      try {
        slow = oracle_map_cmc(task);
      } catch (const EvalError&) {
        oracle_threw = true;
      }
      CHECK(fast_threw == oracle_threw);
      if (!fast_threw) {
        CHECK(fast == slow);
        ++compared;
      }
    }
  }
  CHECK(compared >= 100);
}

TEST_CASE("property: CMC is a non-decreasing fraction and mAP lies in [0, 1]") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const RetrievalTask<double> task = random_task(rng, Protocol::general, false);
    try {
      const EvalReport r = compute_map_cmc(task, 10);
      CHECK(r.map >= 0.0);
      CHECK(r.map <= 1.0);
      CHECK(std::is_sorted(r.cmc.begin(), r.cmc.end()));
      CHECK(r.cmc.back() <= 1.0);
    } catch (const EvalError&) {
    }
  }
}

TEST_CASE("property: gallery order does not matter when distances are distinct") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    RetrievalTask<double> task = random_task(rng, Protocol::general, false);
    EvalReport before;
    try {
      before = compute_map_cmc(task);
    } catch (const EvalError&) {
      continue;
    }
    std::vector<int> perm(task.gallery_meta.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    RetrievalTask<double> shuffled = task;
    for (std::size_t j = 0; j < perm.size(); ++j) {
      shuffled.gallery_feats.row(static_cast<Eigen::Index>(j)) = task.gallery_feats.row(perm[j]);
      shuffled.gallery_meta[j] = task.gallery_meta[static_cast<std::size_t>(perm[j])];
    }
    const EvalReport after = compute_map_cmc(shuffled);
    CHECK(after.map == doctest::Approx(before.map).epsilon(1e-12));
    CHECK(after.cmc == before.cmc);
  }
}

TEST_CASE("evaluation reads only the RGB branch") {
  SyntheticConfig cfg;
  cfg.n_persons = 2;
  cfg.n_eval_persons = 3;
  cfg.outfits_per_person = 2;
  cfg.images_per_outfit = 2;
  cfg.seed = 4;
  const DatasetManifest data = generate_synthetic(cfg);
  ModelConfig mc;
  mc.backbone.height = cfg.height;
  mc.backbone.width = cfg.width;
  mc.backbone.feature_dim = 16;
  ModelParams<double> model = make_model<double>(mc, 1);
  const EvalReport a = evaluate_model(model, data, Protocol::clothes_change);
  model.mask_branch.parameters().setZero();
  model.predictor.parameters().setZero();
  model.fusion.parameters().setZero();
  const EvalReport b = evaluate_model(model, data, Protocol::clothes_change);
  CHECK(a == b);
  CHECK(a.n_valid_queries > 0);
}

TEST_CASE("protocol names") {
  CHECK(protocol_from_string("cc") == Protocol::clothes_change);
  CHECK(protocol_from_string("clothes_change") == Protocol::clothes_change);
  CHECK(protocol_from_string("general") == Protocol::general);
  CHECK(to_string(Protocol::clothes_change) == "clothes_change");
  CHECK_THROWS(protocol_from_string("closed"));
}

TEST_CASE("report json carries the run metadata") {
  EvalReport r;
  r.map = 0.25;
  r.cmc = {0.5, 1.0};
  r.n_valid_queries = 2;
  r.n_queries = 3;
  r.protocol = Protocol::clothes_change;
  const auto j = eval_report_json(r, "abc", "def");
  CHECK(j.at("map") == 0.25);
  CHECK(j.at("cmc").size() == 2);
  CHECK(j.at("checkpoint") == "abc");
  CHECK(j.at("dataset_hash") == "def");
  CHECK(j.at("protocol") == "clothes_change");
}

TEST_CASE("permutation chance is reproducible and bounded") {
  std::mt19937_64 rng(3);
  RetrievalTask<double> task;
  task.query_feats = random_unit_rows(6, 4, rng);
  task.gallery_feats = random_unit_rows(24, 4, rng);
  for (int i = 0; i < 6; ++i) task.query_meta.push_back({i % 3, 3 * (i % 3), 0});
  for (int j = 0; j < 24; ++j) task.gallery_meta.push_back({j % 3, 3 * (j % 3) + 1 + j % 2, 1});
  const ChanceLevel a = permutation_chance_map(task, 50, 9), b = permutation_chance_map(task, 50, 9);
  CHECK(a.mean == b.mean);
  CHECK(a.stddev == b.stddev);
  CHECK(a.mean > 0.0);
  CHECK(a.mean < 1.0);
  CHECK(a.stddev >= 0.0);
}
