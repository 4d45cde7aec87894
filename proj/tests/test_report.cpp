#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "maskcl/report.hpp"
#include "test_support.hpp"
#include "trainer_fixture.hpp"

using namespace maskcl;
using namespace maskcl::testing;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int count(const std::string& text, const std::string& needle) {
  int n = 0;
  for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
  return n;
}

struct TwoRuns {
  TempDir with_neighbors{"rep_a"}, without{"rep_b"};
  TwoRuns() {
    const DatasetManifest data = generate_synthetic(tiny_data_config());
    TrainConfig cfg = tiny_train_config(2);
    run_training(data, cfg, {with_neighbors.path, std::nullopt, nullptr});
    cfg.disable_l_n = true;
    run_training(data, cfg, {without.path, std::nullopt, nullptr});
  }
};

}  // namespace

TEST_CASE("run logs are read back") {
  TwoRuns runs;
  const RunLog log = read_run_log(runs.with_neighbors.path);
  CHECK(log.epochs.size() == 2);
  CHECK(log.steps.size() == 6);
  CHECK(log.steps.back().step == 6);
  CHECK(log.epochs[1].k == 2);
  CHECK(log.epochs[0].neighbor_precision.has_value());
  CHECK(log.steps[0].total == doctest::Approx(log.steps[0].l_p + log.steps[0].l_c + log.steps[0].l_n));
}

TEST_CASE("a completed run gives three plots and a summary") {
  TwoRuns runs;
  TempDir out("rep_out");
  const ReportOutput r = write_report({runs.with_neighbors.path}, out.path);
  CHECK(r.files.size() == 4);
  CHECK(r.notices.empty());
  for (const char* f : {"loss.svg", "k.svg", "neighbor_precision.svg", "summary.md"}) CHECK(fs::exists(out.path / f));
  CHECK(slurp(out.path / "loss.svg").rfind("<svg", 0) == 0);
  CHECK(slurp(out.path / "summary.md").find('|') != std::string::npos);
}

TEST_CASE("runs without precision skip that plot with a notice") {
  TwoRuns runs;
  TempDir out("rep_skip");
  const ReportOutput r = write_report({runs.without.path}, out.path);
  CHECK_FALSE(fs::exists(out.path / "neighbor_precision.svg"));
  REQUIRE(r.notices.size() == 1);
  CHECK(r.notices[0].find("precision") != std::string::npos);
}

TEST_CASE("two runs are overlaid") {
  TwoRuns runs;
  TempDir out("rep_two");
  write_report({runs.with_neighbors.path, runs.without.path}, out.path);
  const std::string k = slurp(out.path / "k.svg");
  CHECK(count(k, "<polyline") == 2);
  const std::string summary = slurp(out.path / "summary.md");
  CHECK(summary.find(runs.with_neighbors.path.filename().string()) != std::string::npos);
  CHECK(summary.find(runs.without.path.filename().string()) != std::string::npos);
}

TEST_CASE("missing logs are an error") {
  TempDir empty("rep_empty"), out("rep_none");
  CHECK_THROWS_AS(read_run_log(empty.path), IoError);
  CHECK_THROWS_AS(write_report({empty.path}, out.path), IoError);
}
