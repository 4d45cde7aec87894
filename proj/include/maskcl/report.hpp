#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace maskcl {

struct StepRecord {
  int epoch = 0;
  long step = 0;
  double l_p = 0, l_c = 0, l_n = 0, total = 0;
};

struct StructureRecord {
  int epoch = 0;
  int m = 0;
  int n_outliers = 0;
  int k = 0;
  double mean_neighbor_sim = 0;
  std::optional<double> neighbor_precision;
};

struct RunLog {
  std::string name;
  std::vector<StepRecord> steps;
  std::vector<StructureRecord> epochs;
};

// Reads train_log.csv and structure_log.jsonl; IoError when either is missing.
RunLog read_run_log(const std::filesystem::path& run_dir);

struct ReportOutput {
  std::vector<std::filesystem::path> files;
  std::vector<std::string> notices;
};

// Writes loss.svg, k.svg, neighbor_precision.svg (skipped with a notice when
// no run carries precision values) and summary.md into out_dir. Several runs
// are drawn on shared axes.
ReportOutput write_report(const std::vector<std::filesystem::path>& run_dirs, const std::filesystem::path& out_dir);

}  // namespace maskcl
