// maskcl gen-data | train | eval | report
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "maskcl/checkpoint.hpp"
#include "maskcl/data.hpp"
#include "maskcl/error.hpp"
#include "maskcl/evaluate.hpp"
#include "maskcl/hash.hpp"
#include "maskcl/report.hpp"
#include "maskcl/run_config.hpp"
#include "maskcl/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace maskcl;

namespace {

struct Options {
  std::string config;
  std::string data;
  std::string out;
  std::vector<std::string> run_dirs;
  std::string checkpoint;
  std::string resume;
  std::string protocol;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> ablate;
  bool force = false;
};

RunConfig resolve(const Options& opt) {
  RunConfig config = opt.config.empty() ? RunConfig{} : load_run_config(opt.config);
  if (opt.seed) {
    config.data.seed = *opt.seed;
    config.train.seed = *opt.seed;
  }
  for (const std::string& a : opt.ablate) {
    if (a == "no-neighbor") config.train.disable_l_n = true;
    else if (a == "no-bernoulli") config.train.disable_bernoulli_weight = true;
    else if (a.rfind("neighbor-feature=", 0) == 0)
      config.train.neighbor_feature = neighbor_feature_from_string(a.substr(std::string("neighbor-feature=").size()));
    else throw ConfigError("--ablate", "unknown ablation '" + a + "'");
  }
  if (!opt.protocol.empty()) config.eval.protocol = protocol_from_string(opt.protocol);
  return config;
}

void echo(const json& resolved) { std::cout << "resolved config: " << resolved.dump() << '\n'; }

int cmd_gen_data(const Options& opt) {
  const RunConfig config = resolve(opt);
  echo(json{{"data", to_json(config.data)}});
  const fs::path root = opt.out.empty() ? fs::path(opt.data) : fs::path(opt.out);
  if (root.empty()) throw ConfigError("--out", "an output directory is required");
  const DatasetManifest manifest = generate_synthetic(config.data);
  save_dataset(manifest, root);
  std::cout << "wrote " << root.string() << ": train " << manifest.split(Split::train).size() << ", query "
            << manifest.split(Split::query).size() << ", gallery " << manifest.split(Split::gallery).size()
            << " samples\n"
            << "dataset hash " << dataset_hash(root) << '\n';
  return 0;
}

fs::path default_run_root() {
  if (const char* env = std::getenv("MASKCL_RUN_ROOT"); env && *env) return env;
  return "runs";
}

void print_epoch(const EpochDiagnostics& d) {
  char line[256];
  std::snprintf(line, sizeof line, "epoch %d: m=%d outliers=%d k=%d lr=%.3g loss=%.4f (l_p %.4f l_c %.4f l_n %.4f)",
                d.epoch, d.m, d.n_outliers, d.k, d.lr, d.mean_loss.total, d.mean_loss.l_p, d.mean_loss.l_c,
                d.mean_loss.l_n);
  std::cout << line;
  if (d.neighbor_precision) {
    std::snprintf(line, sizeof line, " precision=%.3f", *d.neighbor_precision);
    std::cout << line;
  }
  std::cout << std::endl;
}

int cmd_train(const Options& opt) {
  const RunConfig config = resolve(opt);
  const json resolved = to_json(config);
  echo(resolved);
  if (opt.data.empty()) throw ConfigError("--data", "a dataset directory is required");
  if (!fs::exists(fs::path(opt.data) / "manifest.json"))
    throw IoError("no dataset at " + opt.data + " (manifest.json not found)");
  const fs::path run_dir = opt.run_dirs.empty() ? default_run_root() / run_dir_name(config) : fs::path(opt.run_dirs[0]);
  TrainOptions options;
  options.run_dir = run_dir;
  if (!opt.resume.empty()) {
    options.resume = load_checkpoint(opt.resume);
  } else if (fs::exists(run_dir / "checkpoints" / "final.ckpt") && !opt.force) {
    throw IoError("run directory " + run_dir.string() + " already holds a finished run; pass --force to retrain");
  }
  const DatasetManifest dataset = load_dataset(opt.data);
  fs::create_directories(run_dir);
  {
    std::ofstream out(run_dir / "config.json");
    out << resolved.dump(2) << '\n';
    if (!out) throw IoError("cannot write " + (run_dir / "config.json").string());
  }
  std::cout << "run directory " << run_dir.string() << '\n';
  options.on_epoch = print_epoch;
  const TrainResult result = run_training(dataset, config.train, options);
  std::cout << "final ";
  print_epoch(result.epochs.back());
  std::cout << "checkpoint " << (run_dir / "checkpoints" / "final.ckpt").string() << '\n';
  return 0;
}

int cmd_eval(const Options& opt) {
  const RunConfig config = resolve(opt);
  echo(json{{"eval", to_json(config)["eval"]}});
  if (opt.checkpoint.empty()) throw ConfigError("--checkpoint", "a checkpoint file is required");
  if (opt.data.empty()) throw ConfigError("--data", "a dataset directory is required");
  const Checkpoint ckpt = load_checkpoint(opt.checkpoint);
  const DatasetManifest dataset = load_dataset(opt.data);
  const EvalReport report = evaluate_model(ckpt.model, dataset, config.eval.protocol, config.eval.max_rank);
  const json doc = eval_report_json(report, sha256_file(opt.checkpoint), dataset_hash(opt.data));

  fs::path out = opt.out;
  if (out.empty()) {
    const fs::path dir = fs::path(opt.checkpoint).parent_path();
    out = (dir.filename() == "checkpoints" ? dir.parent_path() : dir) / "eval_report.json";
  }
  {
    std::ofstream file(out);
    file << doc.dump(2) << '\n';
    if (!file) throw IoError("cannot write " + out.string());
  }
  auto at = [&](int r) { return r <= static_cast<int>(report.cmc.size()) ? report.cmc[r - 1] : report.cmc.back(); };
  std::printf("%s: mAP %.4f  R1 %.4f  R5 %.4f  R10 %.4f  (%d/%d valid queries)\n", to_string(report.protocol).c_str(),
              report.map, at(1), at(5), at(10), report.n_valid_queries, report.n_queries);
  for (const auto& note : doc["notes"]) std::cout << "note: " << note.get<std::string>() << '\n';
  std::cout << "wrote " << out.string() << '\n';
  return 0;
}

int cmd_report(const Options& opt) {
  if (opt.run_dirs.empty()) throw ConfigError("--run-dir", "at least one run directory is required");
  echo(json{{"run_dirs", opt.run_dirs}, {"out", opt.out}});
  std::vector<fs::path> dirs(opt.run_dirs.begin(), opt.run_dirs.end());
  const fs::path out = opt.out.empty() ? dirs.front() / "report" : fs::path(opt.out);
  const ReportOutput result = write_report(dirs, out);
  for (const auto& notice : result.notices) std::cout << "notice: " << notice << '\n';
  for (const auto& file : result.files) std::cout << "wrote " << file.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mask-guided contrastive learning for clothes-change re-identification"};
  app.require_subcommand(1);
  Options opt;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen->add_option("--config", opt.config, "run config (JSON)");
  gen->add_option("--out,--data", opt.out, "dataset root to write")->required();
  gen->add_option("--seed", opt.seed, "override data.seed");

  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--config", opt.config, "run config (JSON)");
  train->add_option("--data", opt.data, "dataset root")->required();
  train->add_option("--run-dir", opt.run_dirs, "run directory (default: $MASKCL_RUN_ROOT/<hash>-seed<seed>)")
      ->expected(1);
  train->add_option("--seed", opt.seed, "override the seed");
  train->add_option("--ablate", opt.ablate, "no-neighbor | no-bernoulli | neighbor-feature=<fused|rgb|mask|concat>");
  train->add_option("--resume", opt.resume, "continue from this checkpoint");
  train->add_flag("--force", opt.force, "retrain over a finished run");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on query/gallery");
  eval->add_option("--config", opt.config, "run config (JSON)");
  eval->add_option("--checkpoint", opt.checkpoint, "checkpoint file")->required();
  eval->add_option("--data", opt.data, "dataset root")->required();
  eval->add_option("--protocol", opt.protocol, "general | cc")->check(CLI::IsMember({"general", "cc", "clothes_change"}));
  eval->add_option("--out", opt.out, "report path (default: <run dir>/eval_report.json)");

  auto* report = app.add_subcommand("report", "plot logs of one or more runs");
  report->add_option("--run-dir", opt.run_dirs, "run directory (repeat to overlay runs)")->required();
  report->add_option("--out", opt.out, "output directory (default: <first run>/report)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_gen_data(opt);
    if (*train) return cmd_train(opt);
    if (*eval) return cmd_eval(opt);
    if (*report) return cmd_report(opt);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
