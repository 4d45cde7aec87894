#include "maskcl/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "maskcl/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace maskcl {

RunLog read_run_log(const fs::path& run_dir) {
  RunLog log;
  log.name = run_dir.filename().empty() ? run_dir.parent_path().filename().string() : run_dir.filename().string();
  const fs::path csv = run_dir / "train_log.csv";
  const fs::path jsonl = run_dir / "structure_log.jsonl";
  std::ifstream steps(csv);
  if (!steps) throw IoError("missing log " + csv.string());
  std::ifstream structure(jsonl);
  if (!structure) throw IoError("missing log " + jsonl.string());

  std::string line;
  std::getline(steps, line);
  if (line != "epoch,step,l_p,l_c,l_n,total") throw SchemaError(csv.string() + " has an unexpected header");
  while (std::getline(steps, line)) {
    if (line.empty()) continue;
    StepRecord r;
    if (std::sscanf(line.c_str(), "%d,%ld,%lf,%lf,%lf,%lf", &r.epoch, &r.step, &r.l_p, &r.l_c, &r.l_n, &r.total) != 6)
      throw SchemaError(csv.string() + ": malformed row '" + line + "'");
    log.steps.push_back(r);
  }
  while (std::getline(structure, line)) {
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      StructureRecord r;
      r.epoch = j.at("epoch").get<int>();
      r.m = j.at("m").get<int>();
      r.n_outliers = j.at("n_outliers").get<int>();
      r.k = j.at("k").get<int>();
      r.mean_neighbor_sim = j.at("mean_neighbor_sim").get<double>();
      if (j.contains("neighbor_precision") && !j["neighbor_precision"].is_null())
        r.neighbor_precision = j["neighbor_precision"].get<double>();
      log.epochs.push_back(r);
    } catch (const json::exception& e) {
      throw SchemaError(jsonl.string() + ": " + e.what());
    }
  }
  return log;
}

namespace {

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;
  std::string color;
  bool dashed = false;
};

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

void write_svg(const fs::path& path, const std::string& title, const std::string& x_label,
               const std::vector<Series>& series) {
  constexpr double W = 720, H = 420, left = 70, right = 200, top = 40, bottom = 50;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      x0 = std::min(x0, x), x1 = std::max(x1, x);
      y0 = std::min(y0, y), y1 = std::max(y1, y);
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad, y1 += pad;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * (W - left - right); };
  auto py = [&](double y) { return H - bottom - (y - y0) / (y1 - y0) * (H - top - bottom); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n"
      << "<line x1=\"" << left << "\" y1=\"" << H - bottom << "\" x2=\"" << W - right << "\" y2=\"" << H - bottom
      << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << H - bottom
      << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = y0 + (y1 - y0) * i / 4.0, xv = x0 + (x1 - x0) * i / 4.0;
    svg << "<text x=\"" << left - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << fmt(yv) << "</text>\n"
        << "<line x1=\"" << left << "\" y1=\"" << py(yv) << "\" x2=\"" << W - right << "\" y2=\"" << py(yv)
        << "\" stroke=\"#ddd\"/>\n"
        << "<text x=\"" << px(xv) << "\" y=\"" << H - bottom + 16 << "\" text-anchor=\"middle\">" << fmt(xv)
        << "</text>\n";
  }
  svg << "<text x=\"" << (left + W - right) / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">" << x_label
      << "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const Series& s = series[i];
    svg << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\""
        << (s.dashed ? " stroke-dasharray=\"5,3\"" : "") << " points=\"";
    for (const auto& [x, y] : s.points) svg << fmt(px(x)) << ',' << fmt(py(y)) << ' ';
    svg << "\"/>\n";
    const double ly = top + 16.0 * static_cast<double>(i);
    svg << "<line x1=\"" << W - right + 10 << "\" y1=\"" << ly << "\" x2=\"" << W - right + 30 << "\" y2=\"" << ly
        << "\" stroke=\"" << s.color << "\" stroke-width=\"2\"" << (s.dashed ? " stroke-dasharray=\"5,3\"" : "")
        << "/>\n<text x=\"" << W - right + 36 << "\" y=\"" << ly + 4 << "\">" << s.label << "</text>\n";
  }
  svg << "</svg>\n";
  std::ofstream out(path);
  if (!out || !(out << svg.str())) throw IoError("cannot write " + path.string());
}

}  // namespace

ReportOutput write_report(const std::vector<fs::path>& run_dirs, const fs::path& out_dir) {
  if (run_dirs.empty()) throw IoError("no run directories given");
  std::vector<RunLog> runs;
  for (const fs::path& dir : run_dirs) runs.push_back(read_run_log(dir));
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  ReportOutput output;
  const bool overlay = runs.size() > 1;
  auto label = [&](const RunLog& run, const std::string& what) { return overlay ? run.name + " " + what : what; };

  std::vector<Series> loss;
  for (std::size_t r = 0; r < runs.size(); ++r) {
    const char* names[] = {"l_p", "l_c", "l_n", "total"};
    for (int c = 0; c < 4; ++c) {
      Series s{label(runs[r], names[c]), {}, overlay ? kPalette[r % 8] : kPalette[c], overlay && c != 3};
      for (const StepRecord& st : runs[r].steps) {
        const double values[] = {st.l_p, st.l_c, st.l_n, st.total};
        s.points.emplace_back(static_cast<double>(st.step), values[c]);
      }
      if (!overlay || c == 3) loss.push_back(std::move(s));
    }
  }
  write_svg(out_dir / "loss.svg", overlay ? "total loss per step" : "loss components per step", "step", loss);
  output.files.push_back(out_dir / "loss.svg");

  std::vector<Series> ks, precision;
  for (std::size_t r = 0; r < runs.size(); ++r) {
    Series k{label(runs[r], "k"), {}, kPalette[r % 8], false};
    Series p{label(runs[r], "neighbor precision"), {}, kPalette[r % 8], false};
    for (const StructureRecord& e : runs[r].epochs) {
      k.points.emplace_back(e.epoch, e.k);
      if (e.neighbor_precision) p.points.emplace_back(e.epoch, *e.neighbor_precision);
    }
    ks.push_back(std::move(k));
    if (!p.points.empty()) precision.push_back(std::move(p));
  }
  write_svg(out_dir / "k.svg", "neighbour search range k per epoch", "epoch", ks);
  output.files.push_back(out_dir / "k.svg");
  if (precision.empty()) {
    output.notices.push_back("no neighbor_precision values (runs without identity labels); precision plot skipped");
  } else {
    write_svg(out_dir / "neighbor_precision.svg", "neighbour precision per epoch", "epoch", precision);
    output.files.push_back(out_dir / "neighbor_precision.svg");
  }

  std::ostringstream md;
  md << "# Run summary\n\n"
     << "| run | epochs | steps | final m | final outliers | final k | first precision | final precision | "
        "final total loss | eval |\n"
     << "|---|---|---|---|---|---|---|---|---|---|\n";
  for (std::size_t r = 0; r < runs.size(); ++r) {
    const RunLog& run = runs[r];
    auto precision_text = [](const std::optional<double>& p) { return p ? fmt(*p) : std::string("n/a"); };
    std::string eval_text = "n/a";
    std::ifstream report(run_dirs[r] / "eval_report.json");
    if (report) {
      try {
        const json j = json::parse(report);
        eval_text = j.at("protocol").get<std::string>() + " mAP " + fmt(j.at("map").get<double>()) + ", R1 " +
                    fmt(j.at("cmc").at(0).get<double>());
      } catch (const json::exception&) {
        eval_text = "unreadable";
      }
    }
    const StructureRecord last = run.epochs.empty() ? StructureRecord{} : run.epochs.back();
    md << "| " << run.name << " | " << run.epochs.size() << " | " << run.steps.size() << " | " << last.m << " | "
       << last.n_outliers << " | " << last.k << " | "
       << precision_text(run.epochs.empty() ? std::nullopt : run.epochs.front().neighbor_precision) << " | "
       << precision_text(last.neighbor_precision) << " | "
       << (run.steps.empty() ? std::string("n/a") : fmt(run.steps.back().total)) << " | " << eval_text << " |\n";
  }
  for (const std::string& notice : output.notices) md << "\n> " << notice << '\n';
  std::ofstream summary(out_dir / "summary.md");
  if (!summary || !(summary << md.str())) throw IoError("cannot write " + (out_dir / "summary.md").string());
  output.files.push_back(out_dir / "summary.md");
  return output;
}

}  // namespace maskcl
