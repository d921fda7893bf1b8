// Command-line harness: runs experiment specs (JSON) and renders CSV
// artifacts, plus a small SVG line-chart renderer for quick looks.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hetroute/hetroute.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitSpec = 2;

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<long long> horizon;
  std::vector<std::uint64_t> seeds;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "experiment spec (JSON)")->required();
  cmd->add_option("--out", args.out_dir, "output directory (overrides spec)");
  cmd->add_option("--horizon", args.horizon, "horizon override");
  cmd->add_option("--seed", args.seeds, "seed override (repeatable)");
}

int run_kind(const CommonArgs& args, const std::vector<std::string>& allowed_kinds) {
  try {
    hetroute::ExperimentSpec spec = hetroute::load_experiment(args.config_path);
    bool ok = false;
    for (const auto& k : allowed_kinds) ok = ok || k == spec.kind;
    if (!ok) {
      std::cerr << "spec kind \"" << spec.kind << "\" does not match this subcommand\n";
      return kExitSpec;
    }
    if (!args.out_dir.empty()) spec.out_dir = args.out_dir;
    if (args.horizon) {
      if (spec.body.contains("hyper")) spec.body["hyper"]["horizon"] = *args.horizon;
      spec.body["horizon"] = *args.horizon;
      if (spec.kind == "sweep") spec.body["eval_horizon"] = *args.horizon;
    }
    if (!args.seeds.empty()) {
      spec.body["seeds"] = args.seeds;
      if (spec.body.contains("hyper")) spec.body["hyper"]["seed"] = args.seeds.front();
    }
    hetroute::run_experiment(spec);
    std::cout << "artifacts written to " << spec.out_dir << '\n';
    return kExitOk;
  } catch (const hetroute::SpecError& e) {
    std::cerr << "spec error: " << e.what() << '\n';
    return kExitSpec;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

// --- plot: CSV columns to an SVG polyline chart ---------------------------

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!cells.empty()) rows.push_back(cells);
  }
  return rows;
}

int column_index(const std::vector<std::string>& header, const std::string& name) {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  throw std::runtime_error("no column named " + name);
}

int run_plot(const std::string& in_path, const std::string& x_col,
             const std::vector<std::string>& y_cols, const std::string& out_path,
             const std::string& title) {
  try {
    auto rows = read_csv(in_path);
    if (rows.size() < 2) throw std::runtime_error("CSV has no data rows");
    const auto& header = rows.front();
    int xi = column_index(header, x_col);
    std::vector<int> yis;
    for (const auto& y : y_cols) yis.push_back(column_index(header, y));

    std::vector<double> xs;
    std::vector<std::vector<double>> ys(yis.size());
    for (std::size_t r = 1; r < rows.size(); ++r) {
      xs.push_back(std::stod(rows[r][xi]));
      for (std::size_t j = 0; j < yis.size(); ++j) ys[j].push_back(std::stod(rows[r][yis[j]]));
    }

    double xmin = xs.front(), xmax = xs.front();
    for (double v : xs) {
      xmin = std::min(xmin, v);
      xmax = std::max(xmax, v);
    }
    double ymin = ys[0][0], ymax = ys[0][0];
    for (const auto& series : ys)
      for (double v : series) {
        ymin = std::min(ymin, v);
        ymax = std::max(ymax, v);
      }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;

    const double w = 720, h = 440, ml = 70, mr = 20, mt = 40, mb = 50;
    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (w - ml - mr); };
    auto py = [&](double y) { return h - mb - (y - ymin) / (ymax - ymin) * (h - mt - mb); };
    const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

    std::ofstream svg(out_path);
    if (!svg) throw std::runtime_error("cannot open " + out_path);
    svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h << "'>\n";
    svg << "<rect width='100%' height='100%' fill='white'/>\n";
    svg << "<text x='" << w / 2 << "' y='24' text-anchor='middle' font-size='16'>" << title
        << "</text>\n";
    svg << "<line x1='" << ml << "' y1='" << h - mb << "' x2='" << w - mr << "' y2='" << h - mb
        << "' stroke='black'/>\n";
    svg << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << h - mb
        << "' stroke='black'/>\n";
    for (int tick = 0; tick <= 4; ++tick) {
      double xv = xmin + (xmax - xmin) * tick / 4.0;
      double yv = ymin + (ymax - ymin) * tick / 4.0;
      svg << "<text x='" << px(xv) << "' y='" << h - mb + 18
          << "' text-anchor='middle' font-size='11'>" << hetroute::csv_num(xv) << "</text>\n";
      svg << "<text x='" << ml - 8 << "' y='" << py(yv) + 4
          << "' text-anchor='end' font-size='11'>" << hetroute::csv_num(yv) << "</text>\n";
    }
    svg << "<text x='" << (ml + w - mr) / 2 << "' y='" << h - 12
        << "' text-anchor='middle' font-size='12'>" << x_col << "</text>\n";
    for (std::size_t j = 0; j < ys.size(); ++j) {
      svg << "<polyline fill='none' stroke='" << colors[j % 6] << "' stroke-width='1.5' points='";
      for (std::size_t i = 0; i < xs.size(); ++i)
        svg << px(xs[i]) << ',' << py(ys[j][i]) << ' ';
      svg << "'/>\n";
      svg << "<text x='" << w - mr - 8 << "' y='" << mt + 16 * (j + 1)
          << "' text-anchor='end' font-size='12' fill='" << colors[j % 6] << "'>" << y_cols[j]
          << "</text>\n";
    }
    svg << "</svg>\n";
    std::cout << "wrote " << out_path << '\n';
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "plot error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hetroute: routing policies for heterogeneous server queues"};
  app.require_subcommand(1);
  app.set_version_flag("--version", hetroute::kVersion);

  CommonArgs rvi_args, train_args, sim_args, cmp_args, ver_args, sweep_args;
  auto* rvi = app.add_subcommand("rvi", "exact solve: value iteration, thresholds, summary");
  add_common(rvi, rvi_args);
  auto* train = app.add_subcommand("train", "actor-critic training (average or discounted cost)");
  add_common(train, train_args);
  auto* sim = app.add_subcommand("simulate", "Monte Carlo evaluation of one policy");
  add_common(sim, sim_args);
  auto* cmp = app.add_subcommand("compare", "simulate several policies side by side");
  add_common(cmp, cmp_args);
  auto* ver = app.add_subcommand("verify2", "two-server structure checks");
  add_common(ver, ver_args);
  auto* sweep = app.add_subcommand("sweep", "train + evaluate across an axis");
  add_common(sweep, sweep_args);

  std::string plot_in, plot_x, plot_out = "plot.svg", plot_title;
  std::vector<std::string> plot_y;
  auto* plot = app.add_subcommand("plot", "render CSV columns as an SVG line chart");
  plot->add_option("--in", plot_in, "input CSV")->required();
  plot->add_option("--x", plot_x, "x column name")->required();
  plot->add_option("--y", plot_y, "y column names")->required();
  plot->add_option("--out", plot_out, "output SVG path");
  plot->add_option("--title", plot_title, "chart title");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitSpec;
  }

  if (rvi->parsed()) return run_kind(rvi_args, {"rvi"});
  if (train->parsed()) return run_kind(train_args, {"train", "train-discounted"});
  if (sim->parsed()) return run_kind(sim_args, {"simulate"});
  if (cmp->parsed()) return run_kind(cmp_args, {"compare"});
  if (ver->parsed()) return run_kind(ver_args, {"verify2"});
  if (sweep->parsed()) return run_kind(sweep_args, {"sweep"});
  if (plot->parsed()) return run_plot(plot_in, plot_x, plot_y, plot_out, plot_title);
  return kExitSpec;
}
