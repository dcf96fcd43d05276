#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "doctest.h"
#include "thermo/report.hpp"

using namespace thermo;
using namespace thermo::report;
namespace fs = std::filesystem;

namespace {

std::string tmp_dir(const std::string& name) {
  const std::string d = std::string(THERMO_TEST_TMP) + "/report/" + name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

experiments::Profile tiny_profile() {
  auto p = experiments::Profile::desk();
  p.model.d_model = 16;
  p.model.n_layers = 1;
  p.model.n_heads = 2;
  p.model.d_state = 4;
  p.train.epochs = 1;
  p.train.batch_size = 16;
  p.sizes = {80, 30, 30};
  p.eval.n_gen = 10;
  p.eval.ood_lengths = {9};
  p.eval.n_ood_per_length = 10;
  p.stats.resamples = 100;
  p.stats.accuracy_gate = 0.0;
  return p;
}

std::size_t count(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = s.find(needle); pos != std::string::npos; pos = s.find(needle, pos + 1)) ++n;
  return n;
}

}  // namespace

TEST_CASE("fmt4") {
  CHECK(fmt4(0.5) == "0.5000");
  CHECK(fmt4(-0.12345) == "-0.1235");
  CHECK(fmt4(std::numeric_limits<double>::quiet_NaN()) == "-");
}

TEST_CASE("histogram counts sum to the number of finite values") {
  auto rng = mathcore::split_rng(1, "hist");
  std::vector<double> v(1000);
  for (auto& x : v) x = rng.normal() * 0.6;
  v.push_back(std::numeric_limits<double>::quiet_NaN());
  const auto h = histogram(v, 20, -1, 1);
  REQUIRE(h.size() == 20);
  std::size_t total = 0;
  for (auto c : h) total += c;
  CHECK(total == 1000);
  const std::vector<double> edges{-1.0, 1.0, 0.0, 5.0, -5.0};
  const auto e = histogram(edges, 4, -1, 1);
  CHECK(e[0] == 2);
  CHECK(e[2] == 1);
  CHECK(e[3] == 2);
}

TEST_CASE("table rendering") {
  Table t;
  t.header = {"group", "value"};
  t.rows = {{"A", "0.5000"}, {"x,y", "say \"hi\""}, {"p|q", "-"}};
  const auto csv = t.to_csv();
  CHECK(csv == "group,value\nA,0.5000\n\"x,y\",\"say \"\"hi\"\"\"\np|q,-\n");
  const auto md = t.to_markdown();
  CHECK(md.rfind("| group | value |\n|---|---|\n", 0) == 0);
  CHECK(md.find("p\\|q") != std::string::npos);
  CHECK(count(md, "\n") == 5);
}

TEST_CASE("sweep grid and heatmap agree with the CSV") {
  const auto dir = tmp_dir("grid");
  const auto path = dir + "/sweep.csv";
  {
    std::ofstream f(path);
    f << "alpha,beta,d_state,seed,status,accuracy,halt_f1,mean_r,tau_drv,run_dir\n";
    f << "0.0000,0.0000,8,0,done,1,1,-0.2,0,x\n";
    f << "0.0000,0.0000,8,1,done,1,1,-0.4,0,x\n";
    f << "0.0000,0.0000,8,2,done,1,1,-0.9,0,x\n";
    f << "0.0500,0.0000,8,0,gated,0.5,0,,,x\n";
    f << "0.0100,0.1000,8,0,done,1,1,0.3,1,x\n";
    f << "0.0100,0.0000,16,0,done,1,1,0.7,1,x\n";
  }
  const auto g = read_sweep_grid(path, 8);
  CHECK(g.alphas == std::vector<double>{0.0, 0.01, 0.05});
  CHECK(g.betas == std::vector<double>{0.0, 0.1});
  CHECK(g.mean_r[0][0] == doctest::Approx(-0.4));  // median over seeds
  CHECK(std::isnan(g.mean_r[0][2]));
  CHECK(std::isnan(g.mean_r[0][1]));
  CHECK(g.mean_r[1][1] == doctest::Approx(0.3));
  const auto svg = heatmap_svg(g, "grid");
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("-0.4000") != std::string::npos);
  CHECK(svg.find("0.3000") != std::string::npos);
  CHECK(read_sweep_grid(path, 16).mean_r[0][0] == doctest::Approx(0.7));
}

TEST_CASE("svg builders produce documents") {
  std::vector<TrajectoryRow> rows;
  for (std::size_t e = 0; e < 3; ++e)
    for (std::size_t t = 0; t < 6; ++t) rows.push_back({e, t, 2.0 - 0.1 * t, 0.1 * t, t % 2 ? "ORBITING" : "CONVERGING"});
  const std::vector<double> vals{0.1, -0.2, 0.3};
  for (const auto& svg : {trajectory_svg(rows, "t", 2), regime_timeline_svg(rows, "r", 2),
                          histogram_svg(vals, 5, "h"), bars_svg({"a", "b"}, {"s1", "s2"}, {{0.5, 0.7}, {0.2, 0.9}}, "b"),
                          lag_curve_svg({"x"}, {{0.0, 0.5, 1.0}}, 1, "l")}) {
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("</svg>") != std::string::npos);
  }
}

TEST_CASE("tables and plots from a run tree") {
  const auto out = tmp_dir("tree");
  const auto p = tiny_profile();
  experiments::run_group(experiments::GroupSpec::of(experiments::GroupId::C), taskgen::Task::Parity, p, 0, out);
  experiments::run_group(experiments::GroupSpec::of(experiments::GroupId::C), taskgen::Task::Parity, p, 1, out);
  experiments::run_group(experiments::GroupSpec::of(experiments::GroupId::A), taskgen::Task::Parity, p, 0, out);

  const auto runs = scan_runs(out, taskgen::Task::Parity);
  REQUIRE(runs.size() == 3);
  CHECK(runs[0].config.group.name == "A");
  CHECK(runs[1].config.seed == 0);
  CHECK(runs[2].config.seed == 1);
  const auto t = task_table(runs);
  CHECK(t.header.back() == "ood_9");
  CHECK(t.rows.size() == 4);  // A/0, C/0, C/1, C median
  CHECK(t.rows[3][3] == "median");
  CHECK(t.rows[1][4] == fmt4(runs[1].eval.tf_accuracy));

  const auto dest = out + "/tables";
  const auto w = write_tables(out, dest);
  CHECK(fs::exists(dest + "/table2_parity.csv"));
  CHECK(fs::exists(dest + "/table3_parity.md"));
  CHECK(!fs::exists(dest + "/table2_sorting.csv"));
  CHECK(!w.skipped.empty());
  std::ifstream f(dest + "/table2_parity.csv");
  std::stringstream ss;
  ss << f.rdbuf();
  CHECK(ss.str() == t.to_csv());

  const auto plots = emit_plots(out, out + "/plots");
  CHECK(fs::exists(out + "/plots/A1_trajectories_parity_C_seed0.svg"));
  CHECK(fs::exists(out + "/plots/A12_lag_curves_parity.svg"));
  for (const auto& path : plots.written) CHECK(fs::file_size(path) > 0);

  const auto dump = read_trajectory_csv(runs[1].run_dir + "/trajectories_d_state.csv");
  CHECK(!dump.empty());
  CHECK(!dump[0].regime.empty());
  CHECK(scan_transfers(out).empty());
}
