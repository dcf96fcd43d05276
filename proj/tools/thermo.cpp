// thermo: data generation, training, evaluation, analysis, sweeps, transfer
// and reports. Exit 0 on success, 1 on runtime failure, 2 on bad usage.
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "thermo/errors.hpp"
#include "thermo/experiments.hpp"
#include "thermo/report.hpp"

using namespace thermo;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::string scale = "desk";
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out = "out";
  std::string probe = "d_state";
  double threshold = 0.5;
  bool threshold_set = false;
};

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void print_eval(const std::string& dir, const experiments::GroupResult& r) {
  std::printf("run %s%s\n", dir.c_str(), r.cached ? " (cached)" : "");
  std::printf("%s\n", r.eval.to_json().c_str());
  for (const auto& ps : r.probes) {
    const std::string name(proprio::to_string(ps.probe));
    if (ps.stats && ps.stats->valid)
      std::printf("%s: mean r %.4f  median r %.4f  frac|r|>0.3 %.4f  tau_drv %.1f  n %zu\n", name.c_str(),
                  ps.stats->mean_r, ps.stats->median_r, ps.stats->frac_sig, ps.stats->tau_drv, ps.stats->n);
    else
      std::printf("%s: %s\n", name.c_str(), ps.stats ? ps.stats->invalid_reason.c_str() : ps.error.c_str());
  }
}

// ---------------------------------------------------------------------------
// selftest

struct Tally {
  int pass = 0, fail = 0;
  void check(bool ok, const std::string& what) {
    (ok ? pass : fail)++;
    std::printf("  [%s] %s\n", ok ? "pass" : "FAIL", what.c_str());
  }
};

bool close(double a, double b, double rel = 1e-9) { return std::fabs(a - b) <= rel * std::max(1.0, std::fabs(b)); }

double gradcheck_worst(model::Arch arch) {
  model::ModelConfig c;
  c.arch = arch;
  c.d_model = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_state = 4;
  c.seed = 5;
  auto p = model::init_model(c).cast<double>();
  auto rng = mathcore::split_rng(11, "selftest");
  for (auto& x : p.data) x += 0.1 * rng.normal();
  const std::vector<taskgen::Example> batch{taskgen::make_parity("1101"), taskgen::make_parity("011")};
  const loss::LossConfig lc{0.05, 0.1, true};
  const auto grads = model::backward<double>(p, batch, lc).second;
  double worst = 0.0;
  for (const auto& t : p.layout->tensors()) {
    const std::size_t stride = std::max<std::size_t>(1, t.size / 20);
    for (std::size_t i = 0; i < t.size; i += stride) {
      const std::size_t k = t.offset + i;
      const double orig = p.data[k], eps = 1e-4;
      p.data[k] = orig + eps;
      const double up = model::backward<double>(p, batch, lc).first.total;
      p.data[k] = orig - eps;
      const double down = model::backward<double>(p, batch, lc).first.total;
      p.data[k] = orig;
      const double num = (up - down) / (2 * eps), ana = grads.data[k];
      worst = std::max(worst, std::fabs(ana - num) / std::max({std::fabs(ana), std::fabs(num), 1e-6}));
    }
  }
  return worst;
}

int selftest() {
  Tally t;
  std::printf("entropy\n");
  const std::vector<double> uniform(8, 0.7), onehot{0, 0, 3, 0};
  t.check(close(proprio::state_entropy(uniform), std::log(8.0)), "uniform state has entropy ln 8");
  t.check(proprio::state_entropy(onehot) == 0.0, "one-hot state has entropy 0");
  t.check(close(proprio::softmax_entropy(std::vector<double>(24, 1.5)), std::log(24.0)),
          "softmax of a constant vector has entropy ln 24");

  std::printf("pearson\n");
  const std::vector<double> x{1, 2, 3, 4, 5}, y{2, 4, 6, 8, 10}, z{5, 4, 3, 2, 1};
  t.check(close(proprio::pearson_r(x, y), 1.0), "perfect positive line gives r = 1");
  t.check(close(proprio::pearson_r(x, z), -1.0), "perfect negative line gives r = -1");

  std::printf("derivative cross-correlation\n");
  std::vector<double> halt, ent;
  for (int i = 0; i < 16; ++i) {
    halt.push_back(1.0 / (1.0 + std::exp(-(i - 6.0))));
    ent.push_back(2.0 - 2.0 / (1.0 + std::exp(-(i - 8.0))));
  }
  t.check(proprio::derivative_xcorr_lag(halt, ent, 5).tau == -2, "halt rise two steps early gives tau = -2");

  std::printf("mann-whitney\n");
  const std::vector<double> a{1, 2, 3}, b{4, 5, 6};
  const auto mw = proprio::mann_whitney_u(a, b);
  t.check(mw.exact && mw.u == 0.0 && close(mw.p, 0.1), "separated 3 vs 3 samples: U = 0, exact p = 0.1");

  std::printf("logsumexp\n");
  const std::vector<double> v{0.1, -0.4, 0.3}, w{100.1, 99.6, 100.3};
  t.check(close(mathcore::logsumexp(w), mathcore::logsumexp(v) + 100.0), "shift identity");
  t.check(close(mathcore::logsumexp(v), std::log(std::exp(0.1) + std::exp(-0.4) + std::exp(0.3))),
          "matches direct evaluation");

  std::printf("gradient check\n");
  for (auto arch : {model::Arch::SSM, model::Arch::Transformer}) {
    const double worst = gradcheck_worst(arch);
    char buf[96];
    std::snprintf(buf, sizeof buf, "%s analytic vs central differences, worst rel %.2e",
                  std::string(model::to_string(arch)).c_str(), worst);
    t.check(worst < 1e-3, buf);
  }
  std::printf("%d passed, %d failed\n", t.pass, t.fail);
  return t.fail ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"thermo: thermodynamic training and proprioception analysis"};
  app.require_subcommand(1);
  Common c;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", c.config, "JSON config file");
    sub->add_option("--scale", c.scale, "desk or full")->check(CLI::IsMember({"desk", "full"}));
    sub->add_option_function<std::uint64_t>(
        "--seed", [&](std::uint64_t s) { c.seed = s, c.seed_set = true; }, "random seed");
    sub->add_option("--out", c.out, "output directory");
  };

  std::string task = "parity", group = "E_ssm", run_dir, checkpoint, target = "arithmetic", dest;
  int epochs = 5;
  double lr = 3e-4;
  bool tables = false, plots = false, fresh = false;

  auto* gen = app.add_subcommand("gen-data", "write train/val/test splits");
  add_common(gen);
  gen->add_option("--task", task, "parity, sorting or arithmetic");

  auto* train = app.add_subcommand("train", "train, evaluate and analyze one group");
  add_common(train);
  train->add_option("--task", task);
  train->add_option("--group", group, "A, B, C, D, E_trans or E_ssm");
  train->add_flag("--fresh", fresh, "retrain even if a finished run exists");

  auto* ev = app.add_subcommand("eval", "evaluate a finished run's best checkpoint");
  add_common(ev);
  ev->add_option("--run", run_dir, "run directory")->required();
  ev->add_option_function<double>(
      "--threshold", [&](double v) { c.threshold = v, c.threshold_set = true; }, "halt threshold");

  auto* an = app.add_subcommand("analyze", "entropy-halt coupling of a checkpoint");
  add_common(an);
  an->add_option("--run", run_dir, "run directory (uses its best checkpoint and config)");
  an->add_option("--checkpoint", checkpoint, "checkpoint file");
  an->add_option("--task", task);
  an->add_option("--probe", c.probe, "d_state or d_model")->check(CLI::IsMember({"d_state", "d_model"}));

  auto* sw = app.add_subcommand("sweep", "alpha/beta/d_state sweep");
  add_common(sw);

  auto* tr = app.add_subcommand("transfer", "fine-tune a parity run with the halt head frozen");
  add_common(tr);
  tr->add_option("--run", run_dir, "source run directory")->required();
  tr->add_option("--target", target, "target task");
  tr->add_option("--epochs", epochs);
  tr->add_option("--lr", lr);

  auto* rep = app.add_subcommand("report", "tables and figures from run directories");
  add_common(rep);
  rep->add_option("--dest", dest, "destination (default <out>/report)");
  rep->add_flag("--tables", tables);
  rep->add_flag("--plots", plots);

  auto* self = app.add_subcommand("selftest", "math oracle checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    const auto profile = experiments::Profile::of(experiments::scale_from_string(c.scale));
    if (gen->parsed()) {
      const auto t = taskgen::task_from_string(task);
      const auto ds = experiments::make_dataset(t, profile.sizes, c.seed);
      taskgen::save_dataset(ds, c.out);
      std::printf("wrote %zu/%zu/%zu %s examples to %s\n", ds.train.size(), ds.val.size(), ds.test.size(),
                  task.c_str(), c.out.c_str());
    } else if (train->parsed()) {
      experiments::RunConfig rc;
      if (!c.config.empty()) {
        rc = experiments::RunConfig::from_json(slurp(c.config));
        if (c.seed_set) throw ConfigError("--seed conflicts with --config; the config carries its seed");
      } else {
        rc = experiments::RunConfig::make(taskgen::task_from_string(task),
                                          experiments::GroupSpec::of(experiments::group_from_string(group)), profile,
                                          c.seed);
      }
      const auto dir = experiments::run_dir_for(c.out, rc);
      print_eval(dir, experiments::run(rc, dir, !fresh));
    } else if (ev->parsed()) {
      auto rc = experiments::RunConfig::load(run_dir);
      if (c.threshold_set) rc.eval.threshold = c.threshold;
      const auto params = experiments::load_best(run_dir);
      const auto data = experiments::make_dataset(rc.task, rc.sizes, rc.seed);
      const auto r = eval::evaluate(params, data, taskgen::TierRanges::defaults(rc.task), rc.eval);
      std::printf("%s\n", r.to_json().c_str());
    } else if (an->parsed()) {
      const auto probe = proprio::probe_from_string(c.probe);
      model::Parameters params;
      taskgen::Dataset data;
      proprio::StatsOptions so = profile.stats;
      if (!run_dir.empty()) {
        const auto rc = experiments::RunConfig::load(run_dir);
        params = experiments::load_best(run_dir);
        data = experiments::make_dataset(rc.task, rc.sizes, rc.seed);
        so = rc.stats;
      } else if (!checkpoint.empty()) {
        params = model::load_checkpoint(checkpoint);
        data = experiments::make_dataset(taskgen::task_from_string(task), profile.sizes, c.seed);
        so.seed = c.seed;
      } else {
        throw ConfigError("analyze needs --run or --checkpoint");
      }
      if (probe == proprio::Probe::DState && params.config.arch != model::Arch::SSM)
        throw ConfigError("the d_state probe needs an SSM checkpoint; this one is a Transformer");
      const double acc = eval::teacher_forced_accuracy(params, data.test);
      const auto trajs = proprio::collect_trajectories(params, data.test, probe);
      const auto stats = proprio::group_stats(trajs, acc, so);
      fs::create_directories(c.out);
      std::ofstream(c.out + "/stats_" + c.probe + ".json") << stats.to_json() << "\n";
      std::ofstream csv(c.out + "/trajectories_" + c.probe + ".csv");
      proprio::write_trajectory_csv(csv, trajs);
      std::printf("%s\n", stats.to_json().c_str());
    } else if (sw->parsed()) {
      experiments::SweepSpec spec;
      if (!c.config.empty()) spec = experiments::SweepSpec::from_json(slurp(c.config));
      if (c.seed_set) spec.seeds = {c.seed};
      const auto cells = experiments::run_sweep(spec, profile, c.out);
      std::size_t failed = 0;
      for (const auto& cell : cells) {
        std::printf("%s seed %llu: %s acc %.4f f1 %.4f mean_r %s\n",
                    experiments::cell_name(cell.alpha, cell.beta, cell.d_state).c_str(),
                    static_cast<unsigned long long>(cell.seed), cell.status.c_str(), cell.accuracy, cell.halt_f1,
                    cell.mean_r ? report::fmt4(*cell.mean_r).c_str() : "-");
        failed += cell.status == "failed";
      }
      if (failed) std::fprintf(stderr, "%zu cell(s) failed; see the manifest\n", failed);
    } else if (tr->parsed()) {
      experiments::TransferOptions o;
      o.epochs = epochs;
      o.lr = lr;
      const auto src = experiments::load_group_result(run_dir);
      const auto r = experiments::cross_task_transfer(src, taskgen::task_from_string(target), o);
      std::printf("%s\n", r.to_json().c_str());
    } else if (rep->parsed()) {
      if (!tables && !plots) tables = plots = true;
      const std::string d = dest.empty() ? c.out + "/report" : dest;
      report::Written w;
      if (tables) w = report::write_tables(c.out, d);
      if (plots) {
        const auto p = report::emit_plots(c.out, d);
        w.written.insert(w.written.end(), p.written.begin(), p.written.end());
        w.skipped.insert(w.skipped.end(), p.skipped.begin(), p.skipped.end());
      }
      for (const auto& f : w.written) std::printf("wrote %s\n", f.c_str());
      for (const auto& s : w.skipped) std::printf("skipped %s\n", s.c_str());
    } else if (self->parsed()) {
      return selftest();
    }
    return 0;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error[config]: %s\n", e.what());
  } catch (const ParseError& e) {
    std::fprintf(stderr, "error[parse]: %s\n", e.what());
  } catch (const NumericError& e) {
    std::fprintf(stderr, "error[numeric]: %s\n", e.what());
  } catch (const InsufficientDataError& e) {
    std::fprintf(stderr, "error[data]: %s\n", e.what());
  } catch (const DegenerateError& e) {
    std::fprintf(stderr, "error[degenerate]: %s\n", e.what());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error[runtime]: %s\n", e.what());
  }
  return 1;
}
