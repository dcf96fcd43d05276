#include <filesystem>

#include "doctest.h"
#include "thermo/report.hpp"

using namespace thermo;
namespace fs = std::filesystem;

TEST_CASE("data, training, evaluation, coupling, regimes, veto and report on one small run") {
  const std::string out = std::string(THERMO_TEST_TMP) + "/integration";
  fs::remove_all(out);

  auto p = experiments::Profile::desk();
  p.model.d_model = 32;
  p.model.n_layers = 1;
  p.model.n_heads = 2;
  p.model.d_state = 4;
  p.train.epochs = 6;
  p.train.batch_size = 16;
  p.train.lr = 3e-3;
  p.sizes = {400, 100, 100};
  p.eval.n_gen = 60;
  p.eval.ood_lengths = {9};
  p.eval.n_ood_per_length = 20;
  p.stats.resamples = 500;
  p.stats.accuracy_gate = 0.0;

  const auto r = experiments::run_group(experiments::GroupSpec::of(experiments::GroupId::D), taskgen::Task::Parity, p,
                                        0, out);
  const auto history = trainer::read_history(r.run_dir + "/history.jsonl");
  REQUIRE(history.size() == 6);
  CHECK(history.back().train.ce < history.front().train.ce);

  CHECK(r.eval.n_tf == 100);
  CHECK(r.eval.n_gen == 60);
  CHECK(r.eval.tf_trace_accuracy <= r.eval.tf_accuracy);
  CHECK(r.eval.halt_f1 >= 0.0);
  CHECK(r.eval.halt_f1 <= 1.0);
  CHECK(r.eval.ood_accuracy_by_length.count(9) == 1);

  const auto* ds = r.probe(proprio::Probe::DState);
  REQUIRE(ds);
  REQUIRE(ds->stats.has_value());
  CHECK(ds->stats->valid);
  CHECK(ds->stats->n + ds->stats->excluded == 100);
  CHECK(ds->stats->ci_low <= ds->stats->mean_r);
  CHECK(ds->stats->mean_r <= ds->stats->ci_high);

  const auto rows = report::read_trajectory_csv(r.run_dir + "/trajectories_d_state.csv");
  CHECK(!rows.empty());
  for (const auto& row : rows) REQUIRE(!row.regime.empty());

  experiments::VetoOptions vo;
  vo.max_len = 48;
  const auto v = experiments::veto_experiment(r, vo);
  CHECK(v.n_generations == 60);
  CHECK(v.delta == doctest::Approx(v.veto_accuracy - v.baseline_accuracy));
  CHECK(fs::exists(r.run_dir + "/veto.json"));

  const auto w = report::write_tables(out, out + "/report");
  CHECK(fs::exists(out + "/report/table2_parity.md"));
  CHECK(!w.written.empty());
}
