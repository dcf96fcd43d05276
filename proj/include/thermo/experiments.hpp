#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "thermo/eval.hpp"
#include "thermo/loss.hpp"
#include "thermo/model.hpp"
#include "thermo/proprio.hpp"
#include "thermo/regime.hpp"
#include "thermo/taskgen.hpp"
#include "thermo/trainer.hpp"

namespace thermo::experiments {

enum class GroupId { A, B, C, D, E_trans, E_ssm, Custom };

std::string_view to_string(GroupId g);
GroupId group_from_string(std::string_view s);

/// One cell of the architecture x objective design.
struct GroupSpec {
  GroupId id = GroupId::A;
  model::Arch arch = model::Arch::Transformer;
  loss::LossConfig loss;
  std::string name;  // directory name; the group id unless Custom

  /// A, C: cross-entropy. B, D: alpha = 0.05. E_trans, E_ssm: beta = 0.10.
  static GroupSpec of(GroupId id);
  static GroupSpec custom(std::string name, model::Arch arch, double alpha, double beta);
  std::string loss_name() const;  // "CE", "L_th", "CE+halt" or "a=..,b=.."
};

enum class Scale { Desk, Full };
std::string_view to_string(Scale s);
Scale scale_from_string(std::string_view s);

/// Everything except the group and task that defines a run.
struct Profile {
  Scale scale = Scale::Desk;
  model::ModelConfig model;  // arch and seed are filled per run
  trainer::TrainConfig train;
  taskgen::SplitSizes sizes;
  std::vector<std::uint64_t> seeds;
  eval::EvalOptions eval;
  proprio::StatsOptions stats;

  /// d_model 64, 2 layers, d_state 8, 4 heads, 2000/500/500, 15 epochs,
  /// batch 32, seeds 0-2.
  static Profile desk();
  /// d_model 512, 6 layers, d_state 16, 8 heads, 8000/1000/1000, 40 epochs.
  static Profile full();
  static Profile of(Scale s);
};

/// Complete description of one training run. Echoed as config.json into the
/// run directory; run_config_from_json rejects unknown keys.
struct RunConfig {
  taskgen::Task task = taskgen::Task::Parity;
  GroupSpec group;
  Scale scale = Scale::Desk;
  std::uint64_t seed = 0;
  model::ModelConfig model;
  trainer::TrainConfig train;
  taskgen::SplitSizes sizes;
  eval::EvalOptions eval;
  proprio::StatsOptions stats;

  static RunConfig make(taskgen::Task task, const GroupSpec& group, const Profile& profile, std::uint64_t seed);
  std::string to_json() const;
  static RunConfig from_json(std::string_view text);
  /// Reads a run directory's config.json.
  static RunConfig load(const std::string& run_dir);
};

taskgen::Dataset make_dataset(taskgen::Task task, const taskgen::SplitSizes& sizes, std::uint64_t seed);

/// Coupling statistics for one probe, or why they are missing.
struct ProbeStats {
  proprio::Probe probe = proprio::Probe::DModel;
  std::optional<proprio::CorrelationStats> stats;
  std::string error;
};

struct GroupResult {
  RunConfig config;
  std::string run_dir;
  eval::EvalReport eval;
  std::vector<ProbeStats> probes;
  bool cached = false;

  const ProbeStats* probe(proprio::Probe p) const;
};

/// <out>/<task>/<group name>/seed<N>
std::string run_dir_for(const std::string& out_root, const RunConfig& rc);

/// Trains (or reuses a completed directory with an identical config),
/// evaluates on the test split and computes coupling stats per probe.
/// Writes config.json, history.jsonl, checkpoints, eval.json,
/// stats_<probe>.json and trajectories_<probe>.csv.
GroupResult run(const RunConfig& rc, const std::string& run_dir, bool reuse = true);
GroupResult run_group(const GroupSpec& spec, taskgen::Task task, const Profile& profile, std::uint64_t seed,
                      const std::string& out_root, bool reuse = true);
/// Reads a finished run directory without retraining.
GroupResult load_group_result(const std::string& run_dir);
model::Parameters load_best(const std::string& run_dir);

/// Stats for a trained model on a given example set.
std::vector<ProbeStats> analyze(const model::Parameters& params, std::span<const taskgen::Example> examples,
                                double accuracy, const proprio::StatsOptions& options,
                                const std::string& dump_dir = "");

// ---------------------------------------------------------------------------
// Sweeps

struct SweepSpec {
  taskgen::Task task = taskgen::Task::Parity;
  std::vector<double> alphas{0.0, 0.01, 0.03, 0.05};
  std::vector<double> betas{0.0};
  std::vector<int> d_states;  // empty: profile d_state only
  std::vector<std::uint64_t> seeds{0};
  double accuracy_gate = 0.99;

  std::string to_json() const;
  static SweepSpec from_json(std::string_view text);
};

struct SweepCell {
  double alpha = 0.0, beta = 0.0;
  int d_state = 0;
  std::uint64_t seed = 0;
  std::string status = "pending";  // pending | done | gated | failed
  std::string error;
  std::string run_dir;
  double accuracy = 0.0, halt_f1 = 0.0;
  std::optional<double> mean_r, tau_drv;  // DState probe, only when not gated
};

/// Cell directory name, fixed 4-decimal numbers: a0.0100_b0.0000_s8
std::string cell_name(double alpha, double beta, int d_state);

/// Runs every cell on a pool of PROPRIO_WORKERS threads (default 1);
/// failed cells are recorded and the sweep continues. Writes
/// <out>/<task>/sweep/manifest.json and sweep.csv.
std::vector<SweepCell> run_sweep(const SweepSpec& spec, const Profile& profile, const std::string& out_root);
std::size_t worker_count();

// ---------------------------------------------------------------------------
// Transfer, cross-domain, veto

struct TransferOptions {
  int epochs = 5;
  double lr = 3e-4;
  std::vector<std::string> frozen{"head.halt.w", "head.halt.b"};
};

struct TransferResult {
  std::string group;
  model::Arch arch = model::Arch::SSM;
  std::uint64_t seed = 0;
  double source_f1 = 0.0, zero_shot_f1 = 0.0, post_f1 = 0.0, delta = 0.0;
  double post_tf_accuracy = 0.0;
  bool halt_unchanged = false;

  std::string to_json() const;
  static TransferResult from_json(std::string_view text);
};

/// Fine-tunes a finished parity run on `target` with the halt head frozen
/// and the source group's loss. Throws std::logic_error if a frozen tensor
/// changes. Writes <source run>/transfer_<task>/.
TransferResult cross_task_transfer(const GroupResult& source, taskgen::Task target, const TransferOptions& options,
                                   bool reuse = true);

struct CrossDomainResult {
  std::vector<GroupResult> sorting;  // fresh C, D, E_ssm on sorting
  std::optional<proprio::CorrelationStats> zero_shot;  // parity E_ssm on sorting, ungated
  std::optional<proprio::CorrelationStats> few_shot;   // after tuning on 500 sorting examples
  std::string zero_shot_error, few_shot_error;
};
CrossDomainResult cross_domain(const Profile& profile, std::uint64_t seed, const std::string& out_root,
                               const GroupResult* parity_e_ssm);

struct VetoOptions {
  regime::VetoConfig veto;
  regime::ConfusionTrainOptions train;
  std::size_t max_len = 128;
};

struct VetoResult {
  double baseline_accuracy = 0.0, veto_accuracy = 0.0, delta = 0.0;
  regime::ClassifierScore head_train, head_test;
  std::size_t n_train = 0, n_test = 0, n_train_pos = 0, n_test_pos = 0, n_generations = 0;
  double orbiting_fraction = 0.0;  // generations with any ORBITING position
  std::string to_json() const;
};

/// Confusion head trained on validation-split generations, scored on
/// test-split generations; accuracy compares the confidence policy with
/// the veto controller on the test split. Writes <run>/veto.json.
VetoResult veto_experiment(const GroupResult& source, const VetoOptions& options);

}  // namespace thermo::experiments
