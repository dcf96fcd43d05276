#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "thermo/loss.hpp"
#include "thermo/model.hpp"
#include "thermo/taskgen.hpp"

namespace thermo::trainer {

struct TrainConfig {
  int epochs = 15;
  double lr = 1e-3;
  int batch_size = 32;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 1.0;  // global L2 norm; <= 0 disables

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Adam with bias correction. Elements whose mask entry is 0 are never
/// touched (neither the parameter nor its moments).
class Adam {
 public:
  Adam(std::size_t n, const TrainConfig& config);

  void step(std::vector<float>& params, const std::vector<float>& grads, const std::vector<std::uint8_t>* mask = nullptr);
  std::int64_t steps() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  std::vector<double> m_, v_;
  std::int64_t t_ = 0;
};

/// Rescales grads in place so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_global_norm(std::vector<float>& grads, double max_norm);

struct EpochRecord {
  int epoch = 0;  // 1-based
  loss::LossBreakdown train;
  loss::LossBreakdown val;
  double val_tf_accuracy = 0.0;
  double val_halt_f1 = 0.0;
  double grad_norm = 0.0;  // mean pre-clip norm over the epoch
  double seconds = 0.0;
};

struct RunHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;  // 0 = initial parameters
};

struct TrainOptions {
  /// Run directory; when set, config.json, history.jsonl and checkpoints are
  /// written there.
  std::optional<std::string> run_dir;
  /// Extra fields merged into config.json.
  std::string extra_config_json = "{}";
  /// Tensors excluded from optimization.
  std::vector<std::string> frozen;
  bool validate_each_epoch = true;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  model::Parameters best;
  model::Parameters final;
  RunHistory history;
};

/// Shuffled mini-batch Adam on the thermodynamic loss. Deterministic given
/// the seeds in the model and train configs.
TrainResult train(const model::Parameters& init, const taskgen::Dataset& data, const loss::LossConfig& loss_config,
                  const TrainConfig& config, const TrainOptions& options = {});

std::string to_json(const TrainConfig& c);
TrainConfig train_config_from_json(std::string_view text);
std::string to_json(const EpochRecord& r);
std::vector<EpochRecord> read_history(const std::string& path);

}  // namespace thermo::trainer
