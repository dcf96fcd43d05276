#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "thermo/model.hpp"
#include "thermo/taskgen.hpp"

namespace thermo::eval {

/// Teacher-forced forward passes in fixed-size chunks.
std::vector<model::ForwardTrace<float>> forward_all(const model::Parameters& params,
                                                    std::span<const taskgen::Example> examples);

/// True when the argmax prediction at every answer position matches the
/// gold answer symbol.
bool answer_correct(const model::ForwardTrace<float>& trace, const taskgen::Example& ex);
/// Stricter: every trace position (steps, answer and HALT) matches.
bool trace_correct(const model::ForwardTrace<float>& trace, const taskgen::Example& ex);

/// Fraction of examples with answer_correct.
double teacher_forced_accuracy(const model::Parameters& params, std::span<const taskgen::Example> examples);

struct GenerationScore {
  double accuracy = 0.0;
  std::size_t n = 0;
  std::size_t correct = 0;
  std::size_t truncated = 0;
  std::vector<std::uint8_t> per_example;
};

/// Greedy decoding from the prompt until HALT (or max_len generated tokens);
/// correct iff the parsed answer equals the gold answer.
GenerationScore free_generation(const model::Parameters& params, std::span<const taskgen::Example> examples,
                                const model::GenerationOptions& options);
double free_generation_accuracy(const model::Parameters& params, std::span<const taskgen::Example> examples,
                                std::size_t max_len);

struct HaltScore {
  double f1 = 0.0, precision = 0.0, recall = 0.0;
  std::size_t tp = 0, fp = 0, fn = 0;
};

/// First position in the trace window with halt_conf >= threshold, if any.
std::optional<std::size_t> predicted_stop(std::span<const float> halt_conf, const taskgen::Example& ex,
                                          double threshold);
std::optional<std::size_t> predicted_stop(std::span<const double> halt_conf, const taskgen::Example& ex,
                                          double threshold);

/// Exact-match halt scoring: a hit is a TP; a crossing elsewhere is FP + FN;
/// no crossing is FN.
HaltScore score_halts(std::span<const std::optional<std::size_t>> predicted,
                      std::span<const taskgen::Example> examples);
HaltScore halt_f1(const model::Parameters& params, std::span<const taskgen::Example> examples,
                  double threshold = 0.5);
HaltScore halt_f1(std::span<const model::ForwardTrace<float>> traces, std::span<const taskgen::Example> examples,
                  double threshold = 0.5);

/// Teacher-forced accuracy on fresh parity inputs of each length. Lengths
/// inside the training range are rejected.
std::map<int, double> ood_eval(const model::Parameters& params, std::span<const int> lengths,
                               const taskgen::TierRanges& train_ranges, std::size_t per_length, std::uint64_t seed);

struct EvalReport {
  double tf_accuracy = 0.0;
  double tf_trace_accuracy = 0.0;  // whole trace exact
  double gen_accuracy = 0.0;
  double halt_f1 = 0.0, halt_precision = 0.0, halt_recall = 0.0;
  std::map<int, double> ood_accuracy_by_length;
  std::size_t n_tf = 0, n_gen = 0, n_halt = 0, n_ood_per_length = 0;
  std::size_t gen_truncated = 0;

  std::string to_json() const;
  static EvalReport from_json(std::string_view text);
  bool operator==(const EvalReport&) const = default;
};

struct EvalOptions {
  std::size_t n_gen = 500;
  double threshold = 0.5;
  std::vector<int> ood_lengths;  // parity only
  std::size_t n_ood_per_length = 200;
  std::uint64_t seed = 0;
};

EvalReport evaluate(const model::Parameters& params, const taskgen::Dataset& data,
                    const taskgen::TierRanges& ranges, const EvalOptions& options);

/// One Table-2-shaped markdown row: group | arch | loss | tf | haltF1 | gen.
std::string table_row(const std::string& group, const std::string& arch, const std::string& loss,
                      const EvalReport& r);

}  // namespace thermo::eval
