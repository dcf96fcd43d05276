#include "thermo/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "json.hpp"
#include "thermo/errors.hpp"

namespace thermo::eval {

using nlohmann::json;

namespace {

constexpr std::size_t kChunk = 64;

template <class T>
std::optional<std::size_t> first_crossing(std::span<const T> conf, const taskgen::Example& ex, double threshold) {
  if (conf.size() != ex.length()) throw DomainError("halt series does not match example length");
  for (std::size_t t = ex.prompt.size() - 1; t < conf.size(); ++t)
    if (static_cast<double>(conf[t]) >= threshold) return t;
  return std::nullopt;
}

}  // namespace

std::vector<model::ForwardTrace<float>> forward_all(const model::Parameters& params,
                                                    std::span<const taskgen::Example> examples) {
  std::vector<model::ForwardTrace<float>> out;
  out.reserve(examples.size());
  for (std::size_t lo = 0; lo < examples.size(); lo += kChunk) {
    const std::size_t hi = std::min(examples.size(), lo + kChunk);
    std::vector<std::vector<taskgen::Token>> seqs;
    for (std::size_t i = lo; i < hi; ++i) seqs.push_back(examples[i].tokens());
    for (auto& tr : model::forward_batch<float>(params, seqs)) out.push_back(std::move(tr));
  }
  return out;
}

namespace {

bool predicts(const model::ForwardTrace<float>& trace, std::span<const taskgen::Token> tokens, std::size_t i) {
  const auto row = trace.logits_at(i - 1);
  return std::max_element(row.begin(), row.end()) - row.begin() == tokens[i];
}

}  // namespace

bool answer_correct(const model::ForwardTrace<float>& trace, const taskgen::Example& ex) {
  const auto tokens = ex.tokens();
  if (trace.length != tokens.size()) throw DomainError("trace does not match example");
  const std::size_t first = ex.optimal_stop + 1 - ex.answer.size();
  for (std::size_t i = first; i <= ex.optimal_stop; ++i)
    if (!predicts(trace, tokens, i)) return false;
  return true;
}

bool trace_correct(const model::ForwardTrace<float>& trace, const taskgen::Example& ex) {
  const auto tokens = ex.tokens();
  if (trace.length != tokens.size()) throw DomainError("trace does not match example");
  for (std::size_t i = ex.prompt.size(); i < tokens.size(); ++i)
    if (!predicts(trace, tokens, i)) return false;
  return true;
}

double teacher_forced_accuracy(const model::Parameters& params, std::span<const taskgen::Example> examples) {
  if (examples.empty()) throw DomainError("accuracy over an empty example set");
  const auto traces = forward_all(params, examples);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) ok += answer_correct(traces[i], examples[i]);
  return static_cast<double>(ok) / static_cast<double>(examples.size());
}

GenerationScore free_generation(const model::Parameters& params, std::span<const taskgen::Example> examples,
                                const model::GenerationOptions& options) {
  GenerationScore s;
  s.n = examples.size();
  s.per_example.assign(examples.size(), 0);
  std::vector<std::uint8_t> truncated(examples.size(), 0);
  const auto n = static_cast<std::ptrdiff_t>(examples.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t ii = 0; ii < n; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const auto g = model::generate(params, examples[i].prompt, options);
    const auto ans = taskgen::parse_answer(g.generated);
    s.per_example[i] = ans && *ans == examples[i].answer;
    truncated[i] = g.truncated;
  }
  for (std::size_t i = 0; i < examples.size(); ++i) {
    s.correct += s.per_example[i];
    s.truncated += truncated[i];
  }
  s.accuracy = s.n ? static_cast<double>(s.correct) / static_cast<double>(s.n) : 0.0;
  return s;
}

double free_generation_accuracy(const model::Parameters& params, std::span<const taskgen::Example> examples,
                                std::size_t max_len) {
  model::GenerationOptions o;
  o.max_len = max_len;
  return free_generation(params, examples, o).accuracy;
}

std::optional<std::size_t> predicted_stop(std::span<const float> halt_conf, const taskgen::Example& ex,
                                          double threshold) {
  return first_crossing(halt_conf, ex, threshold);
}

std::optional<std::size_t> predicted_stop(std::span<const double> halt_conf, const taskgen::Example& ex,
                                          double threshold) {
  return first_crossing(halt_conf, ex, threshold);
}

HaltScore score_halts(std::span<const std::optional<std::size_t>> predicted,
                      std::span<const taskgen::Example> examples) {
  if (predicted.size() != examples.size()) throw DomainError("prediction count differs from example count");
  HaltScore s;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (!predicted[i]) {
      ++s.fn;
    } else if (*predicted[i] == examples[i].optimal_stop) {
      ++s.tp;
    } else {
      ++s.fp;
      ++s.fn;
    }
  }
  if (s.tp > 0) {
    s.precision = static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fp);
    s.recall = static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fn);
    s.f1 = 2 * s.precision * s.recall / (s.precision + s.recall);
  }
  return s;
}

HaltScore halt_f1(std::span<const model::ForwardTrace<float>> traces, std::span<const taskgen::Example> examples,
                  double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw DomainError("threshold must lie in (0, 1)");
  std::vector<std::optional<std::size_t>> pred;
  pred.reserve(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i)
    pred.push_back(predicted_stop(std::span<const float>(traces[i].halt_conf), examples[i], threshold));
  return score_halts(pred, examples);
}

HaltScore halt_f1(const model::Parameters& params, std::span<const taskgen::Example> examples, double threshold) {
  const auto traces = forward_all(params, examples);
  return halt_f1(traces, examples, threshold);
}

std::map<int, double> ood_eval(const model::Parameters& params, std::span<const int> lengths,
                               const taskgen::TierRanges& train_ranges, std::size_t per_length, std::uint64_t seed) {
  std::map<int, double> out;
  for (int len : lengths) {
    if (train_ranges.tier_of(len) != taskgen::Tier::OOD)
      throw DomainError("length " + std::to_string(len) + " lies inside the training range");
    const auto examples = taskgen::ood_parity(len, per_length, seed);
    out[len] = teacher_forced_accuracy(params, examples);
  }
  return out;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["tf_accuracy"] = tf_accuracy;
  j["tf_trace_accuracy"] = tf_trace_accuracy;
  j["gen_accuracy"] = gen_accuracy;
  j["halt_f1"] = halt_f1;
  j["halt_precision"] = halt_precision;
  j["halt_recall"] = halt_recall;
  nlohmann::ordered_json ood = nlohmann::ordered_json::object();
  for (const auto& [k, v] : ood_accuracy_by_length) ood[std::to_string(k)] = v;
  j["ood_accuracy_by_length"] = ood;
  j["n_tf"] = n_tf;
  j["n_gen"] = n_gen;
  j["n_halt"] = n_halt;
  j["n_ood_per_length"] = n_ood_per_length;
  j["gen_truncated"] = gen_truncated;
  return j.dump(2);
}

EvalReport EvalReport::from_json(std::string_view text) {
  const auto j = json::parse(text);
  EvalReport r;
  r.tf_accuracy = j.at("tf_accuracy");
  r.tf_trace_accuracy = j.at("tf_trace_accuracy");
  r.gen_accuracy = j.at("gen_accuracy");
  r.halt_f1 = j.at("halt_f1");
  r.halt_precision = j.at("halt_precision");
  r.halt_recall = j.at("halt_recall");
  for (const auto& [k, v] : j.at("ood_accuracy_by_length").items()) r.ood_accuracy_by_length[std::stoi(k)] = v;
  r.n_tf = j.at("n_tf");
  r.n_gen = j.at("n_gen");
  r.n_halt = j.at("n_halt");
  r.n_ood_per_length = j.at("n_ood_per_length");
  r.gen_truncated = j.at("gen_truncated");
  return r;
}

EvalReport evaluate(const model::Parameters& params, const taskgen::Dataset& data, const taskgen::TierRanges& ranges,
                    const EvalOptions& options) {
  if (data.test.empty()) throw DomainError("dataset has no test split");
  EvalReport r;
  const auto traces = forward_all(params, data.test);
  std::size_t ok = 0, exact = 0;
  for (std::size_t i = 0; i < data.test.size(); ++i) {
    ok += answer_correct(traces[i], data.test[i]);
    exact += trace_correct(traces[i], data.test[i]);
  }
  r.n_tf = data.test.size();
  r.tf_accuracy = static_cast<double>(ok) / static_cast<double>(r.n_tf);
  r.tf_trace_accuracy = static_cast<double>(exact) / static_cast<double>(r.n_tf);

  const auto hs = halt_f1(traces, data.test, options.threshold);
  r.halt_f1 = hs.f1;
  r.halt_precision = hs.precision;
  r.halt_recall = hs.recall;
  r.n_halt = data.test.size();

  const std::size_t n_gen = std::min(options.n_gen, data.test.size());
  model::GenerationOptions go;
  go.max_len = static_cast<std::size_t>(params.config.max_seq_len);
  const auto gs = free_generation(params, std::span(data.test).first(n_gen), go);
  r.gen_accuracy = gs.accuracy;
  r.n_gen = n_gen;
  r.gen_truncated = gs.truncated;

  if (!options.ood_lengths.empty()) {
    r.ood_accuracy_by_length =
        ood_eval(params, options.ood_lengths, ranges, options.n_ood_per_length, options.seed);
    r.n_ood_per_length = options.n_ood_per_length;
  }
  return r;
}

std::string table_row(const std::string& group, const std::string& arch, const std::string& loss,
                      const EvalReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "| %s | %s | %s | %.1f%% | %.1f%% | %.1f%% |", group.c_str(), arch.c_str(),
                loss.c_str(), 100 * r.tf_accuracy, 100 * r.halt_f1, 100 * r.gen_accuracy);
  return buf;
}

}  // namespace thermo::eval
