#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "thermo/errors.hpp"
#include "thermo/experiments.hpp"

namespace thermo::experiments {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream(path + ".tmp", std::ios::trunc) << text << "\n";
  fs::rename(path + ".tmp", path);
}

bool bitwise_equal(std::span<const float> a, std::span<const float> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

ordered_json score_json(const regime::ClassifierScore& s) {
  return {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1},
          {"tp", s.tp},               {"fp", s.fp},         {"fn", s.fn}, {"tn", s.tn}};
}

}  // namespace

std::string TransferResult::to_json() const {
  ordered_json j;
  j["group"] = group;
  j["arch"] = std::string(model::to_string(arch));
  j["seed"] = seed;
  j["source_f1"] = source_f1;
  j["zero_shot_f1"] = zero_shot_f1;
  j["post_f1"] = post_f1;
  j["delta"] = delta;
  j["post_tf_accuracy"] = post_tf_accuracy;
  j["halt_unchanged"] = halt_unchanged;
  return j.dump(2);
}

TransferResult TransferResult::from_json(std::string_view text) {
  const auto j = json::parse(text);
  TransferResult r;
  r.group = j.at("group");
  r.arch = model::arch_from_string(j.at("arch").get<std::string>());
  r.seed = j.at("seed");
  r.source_f1 = j.at("source_f1");
  r.zero_shot_f1 = j.at("zero_shot_f1");
  r.post_f1 = j.at("post_f1");
  r.delta = j.at("delta");
  r.post_tf_accuracy = j.at("post_tf_accuracy");
  r.halt_unchanged = j.at("halt_unchanged");
  return r;
}

TransferResult cross_task_transfer(const GroupResult& source, taskgen::Task target, const TransferOptions& o,
                                   bool reuse) {
  const std::string dir = source.run_dir + "/transfer_" + std::string(taskgen::to_string(target));
  ordered_json opts{{"target", std::string(taskgen::to_string(target))},
                    {"epochs", o.epochs},
                    {"lr", o.lr},
                    {"frozen", o.frozen}};
  if (reuse && fs::exists(dir + "/transfer.json") && fs::exists(dir + "/options.json") &&
      slurp(dir + "/options.json") == opts.dump(2) + "\n")
    return TransferResult::from_json(slurp(dir + "/transfer.json"));
  fs::create_directories(dir);
  fs::remove(dir + "/transfer.json");

  const auto& rc = source.config;
  const auto params = load_best(source.run_dir);
  const auto data = make_dataset(target, rc.sizes, rc.seed);

  TransferResult r;
  r.group = rc.group.name;
  r.arch = rc.model.arch;
  r.seed = rc.seed;
  r.source_f1 = source.eval.halt_f1;
  r.zero_shot_f1 = eval::halt_f1(params, data.test, rc.eval.threshold).f1;

  trainer::TrainConfig tc = rc.train;
  tc.epochs = o.epochs;
  tc.lr = o.lr;
  trainer::TrainOptions topts;
  topts.run_dir = dir;
  topts.frozen = o.frozen;
  topts.extra_config_json = ordered_json{{"transfer", opts}, {"source_run", source.run_dir}}.dump();
  const auto tuned = trainer::train(params, data, rc.group.loss, tc, topts);

  r.halt_unchanged = true;
  for (const auto& name : o.frozen)
    r.halt_unchanged = r.halt_unchanged && bitwise_equal(params.tensor(name), tuned.best.tensor(name)) &&
                       bitwise_equal(params.tensor(name), tuned.final.tensor(name));
  if (!r.halt_unchanged) throw std::logic_error("frozen tensor changed during fine-tuning in " + dir);

  r.post_f1 = eval::halt_f1(tuned.best, data.test, rc.eval.threshold).f1;
  r.delta = r.post_f1 - r.zero_shot_f1;
  r.post_tf_accuracy = eval::teacher_forced_accuracy(tuned.best, data.test);
  write_text(dir + "/options.json", opts.dump(2));
  write_text(dir + "/transfer.json", r.to_json());
  return r;
}

CrossDomainResult cross_domain(const Profile& profile, std::uint64_t seed, const std::string& out_root,
                               const GroupResult* parity_e_ssm) {
  CrossDomainResult out;
  for (auto g : {GroupId::C, GroupId::D, GroupId::E_ssm})
    out.sorting.push_back(run_group(GroupSpec::of(g), taskgen::Task::Sorting, profile, seed, out_root));
  if (!parity_e_ssm) return out;

  const auto& src = parity_e_ssm->config;
  const std::string dir = out_root + "/sorting/E_ssm_from_parity/seed" + std::to_string(src.seed);
  fs::create_directories(dir);
  const auto params = load_best(parity_e_ssm->run_dir);
  const auto data = make_dataset(taskgen::Task::Sorting, src.sizes, src.seed);
  auto ungated = src.stats;
  ungated.accuracy_gate = 0.0;

  auto stats_for = [&](const model::Parameters& p, std::optional<proprio::CorrelationStats>& slot,
                       std::string& err, const std::string& file) {
    const double acc = eval::teacher_forced_accuracy(p, data.test);
    try {
      slot = proprio::group_stats(proprio::collect_trajectories(p, data.test, proprio::Probe::DState), acc, ungated);
      write_text(dir + "/" + file, slot->to_json());
    } catch (const InsufficientDataError& e) {
      err = e.what();
    } catch (const DegenerateError& e) {
      err = e.what();
    }
    if (!err.empty()) write_text(dir + "/" + file, json{{"error", err}}.dump(2));
  };
  stats_for(params, out.zero_shot, out.zero_shot_error, "zero_shot_stats.json");

  taskgen::Dataset few = data;
  few.train.resize(std::min<std::size_t>(few.train.size(), 500));
  TransferOptions defaults;
  trainer::TrainConfig tc = src.train;
  tc.epochs = defaults.epochs;
  tc.lr = defaults.lr;
  trainer::TrainOptions topts;
  topts.run_dir = dir + "/few_shot";
  topts.extra_config_json =
      ordered_json{{"few_shot", {{"examples", few.train.size()}}}, {"source_run", parity_e_ssm->run_dir}}.dump();
  const auto tuned = trainer::train(params, few, src.group.loss, tc, topts);
  stats_for(tuned.best, out.few_shot, out.few_shot_error, "few_shot_stats.json");
  return out;
}

std::string VetoResult::to_json() const {
  ordered_json j;
  j["baseline_accuracy"] = baseline_accuracy;
  j["veto_accuracy"] = veto_accuracy;
  j["delta"] = delta;
  j["head_train"] = score_json(head_train);
  j["head_test"] = score_json(head_test);
  j["n_train"] = n_train;
  j["n_train_pos"] = n_train_pos;
  j["n_test"] = n_test;
  j["n_test_pos"] = n_test_pos;
  j["n_generations"] = n_generations;
  j["orbiting_fraction"] = orbiting_fraction;
  return j.dump(2);
}

VetoResult veto_experiment(const GroupResult& source, const VetoOptions& o) {
  const auto& rc = source.config;
  const auto params = load_best(source.run_dir);
  const auto data = make_dataset(rc.task, rc.sizes, rc.seed);

  regime::SampleOptions so;
  so.probe = rc.model.arch == model::Arch::SSM ? proprio::Probe::DState : proprio::Probe::DModel;
  so.regime = regime::RegimeConfig::for_dimension(
      static_cast<std::size_t>(so.probe == proprio::Probe::DState ? rc.model.d_state : rc.model.d_model));
  so.threshold = o.veto.threshold;
  so.max_len = o.max_len;

  const std::size_t n_test = std::min(rc.eval.n_gen, data.test.size());
  const std::span<const taskgen::Example> test(data.test.data(), n_test);

  VetoResult r;
  const auto train_set = regime::confusion_samples(params, data.val, so);
  const auto test_set = regime::confusion_samples(params, test, so);
  r.n_train = train_set.y.size();
  r.n_test = test_set.y.size();
  r.n_train_pos = static_cast<std::size_t>(std::count(train_set.y.begin(), train_set.y.end(), 1));
  r.n_test_pos = static_cast<std::size_t>(std::count(test_set.y.begin(), test_set.y.end(), 1));
  const auto head = regime::train_confusion_head(train_set, o.train);
  r.head_train = regime::score_confusion_head(head, train_set);
  r.head_test = regime::score_confusion_head(head, test_set);

  model::GenerationOptions base;
  base.max_len = o.max_len;
  base.policy = model::HaltPolicy::Confidence;
  base.threshold = o.veto.threshold;
  r.baseline_accuracy = eval::free_generation(params, test, base).accuracy;

  model::GenerationOptions vetoed = base;
  vetoed.policy = model::HaltPolicy::Controller;
  vetoed.controller = regime::make_veto_controller(head, so, o.veto);
  r.veto_accuracy = eval::free_generation(params, test, vetoed).accuracy;
  r.delta = r.veto_accuracy - r.baseline_accuracy;

  model::GenerationOptions natural;
  natural.max_len = o.max_len;
  std::size_t orbiting = 0;
  for (const auto& ex : test) {
    const auto g = model::generate(params, ex.prompt, natural);
    const std::size_t lo = ex.prompt.size() - 1;
    const auto series = regime::trace_series(g.trace, lo, g.trace.length, so.probe, so.estimator);
    bool any = false;
    for (const auto& s : regime::signal_series(series.states, series.entropy, so.regime))
      any = any || regime::classify_regime(s, so.regime) == regime::RegimeLabel::ORBITING;
    orbiting += any;
  }
  r.n_generations = n_test;
  r.orbiting_fraction = n_test ? static_cast<double>(orbiting) / static_cast<double>(n_test) : 0.0;
  write_text(source.run_dir + "/veto.json", r.to_json());
  return r;
}

}  // namespace thermo::experiments
