#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "thermo/errors.hpp"
#include "thermo/experiments.hpp"

namespace thermo::experiments {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << text;
    if (!text.empty() && text.back() != '\n') f << "\n";
  }
  fs::rename(tmp, path);
}

std::string stats_path(const std::string& dir, proprio::Probe p) {
  return dir + "/stats_" + std::string(proprio::to_string(p)) + ".json";
}

std::vector<proprio::Probe> probes_for(model::Arch arch) {
  if (arch == model::Arch::SSM) return {proprio::Probe::DState, proprio::Probe::DModel};
  return {proprio::Probe::DModel};
}

}  // namespace

const ProbeStats* GroupResult::probe(proprio::Probe p) const {
  for (const auto& s : probes)
    if (s.probe == p) return &s;
  return nullptr;
}

model::Parameters load_best(const std::string& run_dir) {
  const auto rc = RunConfig::load(run_dir);
  return model::load_checkpoint(run_dir + "/ckpt_best.bin", rc.model);
}

std::vector<ProbeStats> analyze(const model::Parameters& params, std::span<const taskgen::Example> examples,
                                double accuracy, const proprio::StatsOptions& options, const std::string& dump_dir) {
  std::vector<ProbeStats> out;
  for (auto probe : probes_for(params.config.arch)) {
    ProbeStats ps;
    ps.probe = probe;
    const auto trajs = proprio::collect_trajectories(params, examples, probe);
    try {
      ps.stats = proprio::group_stats(trajs, accuracy, options);
    } catch (const InsufficientDataError& e) {
      ps.error = e.what();
    } catch (const DegenerateError& e) {
      ps.error = e.what();
    }
    if (!dump_dir.empty()) {
      const std::size_t dim = probe == proprio::Probe::DState ? static_cast<std::size_t>(params.config.d_state)
                                                              : static_cast<std::size_t>(params.config.d_model);
      const auto rcfg = regime::RegimeConfig::for_dimension(dim);
      std::vector<std::vector<std::string>> labels;
      for (const auto& tr : trajs) {
        auto& row = labels.emplace_back();
        for (auto l : regime::label_trajectory(tr, rcfg)) row.emplace_back(regime::to_string(l));
      }
      std::ostringstream csv;
      proprio::write_trajectory_csv(csv, trajs, &labels);
      write_file(dump_dir + "/trajectories_" + std::string(proprio::to_string(probe)) + ".csv", csv.str());
      write_file(stats_path(dump_dir, probe),
                 ps.stats ? ps.stats->to_json() : json{{"error", ps.error}}.dump(2));
    }
    out.push_back(std::move(ps));
  }
  return out;
}

GroupResult load_group_result(const std::string& run_dir) {
  GroupResult r;
  r.config = RunConfig::load(run_dir);
  r.run_dir = run_dir;
  r.eval = eval::EvalReport::from_json(slurp(run_dir + "/eval.json"));
  for (auto probe : probes_for(r.config.model.arch)) {
    ProbeStats ps;
    ps.probe = probe;
    const auto path = stats_path(run_dir, probe);
    if (fs::exists(path)) {
      const auto text = slurp(path);
      const auto j = json::parse(text);
      if (j.contains("error"))
        ps.error = j.at("error");
      else
        ps.stats = proprio::CorrelationStats::from_json(text);
    } else {
      ps.error = "missing " + path;
    }
    r.probes.push_back(std::move(ps));
  }
  r.cached = true;
  return r;
}

GroupResult run(const RunConfig& rc, const std::string& run_dir, bool reuse) {
  rc.model.validate();
  rc.train.validate();
  rc.group.loss.validate();
  const std::string config_text = rc.to_json();
  if (reuse && fs::exists(run_dir + "/eval.json") && fs::exists(run_dir + "/config.json")) {
    if (slurp(run_dir + "/config.json") == config_text + "\n") return load_group_result(run_dir);
  }
  fs::create_directories(run_dir);
  fs::remove(run_dir + "/eval.json");

  const auto data = make_dataset(rc.task, rc.sizes, rc.seed);
  const auto init = model::init_model(rc.model);
  trainer::TrainOptions opts;
  opts.run_dir = run_dir;
  auto trained = trainer::train(init, data, rc.group.loss, rc.train, opts);
  write_file(run_dir + "/config.json", config_text);

  GroupResult r;
  r.config = rc;
  r.run_dir = run_dir;
  r.eval = eval::evaluate(trained.best, data, taskgen::TierRanges::defaults(rc.task), rc.eval);
  r.probes = analyze(trained.best, data.test, r.eval.tf_accuracy, rc.stats, run_dir);
  write_file(run_dir + "/eval.json", r.eval.to_json());
  return r;
}

GroupResult run_group(const GroupSpec& spec, taskgen::Task task, const Profile& profile, std::uint64_t seed,
                      const std::string& out_root, bool reuse) {
  const auto rc = RunConfig::make(task, spec, profile, seed);
  return run(rc, run_dir_for(out_root, rc), reuse);
}

}  // namespace thermo::experiments
