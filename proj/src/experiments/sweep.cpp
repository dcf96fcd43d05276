#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include "json.hpp"
#include "thermo/errors.hpp"
#include "thermo/experiments.hpp"

namespace thermo::experiments {

using nlohmann::json;
using nlohmann::ordered_json;

std::string cell_name(double alpha, double beta, int d_state) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "a%.4f_b%.4f_s%d", alpha, beta, d_state);
  return buf;
}

std::size_t worker_count() {
  const char* env = std::getenv("PROPRIO_WORKERS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) throw ConfigError("PROPRIO_WORKERS must be a positive integer");
  return static_cast<std::size_t>(v);
}

std::string SweepSpec::to_json() const {
  ordered_json j;
  j["task"] = std::string(taskgen::to_string(task));
  j["alphas"] = alphas;
  j["betas"] = betas;
  j["d_states"] = d_states;
  j["seeds"] = seeds;
  j["accuracy_gate"] = accuracy_gate;
  return j.dump(2);
}

SweepSpec SweepSpec::from_json(std::string_view text) {
  const auto j = json::parse(text);
  static const std::set<std::string> keys{"task", "alphas", "betas", "d_states", "seeds", "accuracy_gate"};
  for (const auto& [k, v] : j.items())
    if (!keys.count(k)) throw ConfigError("unknown key '" + k + "' in sweep spec");
  SweepSpec s;
  if (j.contains("task")) s.task = taskgen::task_from_string(j.at("task").get<std::string>());
  if (j.contains("alphas")) s.alphas = j.at("alphas").get<std::vector<double>>();
  if (j.contains("betas")) s.betas = j.at("betas").get<std::vector<double>>();
  if (j.contains("d_states")) s.d_states = j.at("d_states").get<std::vector<int>>();
  if (j.contains("seeds")) s.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (j.contains("accuracy_gate")) s.accuracy_gate = j.at("accuracy_gate");
  if (s.alphas.empty() || s.betas.empty() || s.seeds.empty()) throw ConfigError("sweep grid is empty");
  return s;
}

namespace {

ordered_json cell_json(const SweepCell& c) {
  ordered_json j;
  j["alpha"] = c.alpha;
  j["beta"] = c.beta;
  j["d_state"] = c.d_state;
  j["seed"] = c.seed;
  j["status"] = c.status;
  if (!c.error.empty()) j["error"] = c.error;
  j["run_dir"] = c.run_dir;
  j["accuracy"] = c.accuracy;
  j["halt_f1"] = c.halt_f1;
  j["mean_r"] = c.mean_r ? json(*c.mean_r) : json(nullptr);
  j["tau_drv"] = c.tau_drv ? json(*c.tau_drv) : json(nullptr);
  return j;
}

void write_manifest(const std::string& dir, const SweepSpec& spec, const std::vector<SweepCell>& cells) {
  ordered_json j;
  j["spec"] = ordered_json::parse(spec.to_json());
  j["cells"] = json::array();
  for (const auto& c : cells) j["cells"].push_back(cell_json(c));
  {
    std::ofstream f(dir + "/manifest.json.tmp", std::ios::trunc);
    f << j.dump(2) << "\n";
  }
  std::filesystem::rename(dir + "/manifest.json.tmp", dir + "/manifest.json");

  std::ofstream csv(dir + "/sweep.csv", std::ios::trunc);
  csv << "alpha,beta,d_state,seed,status,accuracy,halt_f1,mean_r,tau_drv,run_dir\n";
  for (const auto& c : cells) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%.4f,%.4f,%d,%llu,%s,%.6f,%.6f,", c.alpha, c.beta, c.d_state,
                  static_cast<unsigned long long>(c.seed), c.status.c_str(), c.accuracy, c.halt_f1);
    csv << buf;
    if (c.mean_r) csv << *c.mean_r;
    csv << ',';
    if (c.tau_drv) csv << *c.tau_drv;
    csv << ',' << c.run_dir << "\n";
  }
}

}  // namespace

std::vector<SweepCell> run_sweep(const SweepSpec& spec, const Profile& profile, const std::string& out_root) {
  std::vector<SweepCell> cells;
  const std::vector<int> d_states = spec.d_states.empty() ? std::vector<int>{profile.model.d_state} : spec.d_states;
  for (auto seed : spec.seeds)
    for (int ds : d_states)
      for (double b : spec.betas)
        for (double a : spec.alphas) {
          SweepCell c;
          c.alpha = a;
          c.beta = b;
          c.d_state = ds;
          c.seed = seed;
          cells.push_back(c);
        }

  const std::string dir = out_root + "/" + std::string(taskgen::to_string(spec.task)) + "/sweep";
  std::filesystem::create_directories(dir);
  std::mutex mu;
  write_manifest(dir, spec, cells);

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      SweepCell c = cells[i];
      try {
        Profile p = profile;
        p.model.d_state = c.d_state;
        const auto g = GroupSpec::custom("sweep/" + cell_name(c.alpha, c.beta, c.d_state), model::Arch::SSM,
                                         c.alpha, c.beta);
        const auto rc = RunConfig::make(spec.task, g, p, c.seed);
        c.run_dir = run_dir_for(out_root, rc);
        const auto r = run(rc, c.run_dir);
        c.accuracy = r.eval.tf_accuracy;
        c.halt_f1 = r.eval.halt_f1;
        if (c.accuracy < spec.accuracy_gate) {
          c.status = "gated";
        } else {
          c.status = "done";
          const auto* ps = r.probe(proprio::Probe::DState);
          if (ps && ps->stats && ps->stats->valid) {
            c.mean_r = ps->stats->mean_r;
            c.tau_drv = ps->stats->tau_drv;
          } else {
            c.status = "failed";
            c.error = ps ? (ps->error.empty() ? ps->stats->invalid_reason : ps->error) : "no d_state probe";
          }
        }
      } catch (const std::exception& e) {
        c.status = "failed";
        c.error = e.what();
      }
      std::lock_guard lock(mu);
      cells[i] = c;
      write_manifest(dir, spec, cells);
    }
  };
  const std::size_t n_workers = std::min(worker_count(), std::max<std::size_t>(cells.size(), 1));
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < n_workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  write_manifest(dir, spec, cells);
  return cells;
}

}  // namespace thermo::experiments
