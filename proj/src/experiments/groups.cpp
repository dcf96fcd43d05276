#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "thermo/errors.hpp"
#include "thermo/experiments.hpp"

namespace thermo::experiments {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(GroupId g) {
  switch (g) {
    case GroupId::A: return "A";
    case GroupId::B: return "B";
    case GroupId::C: return "C";
    case GroupId::D: return "D";
    case GroupId::E_trans: return "E_trans";
    case GroupId::E_ssm: return "E_ssm";
    case GroupId::Custom: return "custom";
  }
  return "custom";
}

GroupId group_from_string(std::string_view s) {
  for (auto g : {GroupId::A, GroupId::B, GroupId::C, GroupId::D, GroupId::E_trans, GroupId::E_ssm})
    if (s == to_string(g)) return g;
  throw ConfigError("unknown group '" + std::string(s) + "' (expected A, B, C, D, E_trans or E_ssm)");
}

GroupSpec GroupSpec::of(GroupId id) {
  GroupSpec g;
  g.id = id;
  g.name = std::string(to_string(id));
  switch (id) {
    case GroupId::A: g.arch = model::Arch::Transformer; break;
    case GroupId::B: g.arch = model::Arch::Transformer; g.loss.alpha = 0.05; break;
    case GroupId::C: g.arch = model::Arch::SSM; break;
    case GroupId::D: g.arch = model::Arch::SSM; g.loss.alpha = 0.05; break;
    case GroupId::E_trans: g.arch = model::Arch::Transformer; g.loss.beta = 0.10; break;
    case GroupId::E_ssm: g.arch = model::Arch::SSM; g.loss.beta = 0.10; break;
    case GroupId::Custom: throw ConfigError("use GroupSpec::custom for custom groups");
  }
  return g;
}

GroupSpec GroupSpec::custom(std::string name, model::Arch arch, double alpha, double beta) {
  GroupSpec g;
  g.id = GroupId::Custom;
  g.arch = arch;
  g.loss.alpha = alpha;
  g.loss.beta = beta;
  g.loss.validate();
  g.name = std::move(name);
  return g;
}

std::string GroupSpec::loss_name() const {
  if (id != GroupId::Custom) {
    if (loss.alpha == 0 && loss.beta == 0) return "CE";
    if (loss.beta == 0) return "L_th";
    if (loss.alpha == 0) return "CE+halt";
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "a=%.4f,b=%.4f", loss.alpha, loss.beta);
  return buf;
}

std::string_view to_string(Scale s) { return s == Scale::Desk ? "desk" : "full"; }

Scale scale_from_string(std::string_view s) {
  if (s == "desk") return Scale::Desk;
  if (s == "full") return Scale::Full;
  throw ConfigError("unknown scale '" + std::string(s) + "' (expected desk or full)");
}

Profile Profile::desk() {
  Profile p;
  p.scale = Scale::Desk;
  p.model.n_layers = 2;
  p.model.d_model = 64;
  p.model.d_state = 8;
  p.model.n_heads = 4;
  p.train.epochs = 15;
  p.train.batch_size = 32;
  p.train.lr = 1e-3;
  p.sizes = {2000, 500, 500};
  p.seeds = {0, 1, 2};
  p.eval.n_gen = 500;
  p.eval.ood_lengths = {9, 10};
  p.eval.n_ood_per_length = 200;
  return p;
}

Profile Profile::full() {
  Profile p = desk();
  p.scale = Scale::Full;
  p.model.n_layers = 6;
  p.model.d_model = 512;
  p.model.d_state = 16;
  p.model.n_heads = 8;
  p.train.epochs = 40;
  p.sizes = {8000, 1000, 1000};
  p.eval.n_gen = 1000;
  return p;
}

Profile Profile::of(Scale s) { return s == Scale::Desk ? desk() : full(); }

RunConfig RunConfig::make(taskgen::Task task, const GroupSpec& group, const Profile& profile, std::uint64_t seed) {
  RunConfig rc;
  rc.task = task;
  rc.group = group;
  rc.scale = profile.scale;
  rc.seed = seed;
  rc.model = profile.model;
  rc.model.arch = group.arch;
  rc.model.seed = seed;
  rc.train = profile.train;
  rc.train.seed = seed;
  rc.sizes = profile.sizes;
  rc.eval = profile.eval;
  rc.eval.seed = seed;
  if (task != taskgen::Task::Parity) rc.eval.ood_lengths.clear();
  rc.stats = profile.stats;
  rc.stats.seed = seed;
  return rc;
}

namespace {

ordered_json extras_json(const RunConfig& rc) {
  ordered_json j;
  j["task"] = std::string(taskgen::to_string(rc.task));
  j["group"] = {{"id", std::string(to_string(rc.group.id))}, {"name", rc.group.name}};
  j["scale"] = std::string(to_string(rc.scale));
  j["seed"] = rc.seed;
  j["data"] = {{"train", rc.sizes.train}, {"val", rc.sizes.val}, {"test", rc.sizes.test}};
  j["eval"] = {{"n_gen", rc.eval.n_gen},
               {"threshold", rc.eval.threshold},
               {"ood_lengths", rc.eval.ood_lengths},
               {"n_ood_per_length", rc.eval.n_ood_per_length},
               {"seed", rc.eval.seed}};
  j["stats"] = {{"accuracy_gate", rc.stats.accuracy_gate},
                {"resamples", rc.stats.resamples},
                {"seed", rc.stats.seed},
                {"max_lag", rc.stats.max_lag},
                {"sig_threshold", rc.stats.sig_threshold}};
  return j;
}

void require_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items())
    if (!ok.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
  for (const auto* k : allowed)
    if (!j.contains(k)) throw ConfigError("missing key '" + std::string(k) + "' in " + where);
}

}  // namespace

std::string RunConfig::to_json() const {
  ordered_json j;
  j["model"] = ordered_json::parse(model.to_json());
  j["train"] = ordered_json::parse(trainer::to_json(train));
  j["loss"] = {{"alpha", group.loss.alpha}, {"beta", group.loss.beta}, {"mask_prompt", group.loss.mask_prompt}};
  j["frozen"] = json::array();
  const auto extras = extras_json(*this);
  for (const auto& [k, v] : extras.items()) j[k] = v;
  return j.dump(2);
}

RunConfig RunConfig::from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("config is not valid JSON: ") + e.what(), e.byte);
  }
  try {
    require_keys(j, {"model", "train", "loss", "frozen", "task", "group", "scale", "seed", "data", "eval", "stats"},
                 "run config");
    require_keys(j.at("loss"), {"alpha", "beta", "mask_prompt"}, "loss");
    require_keys(j.at("group"), {"id", "name"}, "group");
    require_keys(j.at("data"), {"train", "val", "test"}, "data");
    require_keys(j.at("eval"), {"n_gen", "threshold", "ood_lengths", "n_ood_per_length", "seed"}, "eval");
    require_keys(j.at("stats"), {"accuracy_gate", "resamples", "seed", "max_lag", "sig_threshold"}, "stats");
    if (!j.at("frozen").empty()) throw ConfigError("run configs do not freeze tensors");

    RunConfig rc;
    rc.task = taskgen::task_from_string(j.at("task").get<std::string>());
    rc.scale = scale_from_string(j.at("scale").get<std::string>());
    rc.seed = j.at("seed");
    rc.model = model::ModelConfig::from_json(j.at("model").dump());
    rc.train = trainer::train_config_from_json(j.at("train").dump());
    const auto& l = j.at("loss");
    const auto id = j.at("group").at("id").get<std::string>();
    if (id == "custom") {
      rc.group = GroupSpec::custom(j.at("group").at("name"), rc.model.arch, l.at("alpha"), l.at("beta"));
    } else {
      rc.group = GroupSpec::of(group_from_string(id));
      if (rc.group.arch != rc.model.arch || rc.group.loss.alpha != l.at("alpha").get<double>() ||
          rc.group.loss.beta != l.at("beta").get<double>())
        throw ConfigError("group " + id + " does not match the model/loss settings");
      rc.group.name = j.at("group").at("name");
    }
    rc.group.loss.mask_prompt = l.at("mask_prompt");
    rc.group.loss.validate();
    const auto& d = j.at("data");
    rc.sizes = {d.at("train"), d.at("val"), d.at("test")};
    const auto& e = j.at("eval");
    rc.eval.n_gen = e.at("n_gen");
    rc.eval.threshold = e.at("threshold");
    rc.eval.ood_lengths = e.at("ood_lengths").get<std::vector<int>>();
    rc.eval.n_ood_per_length = e.at("n_ood_per_length");
    rc.eval.seed = e.at("seed");
    const auto& s = j.at("stats");
    rc.stats.accuracy_gate = s.at("accuracy_gate");
    rc.stats.resamples = s.at("resamples");
    rc.stats.seed = s.at("seed");
    rc.stats.max_lag = s.at("max_lag");
    rc.stats.sig_threshold = s.at("sig_threshold");
    return rc;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed run config: ") + e.what());
  }
}

RunConfig RunConfig::load(const std::string& run_dir) {
  std::ifstream f(run_dir + "/config.json");
  if (!f) throw ConfigError("no config.json in " + run_dir);
  std::stringstream ss;
  ss << f.rdbuf();
  return from_json(ss.str());
}

taskgen::Dataset make_dataset(taskgen::Task task, const taskgen::SplitSizes& sizes, std::uint64_t seed) {
  return taskgen::build_dataset(task, sizes, taskgen::TierRanges::defaults(task), seed,
                                taskgen::Sampling::DisjointPools);
}

std::string run_dir_for(const std::string& out_root, const RunConfig& rc) {
  return out_root + "/" + std::string(taskgen::to_string(rc.task)) + "/" + rc.group.name + "/seed" +
         std::to_string(rc.seed);
}

}  // namespace thermo::experiments
