#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "thermo/errors.hpp"
#include "thermo/eval.hpp"
#include "thermo/mathcore.hpp"
#include "thermo/trainer.hpp"

namespace thermo::trainer {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

ordered_json breakdown_json(const loss::LossBreakdown& b) {
  ordered_json j;
  j["ce"] = b.ce;
  j["energy"] = b.energy;
  j["halt"] = b.halt;
  j["total"] = b.total;
  return j;
}

loss::LossBreakdown breakdown_from(const json& j) {
  return {j.at("ce").get<double>(), j.at("energy").get<double>(), j.at("halt").get<double>(),
          j.at("total").get<double>()};
}

bool finite(const loss::LossBreakdown& b) {
  return std::isfinite(b.ce) && std::isfinite(b.energy) && std::isfinite(b.halt) && std::isfinite(b.total);
}

struct Validation {
  double tf = 0.0, f1 = 0.0;
  loss::LossBreakdown loss;
};

Validation validate(const model::Parameters& p, const std::vector<taskgen::Example>& val,
                    const loss::LossConfig& lc) {
  Validation v;
  if (val.empty()) return v;
  const auto traces = eval::forward_all(p, val);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < val.size(); ++i) {
    ok += eval::answer_correct(traces[i], val[i]);
    v.loss += loss::thermodynamic_loss(traces[i], val[i], lc);
  }
  v.loss = v.loss.scaled(1.0 / static_cast<double>(val.size()));
  v.tf = static_cast<double>(ok) / static_cast<double>(val.size());
  v.f1 = eval::halt_f1(traces, val).f1;
  return v;
}

}  // namespace

std::string to_json(const TrainConfig& c) {
  ordered_json j;
  j["epochs"] = c.epochs;
  j["lr"] = c.lr;
  j["batch_size"] = c.batch_size;
  j["seed"] = c.seed;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["eps"] = c.eps;
  j["grad_clip"] = c.grad_clip;
  return j.dump();
}

TrainConfig train_config_from_json(std::string_view text) {
  const auto j = json::parse(text);
  TrainConfig c;
  c.epochs = j.at("epochs");
  c.lr = j.at("lr");
  c.batch_size = j.at("batch_size");
  c.seed = j.at("seed");
  c.beta1 = j.at("beta1");
  c.beta2 = j.at("beta2");
  c.eps = j.at("eps");
  c.grad_clip = j.at("grad_clip");
  c.validate();
  return c;
}

std::string to_json(const EpochRecord& r) {
  ordered_json j;
  j["epoch"] = r.epoch;
  j["train"] = breakdown_json(r.train);
  j["val"] = breakdown_json(r.val);
  j["val_tf_accuracy"] = r.val_tf_accuracy;
  j["val_halt_f1"] = r.val_halt_f1;
  j["grad_norm"] = r.grad_norm;
  j["seconds"] = r.seconds;
  return j.dump();
}

std::vector<EpochRecord> read_history(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::vector<EpochRecord> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    EpochRecord r;
    r.epoch = j.at("epoch");
    r.train = breakdown_from(j.at("train"));
    r.val = breakdown_from(j.at("val"));
    r.val_tf_accuracy = j.at("val_tf_accuracy");
    r.val_halt_f1 = j.at("val_halt_f1");
    r.grad_norm = j.at("grad_norm");
    r.seconds = j.at("seconds");
    out.push_back(r);
  }
  return out;
}

TrainResult train(const model::Parameters& init, const taskgen::Dataset& data, const loss::LossConfig& loss_config,
                  const TrainConfig& config, const TrainOptions& options) {
  namespace fs = std::filesystem;
  config.validate();
  loss_config.validate();
  init.config.validate();
  if (data.train.empty() && config.epochs > 0) throw DomainError("empty training split");

  std::vector<std::uint8_t> mask(init.count(), 1);
  for (const auto& name : options.frozen) {
    const auto& spec = init.layout->at(name);
    std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(spec.offset), spec.size, 0);
  }

  std::ofstream history_file;
  if (options.run_dir) {
    fs::create_directories(*options.run_dir);
    ordered_json cfg;
    cfg["model"] = ordered_json::parse(init.config.to_json());
    cfg["train"] = ordered_json::parse(to_json(config));
    cfg["loss"] = {{"alpha", loss_config.alpha}, {"beta", loss_config.beta}, {"mask_prompt", loss_config.mask_prompt}};
    cfg["frozen"] = options.frozen;
    const auto extras = ordered_json::parse(options.extra_config_json);
    for (const auto& [k, v] : extras.items()) cfg[k] = v;
    std::ofstream(*options.run_dir + "/config.json") << cfg.dump(2) << "\n";
    history_file.open(*options.run_dir + "/history.jsonl", std::ios::trunc);
  }

  TrainResult result{init, init, {}};
  model::Parameters& p = result.final;
  Adam adam(p.count(), config);
  double best_acc = -1.0, best_loss = std::numeric_limits<double>::infinity();

  std::vector<std::size_t> order(data.train.size());
  const auto shuffle_rng = mathcore::split_rng(config.seed, "shuffle");
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto rng = shuffle_rng.split("epoch" + std::to_string(epoch));
    rng.shuffle(order.begin(), order.end());

    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t n_batches = 0;
    std::vector<taskgen::Example> batch;
    for (std::size_t lo = 0; lo < order.size(); lo += bs) {
      batch.clear();
      for (std::size_t i = lo; i < std::min(order.size(), lo + bs); ++i) batch.push_back(data.train[order[i]]);
      auto [lb, grads] = model::backward<float>(p, batch, loss_config);
      if (!finite(lb) || !grads.all_finite())
        throw NumericError("non-finite loss or gradient at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(n_batches));
      rec.grad_norm += clip_global_norm(grads.data, config.grad_clip);
      adam.step(p.data, grads.data, options.frozen.empty() ? nullptr : &mask);
      rec.train += lb;
      ++n_batches;
    }
    rec.train = rec.train.scaled(1.0 / static_cast<double>(n_batches));
    rec.grad_norm /= static_cast<double>(n_batches);
    if (!p.all_finite()) throw NumericError("non-finite parameters after epoch " + std::to_string(epoch));

    if (options.validate_each_epoch) {
      const auto v = validate(p, data.val, loss_config);
      rec.val_tf_accuracy = v.tf;
      rec.val_halt_f1 = v.f1;
      rec.val = v.loss;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const bool better = rec.val_tf_accuracy > best_acc ||
                        (rec.val_tf_accuracy == best_acc && rec.val.total < best_loss);
    if (better) {
      best_acc = rec.val_tf_accuracy;
      best_loss = rec.val.total;
      result.best = p;
      result.history.best_epoch = epoch;
      if (options.run_dir) model::save_checkpoint(p, *options.run_dir + "/ckpt_best.bin");
    }
    result.history.epochs.push_back(rec);
    if (history_file) history_file << to_json(rec) << "\n" << std::flush;
    if (options.on_epoch) options.on_epoch(rec);
  }

  if (options.run_dir) {
    if (result.history.best_epoch == 0) model::save_checkpoint(p, *options.run_dir + "/ckpt_best.bin");
    model::save_checkpoint(p, *options.run_dir + "/ckpt_final.bin");
  }
  return result;
}

}  // namespace thermo::trainer
