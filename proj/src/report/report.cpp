#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "thermo/errors.hpp"
#include "thermo/mathcore.hpp"
#include "thermo/report.hpp"

namespace thermo::report {

namespace fs = std::filesystem;
using experiments::GroupResult;

std::string fmt4(double x) {
  if (std::isnan(x)) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", x);
  return buf;
}

std::string Table::to_csv() const {
  auto cell = [](const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  };
  std::ostringstream os;
  for (std::size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << cell(header[i]);
  os << "\n";
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << cell(r[i]);
    os << "\n";
  }
  return os.str();
}

std::string Table::to_markdown() const {
  auto cell = [](std::string s) {
    std::string out;
    for (char c : s) out += c == '|' ? std::string("\\|") : std::string(1, c);
    return out;
  };
  std::ostringstream os;
  os << "|";
  for (const auto& h : header) os << " " << cell(h) << " |";
  os << "\n|";
  for (std::size_t i = 0; i < header.size(); ++i) os << "---|";
  os << "\n";
  for (const auto& r : rows) {
    os << "|";
    for (const auto& c : r) os << " " << cell(c) << " |";
    os << "\n";
  }
  return os.str();
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

int group_rank(const std::string& name) {
  static const std::vector<std::string> order{"A", "B", "C", "D", "E_trans", "E_ssm"};
  const auto it = std::find(order.begin(), order.end(), name);
  return it == order.end() ? 100 : static_cast<int>(it - order.begin());
}

double median_of(std::vector<double> v) {
  v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return std::isnan(x); }), v.end());
  return v.empty() ? kNaN : mathcore::median(std::move(v));
}

/// Runs grouped by group name in display order.
std::vector<std::pair<std::string, std::vector<const GroupResult*>>> by_group(const std::vector<GroupResult>& runs) {
  std::map<std::string, std::vector<const GroupResult*>> m;
  for (const auto& r : runs) m[r.config.group.name].push_back(&r);
  std::vector<std::pair<std::string, std::vector<const GroupResult*>>> out(m.begin(), m.end());
  std::stable_sort(out.begin(), out.end(),
                   [](const auto& a, const auto& b) { return group_rank(a.first) < group_rank(b.first); });
  return out;
}

const proprio::CorrelationStats* valid_stats(const GroupResult& r, proprio::Probe p) {
  const auto* ps = r.probe(p);
  return ps && ps->stats && ps->stats->valid ? &*ps->stats : nullptr;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << text;
}

}  // namespace

std::vector<GroupResult> scan_runs(const std::string& out_root, taskgen::Task task) {
  std::vector<GroupResult> out;
  const fs::path base = fs::path(out_root) / std::string(taskgen::to_string(task));
  if (!fs::is_directory(base)) return out;
  for (const auto& g : fs::directory_iterator(base)) {
    if (!g.is_directory()) continue;
    const auto name = g.path().filename().string();
    if (name == "sweep" || name == "E_ssm_from_parity") continue;
    for (const auto& s : fs::directory_iterator(g.path())) {
      if (!s.is_directory() || s.path().filename().string().rfind("seed", 0) != 0) continue;
      if (!fs::exists(s.path() / "eval.json")) continue;
      out.push_back(experiments::load_group_result(s.path().string()));
    }
  }
  std::sort(out.begin(), out.end(), [](const GroupResult& a, const GroupResult& b) {
    const int ra = group_rank(a.config.group.name), rb = group_rank(b.config.group.name);
    if (ra != rb) return ra < rb;
    if (a.config.group.name != b.config.group.name) return a.config.group.name < b.config.group.name;
    return a.config.seed < b.config.seed;
  });
  return out;
}

std::vector<experiments::TransferResult> scan_transfers(const std::string& out_root) {
  std::vector<experiments::TransferResult> out;
  for (const auto& r : scan_runs(out_root, taskgen::Task::Parity)) {
    const auto path = r.run_dir + "/transfer_arithmetic/transfer.json";
    if (!fs::exists(path)) continue;
    std::ifstream f(path);
    std::stringstream ss;
    ss << f.rdbuf();
    out.push_back(experiments::TransferResult::from_json(ss.str()));
  }
  return out;
}

Table task_table(const std::vector<GroupResult>& runs) {
  std::set<int> ood;
  for (const auto& r : runs)
    for (const auto& [len, acc] : r.eval.ood_accuracy_by_length) ood.insert(len);
  Table t;
  t.header = {"group", "arch", "loss", "seed", "tf_accuracy", "tf_trace_accuracy", "halt_f1", "gen_accuracy"};
  for (int len : ood) t.header.push_back("ood_" + std::to_string(len));
  for (const auto& [name, rs] : by_group(runs)) {
    std::vector<std::vector<double>> cols(4 + ood.size());
    for (const auto* r : rs) {
      std::vector<double> v{r->eval.tf_accuracy, r->eval.tf_trace_accuracy, r->eval.halt_f1, r->eval.gen_accuracy};
      for (int len : ood) {
        const auto it = r->eval.ood_accuracy_by_length.find(len);
        v.push_back(it == r->eval.ood_accuracy_by_length.end() ? kNaN : it->second);
      }
      std::vector<std::string> row{name, std::string(model::to_string(r->config.model.arch)),
                                   r->config.group.loss_name(), std::to_string(r->config.seed)};
      for (std::size_t k = 0; k < v.size(); ++k) {
        row.push_back(fmt4(v[k]));
        cols[k].push_back(v[k]);
      }
      t.rows.push_back(row);
    }
    if (rs.size() > 1) {
      std::vector<std::string> row{name, std::string(model::to_string(rs[0]->config.model.arch)),
                                   rs[0]->config.group.loss_name(), "median"};
      for (const auto& c : cols) row.push_back(fmt4(median_of(c)));
      t.rows.push_back(row);
    }
  }
  return t;
}

Table coupling_table(const std::vector<GroupResult>& runs) {
  Table t;
  t.header = {"group", "probe", "seed", "mean r", "median r", "frac |r|>0.3", "tau_drv", "n", "ci_low", "ci_high",
              "p_vs_A"};
  std::map<std::uint64_t, const proprio::CorrelationStats*> baseline;
  for (const auto& r : runs)
    if (r.config.group.name == "A") baseline[r.config.seed] = valid_stats(r, proprio::Probe::DModel);

  for (const auto& [name, rs] : by_group(runs)) {
    for (auto probe : {proprio::Probe::DModel, proprio::Probe::DState}) {
      std::vector<std::vector<double>> cols(4);
      std::size_t shown = 0;
      for (const auto* r : rs) {
        const auto* ps = r->probe(probe);
        if (!ps) continue;
        ++shown;
        std::vector<std::string> row{name, std::string(proprio::to_string(probe)), std::to_string(r->config.seed)};
        if (const auto* s = valid_stats(*r, probe)) {
          std::string p = "-";
          const auto it = baseline.find(r->config.seed);
          if (name != "A" && it != baseline.end() && it->second) {
            auto copy = *s;
            proprio::compare_groups(copy, *it->second);
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.3g", *copy.p_value);
            p = buf;
          }
          for (auto x : {fmt4(s->mean_r), fmt4(s->median_r), fmt4(s->frac_sig), fmt4(s->tau_drv),
                         std::to_string(s->n), fmt4(s->ci_low), fmt4(s->ci_high), p})
            row.push_back(x);
          cols[0].push_back(s->mean_r);
          cols[1].push_back(s->median_r);
          cols[2].push_back(s->frac_sig);
          cols[3].push_back(s->tau_drv);
        } else {
          const std::string why =
              ps->stats ? "gated (accuracy " + fmt4(ps->stats->accuracy) + ")" : "unavailable: " + ps->error;
          row.push_back(why);
          for (int k = 0; k < 7; ++k) row.push_back("-");
        }
        t.rows.push_back(row);
      }
      if (shown > 1) {
        std::vector<std::string> row{name, std::string(proprio::to_string(probe)), "median"};
        for (const auto& c : cols) row.push_back(fmt4(median_of(c)));
        for (int k = 0; k < 4; ++k) row.push_back("-");
        t.rows.push_back(row);
      }
    }
  }
  return t;
}

Table transfer_table(const std::vector<experiments::TransferResult>& transfers) {
  Table t;
  t.header = {"group", "arch", "seed", "parity_f1", "zero_shot_f1", "post_f1", "delta"};
  std::map<std::string, std::vector<double>> post, delta;
  for (const auto& r : transfers) {
    t.rows.push_back({r.group, std::string(model::to_string(r.arch)), std::to_string(r.seed), fmt4(r.source_f1),
                      fmt4(r.zero_shot_f1), fmt4(r.post_f1), fmt4(r.delta)});
    post[std::string(model::to_string(r.arch))].push_back(r.post_f1);
    delta[std::string(model::to_string(r.arch))].push_back(r.delta);
  }
  for (const auto& [arch, v] : post)
    t.rows.push_back({"average", arch, "-", "-", "-", fmt4(mathcore::mean(v)), fmt4(mathcore::mean(delta[arch]))});
  return t;
}

Table cross_domain_table(const std::vector<GroupResult>& parity, const std::vector<GroupResult>& sorting) {
  Table t;
  t.header = {"group", "parity mean r", "parity tau_drv", "sorting mean r", "sorting tau_drv"};
  auto medians = [](const std::vector<GroupResult>& runs, const std::string& g) {
    std::vector<double> r, tau;
    for (const auto& x : runs)
      if (x.config.group.name == g)
        if (const auto* s = valid_stats(x, proprio::Probe::DState)) {
          r.push_back(s->mean_r);
          tau.push_back(s->tau_drv);
        }
    return std::pair{median_of(r), median_of(tau)};
  };
  for (const std::string g : {"C", "D", "E_ssm"}) {
    const auto [pr, pt] = medians(parity, g);
    const auto [sr, st] = medians(sorting, g);
    t.rows.push_back({g, fmt4(pr), fmt4(pt), fmt4(sr), fmt4(st)});
  }
  return t;
}

Written write_tables(const std::string& out_root, const std::string& dest) {
  Written w;
  fs::create_directories(dest);
  const auto parity = scan_runs(out_root, taskgen::Task::Parity);
  const auto sorting = scan_runs(out_root, taskgen::Task::Sorting);
  auto emit = [&](const std::string& stem, const Table& t, bool have) {
    if (!have || t.rows.empty()) {
      w.skipped.push_back(stem + ": no finished runs");
      return;
    }
    write_text(dest + "/" + stem + ".csv", t.to_csv());
    write_text(dest + "/" + stem + ".md", t.to_markdown());
    w.written.push_back(dest + "/" + stem + ".csv");
    w.written.push_back(dest + "/" + stem + ".md");
  };
  emit("table2_parity", task_table(parity), !parity.empty());
  emit("table2_sorting", task_table(sorting), !sorting.empty());
  emit("table3_parity", coupling_table(parity), !parity.empty());
  emit("table3_sorting", coupling_table(sorting), !sorting.empty());
  const auto transfers = scan_transfers(out_root);
  emit("table4_transfer", transfer_table(transfers), !transfers.empty());
  emit("table5_cross_domain", cross_domain_table(parity, sorting), !parity.empty() && !sorting.empty());
  return w;
}

std::vector<TrajectoryRow> read_trajectory_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::string line;
  std::getline(f, line);
  if (line.rfind("example_id,t,entropy,halt", 0) != 0) throw ParseError("not a trajectory dump: " + path, 0);
  std::vector<TrajectoryRow> out;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> parts;
    while (std::getline(ss, field, ',')) parts.push_back(field);
    if (!line.empty() && line.back() == ',') parts.emplace_back();
    if (parts.size() < 4) throw ParseError("short trajectory row in " + path, 0);
    TrajectoryRow r;
    r.example = std::stoull(parts[0]);
    r.t = std::stoull(parts[1]);
    r.entropy = std::stod(parts[2]);
    r.halt = std::stod(parts[3]);
    if (parts.size() > 4) r.regime = parts[4];
    out.push_back(r);
  }
  return out;
}

SweepGrid read_sweep_grid(const std::string& csv_path, int d_state) {
  std::ifstream f(csv_path);
  if (!f) throw std::runtime_error("cannot open " + csv_path);
  std::string line;
  std::getline(f, line);
  std::map<std::pair<double, double>, std::vector<double>> cells;
  std::set<double> alphas, betas;
  while (std::getline(f, line)) {
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> p;
    while (std::getline(ss, field, ',')) p.push_back(field);
    if (p.size() < 8 || std::stoi(p[2]) != d_state) continue;
    const double a = std::stod(p[0]), b = std::stod(p[1]);
    alphas.insert(a);
    betas.insert(b);
    auto& v = cells[{a, b}];
    if (!p[7].empty()) v.push_back(std::stod(p[7]));
  }
  SweepGrid g;
  g.alphas.assign(alphas.begin(), alphas.end());
  g.betas.assign(betas.begin(), betas.end());
  g.mean_r.assign(g.betas.size(), std::vector<double>(g.alphas.size(), kNaN));
  for (std::size_t b = 0; b < g.betas.size(); ++b)
    for (std::size_t a = 0; a < g.alphas.size(); ++a) {
      const auto it = cells.find({g.alphas[a], g.betas[b]});
      if (it != cells.end()) g.mean_r[b][a] = median_of(it->second);
    }
  return g;
}

Written emit_plots(const std::string& out_root, const std::string& dest) {
  Written w;
  fs::create_directories(dest);
  auto save = [&](const std::string& name, const std::string& svg) {
    write_text(dest + "/" + name, svg);
    w.written.push_back(dest + "/" + name);
  };

  for (auto task : {taskgen::Task::Parity, taskgen::Task::Sorting}) {
    const std::string tname(taskgen::to_string(task));
    std::vector<std::string> lag_labels;
    std::vector<std::vector<double>> lag_curves;
    std::set<std::string> lag_seen;  // first seed of each group
    for (const auto& r : scan_runs(out_root, task)) {
      const std::string tag = tname + "_" + r.config.group.name + "_seed" + std::to_string(r.config.seed);
      const auto probe = r.config.model.arch == model::Arch::SSM ? proprio::Probe::DState : proprio::Probe::DModel;
      const std::string pname(proprio::to_string(probe));
      const auto dump = r.run_dir + "/trajectories_" + pname + ".csv";
      if (!fs::exists(dump)) {
        w.skipped.push_back(dump + ": missing");
        continue;
      }
      const auto rows = read_trajectory_csv(dump);
      save("A1_trajectories_" + tag + ".svg",
           trajectory_svg(rows, r.config.group.name + " " + tname + " (" + pname + " probe)", 20));
      save("A13_regimes_" + tag + ".svg", regime_timeline_svg(rows, r.config.group.name + " regimes", 24));
      if (const auto* s = valid_stats(r, probe))
        save("A7_r_histogram_" + tag + ".svg",
             histogram_svg(s->per_example_r, 20, r.config.group.name + " per-example r"));
      else
        w.skipped.push_back("A7 " + tag + ": no valid stats");

      if (!lag_seen.insert(r.config.group.name).second) continue;
      std::map<std::size_t, std::pair<std::vector<double>, std::vector<double>>> series;
      for (const auto& row : rows) {
        series[row.example].first.push_back(row.halt);
        series[row.example].second.push_back(row.entropy);
      }
      const int max_lag = r.config.stats.max_lag;
      std::vector<double> sum(static_cast<std::size_t>(2 * max_lag + 1), 0.0);
      std::vector<double> cnt(sum.size(), 0.0);
      for (const auto& [id, he] : series) {
        try {
          const auto lag = proprio::derivative_xcorr_lag(he.first, he.second, max_lag);
          for (std::size_t k = 0; k < sum.size(); ++k)
            if (!std::isnan(lag.curve[k])) {
              sum[k] += lag.curve[k];
              cnt[k] += 1;
            }
        } catch (const std::exception&) {
        }
      }
      for (std::size_t k = 0; k < sum.size(); ++k) sum[k] = cnt[k] > 0 ? sum[k] / cnt[k] : kNaN;
      lag_labels.push_back(r.config.group.name);
      lag_curves.push_back(sum);
    }
    if (!lag_curves.empty())
      save("A12_lag_curves_" + tname + ".svg",
           lag_curve_svg(lag_labels, lag_curves, static_cast<int>((lag_curves[0].size() - 1) / 2),
                         "Mean derivative cross-correlation, " + tname));
  }

  const auto transfers = scan_transfers(out_root);
  if (!transfers.empty()) {
    std::vector<std::string> labels;
    std::vector<std::vector<double>> vals;
    for (const auto& t : transfers) {
      labels.push_back(t.group + "/s" + std::to_string(t.seed));
      vals.push_back({t.source_f1, t.zero_shot_f1, t.post_f1});
    }
    save("A8_transfer.svg", bars_svg(labels, {"parity", "zero-shot", "post-transfer"}, vals, "Halt F1 transfer"));
  } else {
    w.skipped.push_back("A8: no transfer results");
  }

  const auto sweep_csv = out_root + "/parity/sweep/sweep.csv";
  if (fs::exists(sweep_csv)) {
    std::set<int> states;
    std::ifstream f(sweep_csv);
    std::string line;
    std::getline(f, line);
    while (std::getline(f, line)) {
      std::stringstream ss(line);
      std::string a, b, s;
      std::getline(ss, a, ',');
      std::getline(ss, b, ',');
      std::getline(ss, s, ',');
      if (!s.empty()) states.insert(std::stoi(s));
    }
    for (int ds : states)
      save("A9_sweep_heatmap_s" + std::to_string(ds) + ".svg",
           heatmap_svg(read_sweep_grid(sweep_csv, ds), "mean r over (alpha, beta), d_state " + std::to_string(ds)));
  } else {
    w.skipped.push_back("A9: " + sweep_csv + " missing");
  }
  return w;
}

}  // namespace thermo::report
