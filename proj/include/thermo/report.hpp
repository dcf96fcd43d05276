#pragma once

#include <span>
#include <string>
#include <vector>

#include "thermo/experiments.hpp"

namespace thermo::report {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string to_csv() const;
  std::string to_markdown() const;
};

/// Fixed 4-decimal rendering; "-" for NaN or missing.
std::string fmt4(double x);

/// Finished run directories under <out>/<task>/<group>/seed<N>, sorted by
/// group then seed. Sweep cells and derived runs are skipped.
std::vector<experiments::GroupResult> scan_runs(const std::string& out_root, taskgen::Task task);
std::vector<experiments::TransferResult> scan_transfers(const std::string& out_root);

/// group | arch | loss | seed | tf | halt F1 | gen | ood... (one row per
/// seed, then a median row per group).
Table task_table(const std::vector<experiments::GroupResult>& runs);
/// group | probe | seed | mean r | median r | frac |r|>0.3 | tau_drv | n | ci | p
Table coupling_table(const std::vector<experiments::GroupResult>& runs);
/// group | arch | seed | parity F1 | zero-shot F1 | post F1 | delta
Table transfer_table(const std::vector<experiments::TransferResult>& transfers);
/// group | parity mean r | parity tau_drv | sorting mean r | sorting tau_drv (seed medians, d_state probe)
Table cross_domain_table(const std::vector<experiments::GroupResult>& parity,
                         const std::vector<experiments::GroupResult>& sorting);

struct Written {
  std::vector<std::string> written;
  std::vector<std::string> skipped;  // with reason
};

/// CSV + markdown for every table with data. Read-only over the runs.
Written write_tables(const std::string& out_root, const std::string& dest);
/// SVG figures for every run with dumps; missing dumps are listed and skipped.
Written emit_plots(const std::string& out_root, const std::string& dest);

// ---------------------------------------------------------------------------
// Building blocks (exposed for tests)

/// Equal-width bins over [lo, hi]; values outside are clamped into the edge
/// bins, NaN is dropped.
std::vector<std::size_t> histogram(std::span<const double> values, std::size_t bins, double lo, double hi);

struct TrajectoryRow {
  std::size_t example = 0, t = 0;
  double entropy = 0.0, halt = 0.0;
  std::string regime;
};
std::vector<TrajectoryRow> read_trajectory_csv(const std::string& path);

/// alpha x beta grid of a sweep CSV for one d_state (NaN where no value).
struct SweepGrid {
  std::vector<double> alphas, betas;
  std::vector<std::vector<double>> mean_r;  // [beta][alpha], median over seeds
};
SweepGrid read_sweep_grid(const std::string& csv_path, int d_state);

std::string trajectory_svg(const std::vector<TrajectoryRow>& rows, const std::string& title, std::size_t max_examples);
std::string histogram_svg(std::span<const double> values, std::size_t bins, const std::string& title);
std::string bars_svg(const std::vector<std::string>& labels, const std::vector<std::string>& series,
                     const std::vector<std::vector<double>>& values, const std::string& title);
std::string heatmap_svg(const SweepGrid& grid, const std::string& title);
std::string lag_curve_svg(const std::vector<std::string>& labels, const std::vector<std::vector<double>>& curves,
                          int max_lag, const std::string& title);
std::string regime_timeline_svg(const std::vector<TrajectoryRow>& rows, const std::string& title,
                                std::size_t max_examples);

}  // namespace thermo::report
