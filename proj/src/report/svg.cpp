#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "thermo/errors.hpp"
#include "thermo/report.hpp"

namespace thermo::report {

namespace {

constexpr double kW = 640, kH = 400, kLeft = 60, kRight = 20, kTop = 40, kBottom = 50;
const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string esc(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '&') out += "&amp;";
    else if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '"') out += "&quot;";
    else out += c;
  }
  return out;
}

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", x);
  return buf;
}

class Svg {
 public:
  Svg(double w, double h) {
    os_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 "
        << w << ' ' << h << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  }
  void line(double x1, double y1, double x2, double y2, const std::string& stroke, double width = 1,
            const std::string& dash = "") {
    os_ << "<line x1=\"" << num(x1) << "\" y1=\"" << num(y1) << "\" x2=\"" << num(x2) << "\" y2=\"" << num(y2)
        << "\" stroke=\"" << stroke << "\" stroke-width=\"" << width << '"';
    if (!dash.empty()) os_ << " stroke-dasharray=\"" << dash << '"';
    os_ << "/>\n";
  }
  void rect(double x, double y, double w, double h, const std::string& fill, const std::string& stroke = "none") {
    os_ << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(std::max(w, 0.0))
        << "\" height=\"" << num(std::max(h, 0.0)) << "\" fill=\"" << fill << "\" stroke=\"" << stroke << "\"/>\n";
  }
  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke, double opacity = 1,
                double width = 1.2) {
    if (pts.empty()) return;
    os_ << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"" << width << "\" stroke-opacity=\""
        << opacity << "\" points=\"";
    for (const auto& [x, y] : pts) os_ << num(x) << ',' << num(y) << ' ';
    os_ << "\"/>\n";
  }
  void text(double x, double y, const std::string& s, const std::string& anchor = "start", int size = 11) {
    os_ << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" text-anchor=\"" << anchor << "\" font-size=\"" << size
        << "\">" << esc(s) << "</text>\n";
  }
  std::string finish() {
    os_ << "</svg>\n";
    return os_.str();
  }

 private:
  std::ostringstream os_;
};

struct Axes {
  double x0, x1, y0, y1;  // data range
  double left, top, width, height;
  double sx(double x) const { return left + (x1 == x0 ? 0.5 : (x - x0) / (x1 - x0)) * width; }
  double sy(double y) const { return top + height - (y1 == y0 ? 0.5 : (y - y0) / (y1 - y0)) * height; }

  void draw(Svg& s, const std::string& xlabel, const std::string& ylabel, int ticks = 4) const {
    s.line(left, top + height, left + width, top + height, "black");
    s.line(left, top, left, top + height, "black");
    for (int i = 0; i <= ticks; ++i) {
      const double fy = y0 + (y1 - y0) * i / ticks, fx = x0 + (x1 - x0) * i / ticks;
      s.line(left - 4, sy(fy), left, sy(fy), "black");
      s.text(left - 6, sy(fy) + 4, num(fy), "end", 10);
      s.line(sx(fx), top + height, sx(fx), top + height + 4, "black");
      s.text(sx(fx), top + height + 15, num(fx), "middle", 10);
    }
    s.text(left + width / 2, top + height + 32, xlabel, "middle");
    s.text(left - 45, top + height / 2, ylabel, "middle");
  }
};

Axes default_axes(double x0, double x1, double y0, double y1) {
  return {x0, x1, y0, y1, kLeft, kTop, kW - kLeft - kRight, kH - kTop - kBottom};
}

std::map<std::size_t, std::vector<const TrajectoryRow*>> by_example(const std::vector<TrajectoryRow>& rows,
                                                                    std::size_t max_examples) {
  std::map<std::size_t, std::vector<const TrajectoryRow*>> out;
  for (const auto& r : rows) {
    if (!out.count(r.example) && out.size() >= max_examples) continue;
    out[r.example].push_back(&r);
  }
  return out;
}

std::string regime_color(const std::string& r) {
  if (r == "CONVERGING") return "#2ca02c";
  if (r == "ORBITING") return "#d62728";
  if (r == "DIFFUSING") return "#9467bd";
  if (r == "PROGRESSING") return "#1f77b4";
  return "#cccccc";
}

}  // namespace

std::vector<std::size_t> histogram(std::span<const double> values, std::size_t bins, double lo, double hi) {
  if (bins == 0 || !(hi > lo)) throw DomainError("histogram needs bins > 0 and hi > lo");
  std::vector<std::size_t> counts(bins, 0);
  for (double v : values) {
    if (std::isnan(v)) continue;
    auto k = static_cast<std::ptrdiff_t>(std::floor((v - lo) / (hi - lo) * static_cast<double>(bins)));
    k = std::clamp<std::ptrdiff_t>(k, 0, static_cast<std::ptrdiff_t>(bins) - 1);
    ++counts[static_cast<std::size_t>(k)];
  }
  return counts;
}

std::string trajectory_svg(const std::vector<TrajectoryRow>& rows, const std::string& title,
                           std::size_t max_examples) {
  const auto ex = by_example(rows, max_examples);
  double tmax = 1, hmax = 1e-9;
  for (const auto& [id, rs] : ex) {
    tmax = std::max(tmax, static_cast<double>(rs.size() - 1));
    for (const auto* r : rs) hmax = std::max(hmax, r->entropy);
  }
  Svg s(kW, kH * 1.6);
  s.text(kW / 2, 20, title, "middle", 13);
  const double ph = (kH * 1.6 - kTop - 2 * kBottom) / 2;
  Axes top{0, tmax, 0, hmax, kLeft, kTop, kW - kLeft - kRight, ph - 10};
  Axes bottom{0, tmax, 0, 1, kLeft, kTop + ph + kBottom - 10, kW - kLeft - kRight, ph - 10};
  top.draw(s, "steps from last prompt token", "entropy");
  bottom.draw(s, "steps from last prompt token", "halt");
  for (const auto& [id, rs] : ex) {
    std::vector<std::pair<double, double>> pe, ph2;
    for (std::size_t i = 0; i < rs.size(); ++i) {
      pe.emplace_back(top.sx(static_cast<double>(i)), top.sy(rs[i]->entropy));
      ph2.emplace_back(bottom.sx(static_cast<double>(i)), bottom.sy(rs[i]->halt));
    }
    s.polyline(pe, kPalette[0], 0.5);
    s.polyline(ph2, kPalette[1], 0.5);
  }
  return s.finish();
}

std::string histogram_svg(std::span<const double> values, std::size_t bins, const std::string& title) {
  const auto counts = histogram(values, bins, -1.0, 1.0);
  const double cmax = static_cast<double>(std::max<std::size_t>(1, *std::max_element(counts.begin(), counts.end())));
  Svg s(kW, kH);
  std::size_t n = 0;
  for (auto c : counts) n += c;
  s.text(kW / 2, 20, title + " (n=" + std::to_string(n) + ")", "middle", 13);
  const auto ax = default_axes(-1, 1, 0, cmax);
  ax.draw(s, "per-example r", "count");
  for (std::size_t k = 0; k < bins; ++k) {
    const double a = -1 + 2.0 * static_cast<double>(k) / static_cast<double>(bins);
    const double b = -1 + 2.0 * static_cast<double>(k + 1) / static_cast<double>(bins);
    const double c = static_cast<double>(counts[k]);
    s.rect(ax.sx(a), ax.sy(c), ax.sx(b) - ax.sx(a) - 1, ax.sy(0) - ax.sy(c), kPalette[0]);
  }
  s.line(ax.sx(-0.3), ax.top, ax.sx(-0.3), ax.top + ax.height, "#888", 1, "4,3");
  s.line(ax.sx(0.3), ax.top, ax.sx(0.3), ax.top + ax.height, "#888", 1, "4,3");
  return s.finish();
}

std::string bars_svg(const std::vector<std::string>& labels, const std::vector<std::string>& series,
                     const std::vector<std::vector<double>>& values, const std::string& title) {
  if (values.size() != labels.size()) throw DomainError("one value row per bar label");
  Svg s(kW, kH);
  s.text(kW / 2, 20, title, "middle", 13);
  const auto ax = default_axes(0, 1, 0, 1);
  ax.draw(s, "", "F1");
  const double group_w = ax.width / static_cast<double>(std::max<std::size_t>(1, labels.size()));
  const double bar_w = group_w * 0.8 / static_cast<double>(std::max<std::size_t>(1, series.size()));
  for (std::size_t g = 0; g < labels.size(); ++g) {
    const double x0 = ax.left + group_w * static_cast<double>(g) + group_w * 0.1;
    for (std::size_t k = 0; k < series.size() && k < values[g].size(); ++k) {
      const double v = std::clamp(values[g][k], 0.0, 1.0);
      s.rect(x0 + bar_w * static_cast<double>(k), ax.sy(v), bar_w - 1, ax.sy(0) - ax.sy(v), kPalette[k % 8]);
    }
    s.text(x0 + group_w * 0.4, ax.top + ax.height + 28, labels[g], "middle");
  }
  for (std::size_t k = 0; k < series.size(); ++k) {
    s.rect(kW - 150, 30 + 14.0 * static_cast<double>(k), 10, 10, kPalette[k % 8]);
    s.text(kW - 135, 39 + 14.0 * static_cast<double>(k), series[k]);
  }
  return s.finish();
}

std::string heatmap_svg(const SweepGrid& grid, const std::string& title) {
  Svg s(kW, kH);
  s.text(kW / 2, 20, title, "middle", 13);
  const double w = (kW - kLeft - kRight) / static_cast<double>(std::max<std::size_t>(1, grid.alphas.size()));
  const double h = (kH - kTop - kBottom) / static_cast<double>(std::max<std::size_t>(1, grid.betas.size()));
  for (std::size_t b = 0; b < grid.betas.size(); ++b) {
    const double y = kTop + h * static_cast<double>(grid.betas.size() - 1 - b);
    s.text(kLeft - 6, y + h / 2 + 4, "b=" + fmt4(grid.betas[b]), "end", 10);
    for (std::size_t a = 0; a < grid.alphas.size(); ++a) {
      const double v = grid.mean_r[b][a];
      std::string fill = "#eeeeee";
      if (!std::isnan(v)) {
        const double t = std::clamp(std::fabs(v), 0.0, 1.0);
        const int shade = static_cast<int>(255 * (1 - t));
        char buf[16];
        if (v < 0)
          std::snprintf(buf, sizeof buf, "#%02x%02xff", shade, shade);
        else
          std::snprintf(buf, sizeof buf, "#ff%02x%02x", shade, shade);
        fill = buf;
      }
      const double x = kLeft + w * static_cast<double>(a);
      s.rect(x, y, w - 1, h - 1, fill, "#999");
      s.text(x + w / 2, y + h / 2 + 4, fmt4(v), "middle", 10);
    }
  }
  for (std::size_t a = 0; a < grid.alphas.size(); ++a)
    s.text(kLeft + w * (static_cast<double>(a) + 0.5), kH - kBottom + 16, "a=" + fmt4(grid.alphas[a]), "middle", 10);
  return s.finish();
}

std::string lag_curve_svg(const std::vector<std::string>& labels, const std::vector<std::vector<double>>& curves,
                          int max_lag, const std::string& title) {
  Svg s(kW, kH);
  s.text(kW / 2, 20, title, "middle", 13);
  const auto ax = default_axes(-max_lag, max_lag, -1, 1);
  ax.draw(s, "lag (negative: halt leads)", "xcorr");
  s.line(ax.sx(-max_lag), ax.sy(0), ax.sx(max_lag), ax.sy(0), "#bbb");
  for (std::size_t k = 0; k < curves.size(); ++k) {
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < curves[k].size(); ++i)
      if (!std::isnan(curves[k][i]))
        pts.emplace_back(ax.sx(static_cast<double>(i) - max_lag), ax.sy(curves[k][i]));
    s.polyline(pts, kPalette[k % 8], 1, 2);
    s.rect(kW - 150, 30 + 14.0 * static_cast<double>(k), 10, 10, kPalette[k % 8]);
    s.text(kW - 135, 39 + 14.0 * static_cast<double>(k), k < labels.size() ? labels[k] : "");
  }
  return s.finish();
}

std::string regime_timeline_svg(const std::vector<TrajectoryRow>& rows, const std::string& title,
                                std::size_t max_examples) {
  const auto ex = by_example(rows, max_examples);
  std::size_t tmax = 1;
  for (const auto& [id, rs] : ex) tmax = std::max(tmax, rs.size());
  Svg s(kW, kH);
  s.text(kW / 2, 20, title, "middle", 13);
  const double w = (kW - kLeft - kRight - 130) / static_cast<double>(tmax);
  const double h = (kH - kTop - kBottom) / static_cast<double>(std::max<std::size_t>(1, ex.size()));
  std::size_t row = 0;
  for (const auto& [id, rs] : ex) {
    const double y = kTop + h * static_cast<double>(row++);
    s.text(kLeft - 6, y + h / 2 + 4, "#" + std::to_string(id), "end", 9);
    for (std::size_t i = 0; i < rs.size(); ++i)
      s.rect(kLeft + w * static_cast<double>(i), y, w, h - 1, regime_color(rs[i]->regime));
  }
  const char* names[] = {"CONVERGING", "ORBITING", "DIFFUSING", "PROGRESSING"};
  for (int k = 0; k < 4; ++k) {
    s.rect(kW - 140, 40 + 16.0 * k, 10, 10, regime_color(names[k]));
    s.text(kW - 125, 49 + 16.0 * k, names[k]);
  }
  s.text(kLeft, kH - kBottom + 20, "steps from last prompt token");
  return s.finish();
}

}  // namespace thermo::report
