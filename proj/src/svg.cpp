#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <utility>

#include "routenav/binary_io.hpp"
#include "routenav/error.hpp"
#include "routenav/metrics.hpp"

namespace routenav {

namespace {

constexpr double kWidth = 720, kHeight = 440;
constexpr double kLeft = 70, kRight = 180, kTop = 30, kBottom = 55;
constexpr std::array<std::string_view, 8> kPalette{"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                                    "#9467bd", "#8c564b", "#e377c2", "#17becf"};

std::string fixed(double v, int digits = 2) {
  if (std::abs(v) < 0.5 * std::pow(10.0, -digits)) v = 0.0;  // no "-0.00"
  std::array<char, 64> buf{};
  const auto r = std::to_chars(buf.data(), buf.data() + buf.size(), v, std::chars_format::fixed, digits);
  return std::string(buf.data(), r.ptr);
}

std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// Tick spacing of 1, 2 or 5 times a power of ten giving about five ticks.
double tick_step(double span) {
  const double raw = span / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 5.0}) {
    if (m * mag >= raw) return m * mag;
  }
  return 10.0 * mag;
}

struct Series {
  std::string label;
  std::vector<double> x, y;
};

}  // namespace

std::string render_training_curves(std::span<const MetricsRow> rows, CurveMetric metric, double weight) {
  std::map<std::pair<std::string, std::size_t>, std::map<std::size_t, std::pair<double, std::size_t>>> grouped;
  for (const MetricsRow& r : rows) {
    const double v = metric == CurveMetric::reward ? r.mean_reward : r.mean_steps;
    auto& cell = grouped[{r.run_id, r.dim}][r.episode];
    cell.first += v;
    cell.second += 1;
  }
  std::vector<Series> series;
  for (const auto& [key, by_episode] : grouped) {
    Series s;
    s.label = key.first + " (" + std::to_string(key.second) + "-d)";
    std::vector<double> raw;
    for (const auto& [ep, acc] : by_episode) {
      s.x.push_back(static_cast<double>(ep));
      raw.push_back(acc.first / static_cast<double>(acc.second));
    }
    s.y = smooth_curve(raw, weight);
    series.push_back(std::move(s));
  }

  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool any = false;
  for (const Series& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!any) {
        x1 = s.x[i];
        y0 = y1 = s.y[i];
        any = true;
      }
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (x1 <= x0) x1 = x0 + 1;
  if (metric == CurveMetric::steps) y0 = std::min(y0, 0.0);
  if (y1 - y0 < 1e-9) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  const double xs = tick_step(x1 - x0), ys = tick_step(y1 - y0);
  x1 = std::ceil(x1 / xs) * xs;
  y0 = std::floor(y0 / ys) * ys;
  y1 = std::ceil(y1 / ys) * ys;

  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  const auto px = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * pw; };
  const auto py = [&](double y) { return kTop + (1.0 - (y - y0) / (y1 - y0)) * ph; };
  const std::string y_label = metric == CurveMetric::reward ? "average reward" : "agent steps";

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fixed(kWidth, 0) + "\" height=\"" +
         fixed(kHeight, 0) + "\" viewBox=\"0 0 " + fixed(kWidth, 0) + " " + fixed(kHeight, 0) +
         "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<g stroke=\"#dddddd\" stroke-width=\"1\">\n";
  std::string labels;
  for (double t = x0; t <= x1 + 1e-9 * xs; t += xs) {
    svg += "<line x1=\"" + fixed(px(t)) + "\" y1=\"" + fixed(kTop) + "\" x2=\"" + fixed(px(t)) + "\" y2=\"" +
           fixed(kTop + ph) + "\"/>\n";
    labels += "<text x=\"" + fixed(px(t)) + "\" y=\"" + fixed(kTop + ph + 16) + "\" text-anchor=\"middle\">" +
              fixed(t, xs < 1 ? 1 : 0) + "</text>\n";
  }
  const int y_digits = ys >= 1 ? 0 : static_cast<int>(std::ceil(-std::log10(ys)));
  for (double t = y0; t <= y1 + 1e-9 * ys; t += ys) {
    svg += "<line x1=\"" + fixed(kLeft) + "\" y1=\"" + fixed(py(t)) + "\" x2=\"" + fixed(kLeft + pw) + "\" y2=\"" +
           fixed(py(t)) + "\"/>\n";
    labels += "<text x=\"" + fixed(kLeft - 6) + "\" y=\"" + fixed(py(t) + 4) + "\" text-anchor=\"end\">" +
              fixed(t, y_digits) + "</text>\n";
  }
  svg += "</g>\n";
  svg += "<rect x=\"" + fixed(kLeft) + "\" y=\"" + fixed(kTop) + "\" width=\"" + fixed(pw) + "\" height=\"" +
         fixed(ph) + "\" fill=\"none\" stroke=\"black\"/>\n";
  svg += labels;
  svg += "<text x=\"" + fixed(kLeft + pw / 2) + "\" y=\"" + fixed(kHeight - 12) +
         "\" text-anchor=\"middle\">episodes</text>\n";
  svg += "<text x=\"16\" y=\"" + fixed(kTop + ph / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
         fixed(kTop + ph / 2) + ")\">" + y_label + "</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const Series& s = series[k];
    const std::string_view color = kPalette[k % kPalette.size()];
    std::string points;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (i) points += ' ';
      points += fixed(px(s.x[i])) + "," + fixed(py(s.y[i]));
    }
    svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.5\" points=\"" + points +
           "\"/>\n";
    const double ly = kTop + 10 + 18 * static_cast<double>(k);
    svg += "<line x1=\"" + fixed(kLeft + pw + 12) + "\" y1=\"" + fixed(ly) + "\" x2=\"" + fixed(kLeft + pw + 32) +
           "\" y2=\"" + fixed(ly) + "\" stroke=\"" + std::string(color) + "\" stroke-width=\"2\"/>\n";
    svg += "<text x=\"" + fixed(kLeft + pw + 36) + "\" y=\"" + fixed(ly + 4) + "\">" + escape(s.label) +
           "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

std::vector<std::filesystem::path> render_training_figures(std::span<const MetricsRow> rows,
                                                           const std::filesystem::path& stem, double weight) {
  std::vector<std::filesystem::path> out;
  for (const auto& [metric, suffix] : {std::pair{CurveMetric::reward, "_reward.svg"}, std::pair{CurveMetric::steps, "_steps.svg"}}) {
    std::filesystem::path p = stem;
    p += suffix;
    write_text_file(p, render_training_curves(rows, metric, weight));
    out.push_back(p);
  }
  return out;
}

}  // namespace routenav
