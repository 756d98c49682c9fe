#include "svg.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace harlab::harness::detail {

namespace {

constexpr double kWidth = 720;
constexpr double kHeight = 420;
constexpr double kLeft = 70;
constexpr double kRight = 170;
constexpr double kTop = 40;
constexpr double kBottom = 60;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string render_svg(const LineChart& chart) {
  std::size_t n = chart.x_ticks.size();
  for (const auto& s : chart.series) n = std::max(n, s.values.size());
  double lo = chart.y_min;
  double hi = chart.y_max;
  if (chart.auto_y) {
    lo = INFINITY;
    hi = -INFINITY;
    for (const auto& s : chart.series) {
      for (double v : s.values) {
        if (std::isfinite(v)) {
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
      }
    }
    if (!std::isfinite(lo)) {
      lo = 0.0;
      hi = 1.0;
    }
    if (hi - lo < 1e-12) hi = lo + 1.0;
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
  }
  const double pw = kWidth - kLeft - kRight;
  const double ph = kHeight - kTop - kBottom;
  auto x_at = [&](std::size_t i) { return kLeft + (n <= 1 ? pw / 2 : pw * static_cast<double>(i) / static_cast<double>(n - 1)); };
  auto y_at = [&](double v) { return kTop + ph * (1.0 - (v - lo) / (hi - lo)); };

  std::string out;
  auto emit = [&](const std::string& s) { out += s; };
  emit(fmt::format(R"(<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="12">)"
                   "\n",
                   kWidth, kHeight));
  emit(fmt::format(R"(<rect width="{}" height="{}" fill="white"/>)" "\n", kWidth, kHeight));
  emit(fmt::format(R"(<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>)" "\n", kLeft + pw / 2,
                   escape(chart.title)));
  emit(fmt::format(R"(<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#333"/>)" "\n", kLeft, kTop, pw, ph));
  for (int t = 0; t <= 5; ++t) {
    const double v = lo + (hi - lo) * t / 5.0;
    const double y = y_at(v);
    emit(fmt::format(R"(<line x1="{}" y1="{:.1f}" x2="{}" y2="{:.1f}" stroke="#ddd"/>)" "\n", kLeft, y, kLeft + pw, y));
    emit(fmt::format(R"(<text x="{}" y="{:.1f}" text-anchor="end">{:.3g}</text>)" "\n", kLeft - 6, y + 4, v));
  }
  const std::size_t stride = std::max<std::size_t>(1, n / 12);
  for (std::size_t i = 0; i < n; i += stride) {
    const std::string label = i < chart.x_ticks.size() ? chart.x_ticks[i] : std::to_string(i + 1);
    emit(fmt::format(R"(<text x="{:.1f}" y="{}" text-anchor="middle">{}</text>)" "\n", x_at(i), kTop + ph + 18,
                     escape(label)));
  }
  emit(fmt::format(R"(<text x="{}" y="{}" text-anchor="middle">{}</text>)" "\n", kLeft + pw / 2, kHeight - 14,
                   escape(chart.x_label)));
  emit(fmt::format(R"svg(<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>)svg" "\n",
                   kTop + ph / 2, kTop + ph / 2, escape(chart.y_label)));
  for (std::size_t s = 0; s < chart.series.size(); ++s) {
    const auto& series = chart.series[s];
    const char* color = kPalette[s % std::size(kPalette)];
    std::string pts;
    for (std::size_t i = 0; i < series.values.size(); ++i) {
      const double v = series.values[i];
      if (!std::isfinite(v)) continue;
      pts += fmt::format("{:.1f},{:.1f} ", x_at(i), y_at(std::clamp(v, lo, hi)));
    }
    emit(fmt::format(R"(<polyline fill="none" stroke="{}" stroke-width="2" points="{}"/>)" "\n", color, pts));
    const double ly = kTop + 10 + 18 * static_cast<double>(s);
    emit(fmt::format(R"(<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{}" stroke-width="3"/>)" "\n", kLeft + pw + 12,
                     ly, kLeft + pw + 32, ly, color));
    emit(fmt::format(R"(<text x="{}" y="{}">{}</text>)" "\n", kLeft + pw + 38, ly + 4, escape(series.name)));
  }
  emit("</svg>\n");
  return out;
}

}  // namespace harlab::harness::detail
