#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hoitag/report.hpp"
#include "hoitag/trainer.hpp"

namespace hoitag {

class PlotError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace plot_detail {

inline constexpr double kWidth = 640, kHeight = 400, kLeft = 60, kRight = 20, kTop = 30, kBottom = 50;
inline const std::vector<std::string>& palette() {
    static const std::vector<std::string> p{"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
    return p;
}

inline std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

inline std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else if (c == '&') out += "&amp;";
        else out += c;
    }
    return out;
}

inline std::string header(const std::string& title) {
    return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) + "\" height=\"" + num(kHeight) +
           "\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
           "<text x=\"" + num(kWidth / 2) + "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">" + escape(title) +
           "</text>\n";
}

inline std::string y_axis(double lo, double hi) {
    std::string s;
    const double x0 = kLeft, y0 = kHeight - kBottom, y1 = kTop;
    s += "<line x1=\"" + num(x0) + "\" y1=\"" + num(y0) + "\" x2=\"" + num(kWidth - kRight) + "\" y2=\"" + num(y0) +
         "\" stroke=\"black\"/>\n";
    s += "<line x1=\"" + num(x0) + "\" y1=\"" + num(y0) + "\" x2=\"" + num(x0) + "\" y2=\"" + num(y1) +
         "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double v = lo + (hi - lo) * i / 4.0;
        const double y = y0 - (y0 - y1) * i / 4.0;
        s += "<text x=\"" + num(x0 - 6) + "\" y=\"" + num(y + 4) + "\" text-anchor=\"end\">" + num(v) + "</text>\n";
        s += "<line x1=\"" + num(x0 - 3) + "\" y1=\"" + num(y) + "\" x2=\"" + num(x0) + "\" y2=\"" + num(y) +
             "\" stroke=\"black\"/>\n";
    }
    return s;
}

inline void write(const std::filesystem::path& path, const std::string& svg) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw PlotError("cannot write " + path.string());
    out << svg;
}

}  // namespace plot_detail

/// SVG line chart of loss_total against step, one polyline per stage.
inline std::string loss_curve_svg(const TrainLog& log) {
    using namespace plot_detail;
    if (log.rows.empty()) throw PlotError("training log has no steps to plot");
    double lo = 0.0, hi = 0.0;
    for (const auto& r : log.rows) {
        if (!std::isfinite(r.loss_total)) throw PlotError("training log holds a non-finite loss");
        hi = std::max(hi, r.loss_total);
    }
    if (hi <= lo) hi = lo + 1.0;
    const double first = static_cast<double>(log.rows.front().step), last = static_cast<double>(log.rows.back().step);
    const double span = std::max(1.0, last - first);
    std::string svg = header("Training loss") + y_axis(lo, hi);
    const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
    std::vector<std::string> stages;
    for (const auto& r : log.rows)
        if (std::find(stages.begin(), stages.end(), r.stage) == stages.end()) stages.push_back(r.stage);
    for (std::size_t s = 0; s < stages.size(); ++s) {
        std::string pts;
        for (const auto& r : log.rows) {
            if (r.stage != stages[s]) continue;
            const double x = kLeft + pw * (static_cast<double>(r.step) - first) / span;
            const double y = kTop + ph * (1.0 - (r.loss_total - lo) / (hi - lo));
            pts += num(x) + "," + num(y) + " ";
        }
        const auto& color = palette()[s % palette().size()];
        svg += "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
        svg += "<text x=\"" + num(kWidth - kRight - 80) + "\" y=\"" + num(kTop + 14 * (s + 1)) + "\" fill=\"" + color +
               "\">" + escape(stages[s]) + "</text>\n";
    }
    svg += "<text x=\"" + num(kLeft + pw / 2) + "\" y=\"" + num(kHeight - 12) + "\" text-anchor=\"middle\">step " +
           std::to_string(log.rows.front().step) + " to " + std::to_string(log.rows.back().step) + "</text>\n";
    return svg + "</svg>\n";
}

/// SVG grouped bar chart: one group per model, one bar per metric.
inline std::string metric_bars_svg(const ScoreTable& t, const std::string& title) {
    using namespace plot_detail;
    if (t.rows.empty() || t.metrics.empty()) throw PlotError("no scores to plot");
    double hi = 0.0;
    for (const auto& r : t.rows)
        for (double v : r.values) hi = std::max(hi, v);
    if (hi <= 0.0) hi = 1.0;
    std::string svg = header(title) + y_axis(0.0, hi);
    const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
    const double group_w = pw / static_cast<double>(t.rows.size());
    const double bar_w = group_w * 0.8 / static_cast<double>(t.metrics.size());
    for (std::size_t g = 0; g < t.rows.size(); ++g) {
        const double gx = kLeft + group_w * g + group_w * 0.1;
        for (std::size_t k = 0; k < t.metrics.size(); ++k) {
            const double v = t.rows[g].values.at(k);
            const double h = ph * std::max(0.0, v) / hi;
            svg += "<rect x=\"" + num(gx + bar_w * k) + "\" y=\"" + num(kTop + ph - h) + "\" width=\"" +
                   num(bar_w * 0.9) + "\" height=\"" + num(h) + "\" fill=\"" + palette()[k % palette().size()] +
                   "\"/>\n";
        }
        svg += "<text x=\"" + num(gx + group_w * 0.4) + "\" y=\"" + num(kHeight - kBottom + 16) +
               "\" text-anchor=\"middle\">" + escape(t.rows[g].model) + "</text>\n";
    }
    for (std::size_t k = 0; k < t.metrics.size(); ++k)
        svg += "<text x=\"" + num(kWidth - kRight - 90) + "\" y=\"" + num(kTop + 14 * (k + 1)) + "\" fill=\"" +
               palette()[k % palette().size()] + "\">" + escape(t.metrics[k]) + "</text>\n";
    return svg + "</svg>\n";
}

/// Writes <dir>/loss_curve.svg.
inline std::filesystem::path emit_loss_plot(const TrainLog& log, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const auto p = dir / "loss_curve.svg";
    plot_detail::write(p, loss_curve_svg(log));
    return p;
}

/// Writes <dir>/metric_bars.svg.
inline std::filesystem::path emit_metric_plot(const ScoreTable& t, const std::filesystem::path& dir,
                                              const std::string& title = "Ablation") {
    std::filesystem::create_directories(dir);
    const auto p = dir / "metric_bars.svg";
    plot_detail::write(p, metric_bars_svg(t, title));
    return p;
}

}  // namespace hoitag
