#include "hytwin/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "hytwin/error.hpp"

namespace hytwin {

namespace {

constexpr const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string tick_label(double v, double step) {
    const int decimals = std::clamp(static_cast<int>(std::ceil(-std::log10(step))), 0, 6);
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, std::abs(v) < 0.5 * step * 1e-9 ? 0.0 : v);
    return buf;
}

std::string escape(const std::string& s) {
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

}  // namespace

std::vector<double> nice_ticks(double lo, double hi, int target) {
    if (!(hi > lo)) {
        return {lo};
    }
    const double raw = (hi - lo) / std::max(1, target);
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 2.5, 5.0, 10.0}) {
        step = m * mag;
        if (step >= raw) {
            break;
        }
    }
    std::vector<double> ticks;
    for (double k = std::ceil(lo / step - 1e-9); k * step <= hi + 1e-9 * step; k += 1.0) {
        ticks.push_back(k * step);
    }
    return ticks;
}

std::string emit_plot_svg(std::span<const PlotSeries> series, const PlotOptions& options) {
    if (series.empty()) {
        throw Error("EMPTY_SERIES", "nothing to plot");
    }
    for (const auto& s : series) {
        if (s.values.empty() || s.values.size() != s.times.size()) {
            throw Error("EMPTY_SERIES", "series '" + s.label + "' has no samples or mismatched lengths");
        }
        if (s.times != series.front().times) {
            throw Error("GRID_MISMATCH", "series '" + s.label + "' is not on the first series' grid");
        }
    }
    const auto& times = series.front().times;
    double x0 = times.front();
    double x1 = times.back();
    double y0 = series.front().values.front();
    double y1 = y0;
    for (const auto& s : series) {
        for (double v : s.values) {
            if (std::isfinite(v)) {
                y0 = std::min(y0, v);
                y1 = std::max(y1, v);
            }
        }
    }
    if (x1 <= x0) {
        x1 = x0 + 1.0;
    }
    if (y1 - y0 < 1e-9 * std::max(1.0, std::abs(y0))) {
        y0 -= 0.5;
        y1 += 0.5;
    } else {
        const double pad = 0.05 * (y1 - y0);
        y0 -= pad;
        y1 += pad;
    }

    const double W = options.width;
    const double H = options.height;
    const double left = 70;
    const double right = 20;
    const double top = options.title.empty() ? 20 : 40;
    const double legend_rows = static_cast<double>(series.size());
    const double bottom = 55 + 18 * legend_rows;
    const double pw = W - left - right;
    const double ph = H - top - bottom;
    auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
    auto py = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };

    std::string out;
    out += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(options.width) + "\" height=\"" +
           std::to_string(options.height) + "\" viewBox=\"0 0 " + std::to_string(options.width) + " " +
           std::to_string(options.height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    if (!options.title.empty()) {
        out += "<text x=\"" + num(W / 2) + "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" +
               escape(options.title) + "</text>\n";
    }

    out += "<g class=\"grid\" stroke=\"#dddddd\" stroke-width=\"1\">\n";
    const auto xt = nice_ticks(x0, x1);
    const auto yt = nice_ticks(y0, y1);
    for (double t : xt) {
        out += "<line x1=\"" + num(px(t)) + "\" y1=\"" + num(top) + "\" x2=\"" + num(px(t)) + "\" y2=\"" +
               num(top + ph) + "\"/>\n";
    }
    for (double t : yt) {
        out += "<line x1=\"" + num(left) + "\" y1=\"" + num(py(t)) + "\" x2=\"" + num(left + pw) + "\" y2=\"" +
               num(py(t)) + "\"/>\n";
    }
    out += "</g>\n";

    out += "<rect x=\"" + num(left) + "\" y=\"" + num(top) + "\" width=\"" + num(pw) + "\" height=\"" + num(ph) +
           "\" fill=\"none\" stroke=\"black\"/>\n";
    out += "<g class=\"ticks\">\n";
    const double xstep = xt.size() > 1 ? xt[1] - xt[0] : 1.0;
    const double ystep = yt.size() > 1 ? yt[1] - yt[0] : 1.0;
    for (double t : xt) {
        out += "<text x=\"" + num(px(t)) + "\" y=\"" + num(top + ph + 16) + "\" text-anchor=\"middle\">" +
               tick_label(t, xstep) + "</text>\n";
    }
    for (double t : yt) {
        out += "<text x=\"" + num(left - 6) + "\" y=\"" + num(py(t) + 4) + "\" text-anchor=\"end\">" +
               tick_label(t, ystep) + "</text>\n";
    }
    out += "</g>\n";
    out += "<text x=\"" + num(left + pw / 2) + "\" y=\"" + num(top + ph + 34) + "\" text-anchor=\"middle\">" +
           escape(options.x_label) + "</text>\n";
    if (!options.y_label.empty()) {
        out += "<text transform=\"translate(16 " + num(top + ph / 2) + ") rotate(-90)\" text-anchor=\"middle\">" +
               escape(options.y_label) + "</text>\n";
    }

    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto& s = series[i];
        const char* color = palette[i % std::size(palette)];
        out += "<polyline fill=\"none\" stroke=\"";
        out += color;
        out += "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t k = 0; k < s.values.size(); ++k) {
            if (!std::isfinite(s.values[k])) {
                continue;
            }
            out += num(px(s.times[k])) + "," + num(py(s.values[k])) + (k + 1 < s.values.size() ? " " : "");
        }
        out += "\"/>\n";
    }

    out += "<g class=\"legend\">\n";
    for (std::size_t i = 0; i < series.size(); ++i) {
        const double y = top + ph + 50 + 18 * static_cast<double>(i);
        out += "<line x1=\"" + num(left) + "\" y1=\"" + num(y - 4) + "\" x2=\"" + num(left + 24) + "\" y2=\"" +
               num(y - 4) + "\" stroke=\"" + palette[i % std::size(palette)] + "\" stroke-width=\"2\"/>\n";
        out += "<text x=\"" + num(left + 30) + "\" y=\"" + num(y) + "\">" + escape(series[i].label) + "</text>\n";
    }
    out += "</g>\n</svg>\n";
    return out;
}

}  // namespace hytwin
