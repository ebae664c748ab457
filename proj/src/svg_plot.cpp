#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "bdlab/io.hpp"
#include "bdlab/report.hpp"

namespace bdlab {

std::string to_string(PlotKind k) {
    switch (k) {
        case PlotKind::Histogram: return "histogram";
        case PlotKind::Density: return "density";
        case PlotKind::Scatter: return "scatter";
        case PlotKind::ClusterScatter: return "cluster-scatter";
    }
    return "?";
}

namespace {

constexpr double kWidth = 640, kHeight = 420;
constexpr double kLeft = 70, kRight = 170, kTop = 40, kBottom = 60;
constexpr double kPlotW = kWidth - kLeft - kRight, kPlotH = kHeight - kTop - kBottom;

constexpr const char* kClean = "#2ca02c";
constexpr const char* kPoisoned = "#d62728";
constexpr std::array<const char*, 6> kNeutral{"#1f77b4", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};
constexpr std::array<const char*, 5> kPoisonShades{"#d62728", "#a50f15", "#fb6a4a", "#e7298a", "#ff9896"};

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    std::string s(buf);
    if (s == "-0.00") s = "0.00";
    return s;
}

std::string tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", std::abs(v) < 1e-12 ? 0.0 : v);
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

struct Range {
    double lo = INFINITY, hi = -INFINITY;

    void add(double v) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    void finish(bool include_zero) {
        if (include_zero) add(0.0);
        if (lo == hi) {
            lo -= 0.5;
            hi += 0.5;
        }
    }
};

struct Frame {
    Range x, y;
    double px(double v) const { return kLeft + (v - x.lo) / (x.hi - x.lo) * kPlotW; }
    double py(double v) const { return kTop + kPlotH - (v - y.lo) / (y.hi - y.lo) * kPlotH; }
};

/// Colours in series order; clean and poisoned roles are fixed, poisoned variants get distinct shades.
std::vector<std::string> series_colors(const PlotSpec& spec) {
    std::vector<std::string> out;
    std::size_t neutral = 0, poisoned = 0;
    for (const auto& s : spec.series) {
        switch (s.role) {
            case SeriesRole::Clean: out.push_back(kClean); break;
            case SeriesRole::Poisoned:
                out.push_back(spec.kind == PlotKind::ClusterScatter ? kPoisonShades[poisoned++ % kPoisonShades.size()]
                                                                    : kPoisoned);
                break;
            case SeriesRole::Neutral: out.push_back(kNeutral[neutral++ % kNeutral.size()]); break;
        }
    }
    return out;
}

void marker(std::ostringstream& os, std::size_t shape, double x, double y, const std::string& color,
            std::size_t cls) {
    const double r = 3.5;
    os << "<g class=\"marker-" << cls << "\">";
    switch (shape % 6) {
        case 0: os << "<circle cx=\"" << num(x) << "\" cy=\"" << num(y) << "\" r=\"" << num(r) << "\""; break;
        case 1:
            os << "<rect x=\"" << num(x - r) << "\" y=\"" << num(y - r) << "\" width=\"" << num(2 * r)
               << "\" height=\"" << num(2 * r) << "\"";
            break;
        case 2:
            os << "<polygon points=\"" << num(x) << "," << num(y - r) << " " << num(x + r) << "," << num(y + r)
               << " " << num(x - r) << "," << num(y + r) << "\"";
            break;
        case 3:
            os << "<polygon points=\"" << num(x) << "," << num(y - r) << " " << num(x + r) << "," << num(y) << " "
               << num(x) << "," << num(y + r) << " " << num(x - r) << "," << num(y) << "\"";
            break;
        case 4:
            os << "<polygon points=\"" << num(x) << "," << num(y + r) << " " << num(x + r) << "," << num(y - r)
               << " " << num(x - r) << "," << num(y - r) << "\"";
            break;
        default:
            os << "<rect x=\"" << num(x - r) << "\" y=\"" << num(y - r / 2) << "\" width=\"" << num(2 * r)
               << "\" height=\"" << num(r) << "\"";
    }
    os << " fill=\"" << color << "\" fill-opacity=\"0.75\"/></g>\n";
}

void validate(const PlotSpec& spec) {
    if (spec.series.empty()) throw Error("plot '" + spec.title + "': no series");
    for (const auto& s : spec.series) {
        const std::string where = "plot '" + spec.title + "', series '" + s.label + "'";
        if (spec.kind == PlotKind::Histogram) {
            if (s.y.empty() || s.x.size() != s.y.size() + 1)
                throw Error(where + ": histogram needs n counts and n + 1 edges");
        } else {
            if (s.x.empty()) throw Error(where + ": empty series");
            if (s.x.size() != s.y.size()) throw Error(where + ": x and y lengths differ");
        }
        if (!all_finite(s.x) || !all_finite(s.y)) throw Error(where + ": non-finite values");
    }
}

}  // namespace

std::string render_svg(const PlotSpec& spec) {
    validate(spec);
    Frame f;
    for (const auto& s : spec.series) {
        for (double v : s.x) f.x.add(v);
        for (double v : s.y) f.y.add(v);
    }
    f.x.finish(false);
    f.y.finish(spec.kind == PlotKind::Histogram || spec.kind == PlotKind::Density);
    const auto colors = series_colors(spec);

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
       << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\" class=\"plot-" << to_string(spec.kind) << "\">\n";
    os << "<rect x=\"0\" y=\"0\" width=\"" << kWidth << "\" height=\"" << kHeight << "\" fill=\"white\"/>\n";
    os << "<text x=\"" << num(kLeft + kPlotW / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
       << escape(spec.title) << "</text>\n";

    os << "<g class=\"axes\" stroke=\"black\">\n";
    os << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(kTop + kPlotH) << "\" x2=\"" << num(kLeft + kPlotW)
       << "\" y2=\"" << num(kTop + kPlotH) << "\"/>\n";
    os << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(kTop) << "\" x2=\"" << num(kLeft) << "\" y2=\""
       << num(kTop + kPlotH) << "\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double xv = f.x.lo + (f.x.hi - f.x.lo) * i / 4.0;
        const double yv = f.y.lo + (f.y.hi - f.y.lo) * i / 4.0;
        os << "<line x1=\"" << num(f.px(xv)) << "\" y1=\"" << num(kTop + kPlotH) << "\" x2=\"" << num(f.px(xv))
           << "\" y2=\"" << num(kTop + kPlotH + 5) << "\"/>\n";
        os << "<line x1=\"" << num(kLeft - 5) << "\" y1=\"" << num(f.py(yv)) << "\" x2=\"" << num(kLeft)
           << "\" y2=\"" << num(f.py(yv)) << "\"/>\n";
        os << "<text stroke=\"none\" x=\"" << num(f.px(xv)) << "\" y=\"" << num(kTop + kPlotH + 18)
           << "\" text-anchor=\"middle\" font-size=\"11\">" << tick(xv) << "</text>\n";
        os << "<text stroke=\"none\" x=\"" << num(kLeft - 8) << "\" y=\"" << num(f.py(yv) + 4)
           << "\" text-anchor=\"end\" font-size=\"11\">" << tick(yv) << "</text>\n";
    }
    os << "</g>\n";
    os << "<text x=\"" << num(kLeft + kPlotW / 2) << "\" y=\"" << num(kHeight - 15)
       << "\" text-anchor=\"middle\" font-size=\"12\">" << escape(spec.x_label) << "</text>\n";
    os << "<text x=\"16\" y=\"" << num(kTop + kPlotH / 2) << "\" text-anchor=\"middle\" font-size=\"12\" "
       << "transform=\"rotate(-90 16 " << num(kTop + kPlotH / 2) << ")\">" << escape(spec.y_label) << "</text>\n";

    os << "<g class=\"data\">\n";
    for (std::size_t si = 0; si < spec.series.size(); ++si) {
        const auto& s = spec.series[si];
        const auto& color = colors[si];
        switch (spec.kind) {
            case PlotKind::Histogram:
                for (std::size_t b = 0; b < s.y.size(); ++b) {
                    const double x0 = f.px(s.x[b]), x1 = f.px(s.x[b + 1]);
                    const double y0 = f.py(s.y[b]), base = f.py(std::max(0.0, f.y.lo));
                    os << "<rect x=\"" << num(x0) << "\" y=\"" << num(std::min(y0, base)) << "\" width=\""
                       << num(std::max(x1 - x0, 0.0)) << "\" height=\"" << num(std::abs(base - y0)) << "\" fill=\""
                       << color << "\" fill-opacity=\"0.45\"/>\n";
                }
                break;
            case PlotKind::Density: {
                os << "<path fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" d=\"";
                for (std::size_t i = 0; i < s.x.size(); ++i)
                    os << (i ? " L" : "M") << num(f.px(s.x[i])) << "," << num(f.py(s.y[i]));
                os << "\"/>\n";
                break;
            }
            case PlotKind::Scatter:
                for (std::size_t i = 0; i < s.x.size(); ++i)
                    os << "<circle cx=\"" << num(f.px(s.x[i])) << "\" cy=\"" << num(f.py(s.y[i]))
                       << "\" r=\"2.5\" fill=\"" << color << "\" fill-opacity=\"0.7\"/>\n";
                break;
            case PlotKind::ClusterScatter:
                for (std::size_t i = 0; i < s.x.size(); ++i) marker(os, si, f.px(s.x[i]), f.py(s.y[i]), color, si);
                break;
        }
    }
    os << "</g>\n";

    os << "<g class=\"legend\">\n";
    for (std::size_t si = 0; si < spec.series.size(); ++si) {
        const double y = kTop + 10 + 18.0 * static_cast<double>(si);
        const double x = kLeft + kPlotW + 15;
        os << "<g class=\"legend-entry\">";
        os << "<rect x=\"" << num(x) << "\" y=\"" << num(y - 8) << "\" width=\"10\" height=\"10\" fill=\""
           << colors[si] << "\"/>";
        os << "<text x=\"" << num(x + 16) << "\" y=\"" << num(y + 1) << "\" font-size=\"11\">"
           << escape(spec.series[si].label) << "</text></g>\n";
    }
    os << "</g>\n</svg>\n";
    return os.str();
}

void render_plot(const PlotSpec& spec, const std::filesystem::path& path) {
    write_file_atomic(path, render_svg(spec));
}

}  // namespace bdlab
