#pragma once

// CSV and SVG emission for MetricSeries. CSV is the canonical artifact
// (17 significant digits, exact round trip); SVG is a convenience rendering.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "icluq/config.hpp"
#include "icluq/experiments.hpp"

namespace icluq {

inline void write_csv(const MetricSeries& series, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write CSV: " + path);
    os << "x,mean,stderr\n";
    char buf[128];
    for (std::size_t i = 0; i < series.x.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g\n", series.x[i], series.mean[i],
                      series.stderr_[i]);
        os << buf;
    }
    if (!os) throw IoError("write failed: " + path);
}

inline MetricSeries read_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open CSV: " + path);
    MetricSeries s;
    std::string line;
    if (!std::getline(is, line)) throw IoError("empty CSV: " + path);
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        double x, m, e;
        if (std::sscanf(line.c_str(), "%lf,%lf,%lf", &x, &m, &e) != 3)
            throw IoError("malformed CSV row in " + path + ": " + line);
        s.x.push_back(x);
        s.mean.push_back(m);
        s.stderr_.push_back(e);
    }
    return s;
}

struct PlotSpec {
    std::string title;
    std::string x_label = "position";
    std::string y_label = "value";
    int width = 760;
    int height = 480;
    bool log_y = false;
};

// Multi-line SVG plot with axes and a legend. Returns false (and writes
// nothing) when the series set is empty.
inline bool write_svg(const std::vector<MetricSeries>& series, const std::string& path,
                      const PlotSpec& spec = {}) {
    if (series.empty()) return false;
    double x_lo = 1e300, x_hi = -1e300, y_lo = 1e300, y_hi = -1e300;
    for (const auto& s : series) {
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            const double y = spec.log_y ? std::log10(std::max(s.mean[i], 1e-300)) : s.mean[i];
            x_lo = std::min(x_lo, s.x[i]);
            x_hi = std::max(x_hi, s.x[i]);
            y_lo = std::min(y_lo, y);
            y_hi = std::max(y_hi, y);
        }
    }
    if (!(x_hi > x_lo)) x_hi = x_lo + 1.0;
    if (!(y_hi > y_lo)) y_hi = y_lo + 1.0;
    const double pad_y = 0.05 * (y_hi - y_lo);
    y_lo -= pad_y;
    y_hi += pad_y;

    const int ml = 64, mr = 16, mt = 28, mb = 44;
    const double pw = spec.width - ml - mr, ph = spec.height - mt - mb;
    auto px = [&](double x) { return ml + (x - x_lo) / (x_hi - x_lo) * pw; };
    auto py = [&](double y) {
        const double v = spec.log_y ? std::log10(std::max(y, 1e-300)) : y;
        return mt + ph - (v - y_lo) / (y_hi - y_lo) * ph;
    };
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                    "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};

    std::ofstream os(path);
    if (!os) throw IoError("cannot write SVG: " + path);
    os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << spec.width << "' height='"
       << spec.height << "'>\n<rect width='100%' height='100%' fill='white'/>\n";
    os << "<text x='" << spec.width / 2 << "' y='18' text-anchor='middle' font-size='14'>"
       << spec.title << "</text>\n";
    // axes
    os << "<line x1='" << ml << "' y1='" << mt + ph << "' x2='" << ml + pw << "' y2='" << mt + ph
       << "' stroke='black'/>\n";
    os << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << mt + ph
       << "' stroke='black'/>\n";
    char buf[256];
    for (int k = 0; k <= 4; ++k) {
        const double xv = x_lo + (x_hi - x_lo) * k / 4.0;
        const double yv = y_lo + (y_hi - y_lo) * k / 4.0;
        std::snprintf(buf, sizeof(buf),
                      "<text x='%.1f' y='%d' text-anchor='middle' font-size='10'>%.4g</text>\n",
                      px(xv), mt + static_cast<int>(ph) + 16, xv);
        os << buf;
        std::snprintf(
            buf, sizeof(buf),
            "<text x='%d' y='%.1f' text-anchor='end' font-size='10'>%.4g</text>\n", ml - 6,
            mt + ph - (yv - y_lo) / (y_hi - y_lo) * ph + 3,
            spec.log_y ? std::pow(10.0, yv) : yv);
        os << buf;
    }
    os << "<text x='" << ml + pw / 2 << "' y='" << spec.height - 8
       << "' text-anchor='middle' font-size='12'>" << spec.x_label << "</text>\n";
    os << "<text x='14' y='" << mt + ph / 2 << "' text-anchor='middle' font-size='12' "
       << "transform='rotate(-90 14 " << mt + ph / 2 << ")'>" << spec.y_label << "</text>\n";

    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        const char* color = palette[si % 8];
        os << "<polyline fill='none' stroke='" << color << "' stroke-width='1.5' points='";
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", px(s.x[i]), py(s.mean[i]));
            os << buf;
        }
        os << "'/>\n";
        const int ly = mt + 14 + static_cast<int>(si) * 14;
        os << "<line x1='" << ml + 8 << "' y1='" << ly - 4 << "' x2='" << ml + 28 << "' y2='"
           << ly - 4 << "' stroke='" << color << "' stroke-width='2'/>\n";
        os << "<text x='" << ml + 32 << "' y='" << ly << "' font-size='11'>" << s.name
           << "</text>\n";
    }
    os << "</svg>\n";
    if (!os) throw IoError("write failed: " + path);
    return true;
}

} // namespace icluq
