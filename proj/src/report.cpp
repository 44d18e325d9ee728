#include "opamp/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace opamp::report {

std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\n") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
    std::ostringstream os;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (i) os << ',';
        os << csv_escape(header[i]);
    }
    os << '\n';
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) os << ',';
            os << csv_escape(row[i]);
        }
        os << '\n';
    }
    write_text_file(path, os.str());
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

namespace {

constexpr int kWidth = 640;
constexpr int kHeight = 420;
constexpr int kMarginLeft = 64;
constexpr int kMarginRight = 24;
constexpr int kMarginTop = 40;
constexpr int kMarginBottom = 56;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                          "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};
constexpr int kPaletteSize = 8;

std::string xml_escape(const std::string& s) {
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

void svg_open(std::ostringstream& os, const std::string& title) {
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
       << kHeight << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n";
    os << "<rect width=\"" << kWidth << "\" height=\"" << kHeight << "\" fill=\"white\"/>\n";
    os << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" "
       << "font-family=\"sans-serif\" font-size=\"16\">" << xml_escape(title) << "</text>\n";
}

}  // namespace

std::string svg_line_chart(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<Series>& series) {
    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    bool first = true;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (first) {
                xmin = xmax = s.x[i];
                ymin = ymax = s.y[i];
                first = false;
            }
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    const double pw = kWidth - kMarginLeft - kMarginRight;
    const double ph = kHeight - kMarginTop - kMarginBottom;
    auto px = [&](double x) { return kMarginLeft + (x - xmin) / (xmax - xmin) * pw; };
    auto py = [&](double y) { return kMarginTop + ph - (y - ymin) / (ymax - ymin) * ph; };

    std::ostringstream os;
    svg_open(os, title);
    os << "<rect x=\"" << kMarginLeft << "\" y=\"" << kMarginTop << "\" width=\"" << pw
       << "\" height=\"" << ph << "\" fill=\"none\" stroke=\"#cccccc\"/>\n";
    os << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 12
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">"
       << xml_escape(x_label) << "</text>\n";
    os << "<text x=\"16\" y=\"" << kHeight / 2
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
       << "transform=\"rotate(-90 16 " << kHeight / 2 << ")\">" << xml_escape(y_label)
       << "</text>\n";
    // axis extremes
    os << "<text x=\"" << kMarginLeft << "\" y=\"" << kHeight - kMarginBottom + 18
       << "\" font-family=\"sans-serif\" font-size=\"11\">" << format_double(xmin) << "</text>\n";
    os << "<text x=\"" << kWidth - kMarginRight << "\" y=\"" << kHeight - kMarginBottom + 18
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
       << format_double(xmax) << "</text>\n";
    os << "<text x=\"" << kMarginLeft - 6 << "\" y=\"" << kMarginTop + 4
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
       << format_double(ymax) << "</text>\n";
    os << "<text x=\"" << kMarginLeft - 6 << "\" y=\"" << kHeight - kMarginBottom
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
       << format_double(ymin) << "</text>\n";

    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        const char* color = kPalette[si % kPaletteSize];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (i) os << ' ';
            os << format_double(px(s.x[i])) << ',' << format_double(py(s.y[i]));
        }
        os << "\" data-series=\"" << xml_escape(s.label) << "\"/>\n";
        for (std::size_t i = 0; i < s.x.size(); ++i)
            os << "<circle cx=\"" << format_double(px(s.x[i])) << "\" cy=\""
               << format_double(py(s.y[i])) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
        os << "<text x=\"" << kMarginLeft + 8 << "\" y=\"" << kMarginTop + 16 + 16 * si
           << "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"" << color << "\">"
           << xml_escape(s.label) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

std::string svg_bar_chart(const std::string& title, const std::vector<std::string>& series_labels,
                          const std::vector<BarGroup>& groups) {
    double ymax = 0;
    for (const auto& g : groups)
        for (double v : g.values) ymax = std::max(ymax, v);
    if (ymax <= 0) ymax = 1;
    const double pw = kWidth - kMarginLeft - kMarginRight;
    const double ph = kHeight - kMarginTop - kMarginBottom;
    const std::size_t ngroups = std::max<std::size_t>(1, groups.size());
    const std::size_t nseries = std::max<std::size_t>(1, series_labels.size());
    const double group_w = pw / ngroups;
    const double bar_w = group_w * 0.8 / nseries;

    std::ostringstream os;
    svg_open(os, title);
    os << "<line x1=\"" << kMarginLeft << "\" y1=\"" << kMarginTop + ph << "\" x2=\""
       << kMarginLeft + pw << "\" y2=\"" << kMarginTop + ph << "\" stroke=\"#333333\"/>\n";
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const auto& g = groups[gi];
        const double gx = kMarginLeft + gi * group_w + group_w * 0.1;
        for (std::size_t si = 0; si < g.values.size(); ++si) {
            const double h = g.values[si] / ymax * ph;
            os << "<rect x=\"" << format_double(gx + si * bar_w) << "\" y=\""
               << format_double(kMarginTop + ph - h) << "\" width=\"" << format_double(bar_w * 0.9)
               << "\" height=\"" << format_double(h) << "\" fill=\""
               << kPalette[si % kPaletteSize] << "\" data-series=\""
               << xml_escape(si < series_labels.size() ? series_labels[si] : "") << "\"/>\n";
        }
        os << "<text x=\"" << format_double(kMarginLeft + gi * group_w + group_w / 2) << "\" y=\""
           << kHeight - kMarginBottom + 18
           << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
           << xml_escape(g.label) << "</text>\n";
    }
    for (std::size_t si = 0; si < series_labels.size(); ++si)
        os << "<text x=\"" << kMarginLeft + 8 << "\" y=\"" << kMarginTop + 16 + 16 * si
           << "\" font-family=\"sans-serif\" font-size=\"12\" fill=\""
           << kPalette[si % kPaletteSize] << "\">" << xml_escape(series_labels[si])
           << "</text>\n";
    os << "</svg>\n";
    return os.str();
}

}  // namespace opamp::report
