#pragma once

// CSV (RFC-4180-style quoting) and dependency-free SVG output.

#include <string>
#include <vector>

namespace opamp::report {

std::string csv_escape(const std::string& field);
std::string format_double(double v);  // fixed 6-decimal, deterministic

// Writes header + rows; every write is byte-deterministic.
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

// Simple line chart, one polyline per series.
std::string svg_line_chart(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<Series>& series);

struct BarGroup {
    std::string label;              // e.g. "doc 3"
    std::vector<double> values;     // one per series
};

// Grouped bar chart; series_labels name the bars inside each group.
std::string svg_bar_chart(const std::string& title, const std::vector<std::string>& series_labels,
                          const std::vector<BarGroup>& groups);

void write_text_file(const std::string& path, const std::string& content);

}  // namespace opamp::report
