#pragma once

// Minimal self-contained SVG line and scatter charts.

#include <string>
#include <vector>

namespace dqf::svg {

struct Series {
    std::string label;
    std::vector<double> x, y;
    std::string color;  // empty: taken from the palette
    bool dashed = false;
    bool markers_only = false;
};

struct Chart {
    std::string title;
    std::string x_label, y_label;
    std::vector<Series> series;
    int width = 720;
    int height = 440;
    bool legend = true;
};

std::string render(const Chart& chart);
void write_text(const std::string& path, const std::string& content);
std::string escape_xml(const std::string& s);

}  // namespace dqf::svg
