#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mfc {

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

/// Static SVG line chart: one polyline per series, linear axes with five
/// ticks each and a legend.
void write_line_plot(std::ostream& out, const std::string& title, const std::string& xlabel,
                     const std::string& ylabel, const std::vector<Series>& series);

}  // namespace mfc
