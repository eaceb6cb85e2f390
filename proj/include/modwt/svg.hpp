#pragma once

#include <span>
#include <string>
#include <vector>

#include "modwt/balance.hpp"
#include "modwt/sensitivity.hpp"

namespace modwt {

struct Segment {
  double x0, y0, x1, y1;
};

// Marching squares over values[i * ys.size() + j] sampled at (xs[i], ys[j]).
// Squares with a non-finite corner are skipped, leaving gaps.
std::vector<Segment> contour_segments(std::span<const double> xs, std::span<const double> ys,
                                      std::span<const double> values, double level);

// Evenly spaced round levels strictly inside [lo, hi].
std::vector<double> nice_levels(double lo, double hi, int target = 8);

// |SMD| before and after weighting, one bar pair per balance row of the
// stratum, with the 0.10 reference line.
std::string love_plot_svg(const BalanceTable& table, const std::string& stratum);

// Solid contours of the mean adjusted estimate, dashed contours of the mean
// p-value at p_levels, benchmark dots.
std::string sensitivity_plot_svg(const SensitivityGrid& grid, std::span<const double> p_levels);

}  // namespace modwt
