#pragma once

#include <array>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "modwt/tabular.hpp"

namespace modwt {

// Level counts by (treatment, moderator) cell for one categorical covariate.
struct ContingencyTable {
  std::string covariate;
  std::vector<std::string> levels;
  // counts[level][t][z]
  std::vector<std::array<std::array<long long, 2>, 2>> counts;
  // survey-weighted share of each level within its (t, z) cell
  std::vector<std::array<std::array<double, 2>, 2>> weighted_share;

  long long cell_total(int t, int z) const;
};

ContingencyTable crosstab(const Dataset& ds, const std::string& covariate);

struct ContinuousCellSummary {
  int t = 0;
  int z = 0;
  long long n = 0;
  double min = 0.0, q01 = 0.0, q25 = 0.0, median = 0.0, q75 = 0.0, q99 = 0.0, max = 0.0;
};

struct PercentileGap {
  std::string covariate;
  int z = 0;
  double q01_gap = 0.0;  // treated q01 - control q01
  double q99_gap = 0.0;  // treated q99 - control q99
};

struct EmptyCell {
  std::string covariate;
  std::string level;
  int t = 0;
  int z = 0;
};

struct RangeViolation {
  std::string covariate;
  int t = 0;  // arm whose support lies outside the other arm's hull
  int z = 0;
  std::string direction;  // "below" or "above" the other arm's range
};

struct OverlapReport {
  std::vector<ContingencyTable> categorical;
  std::vector<std::pair<std::string, std::vector<ContinuousCellSummary>>> continuous;
  std::vector<PercentileGap> percentile_gaps;
  std::vector<EmptyCell> empty_cells;
  std::vector<RangeViolation> range_violations;

  bool ok() const { return empty_cells.empty() && range_violations.empty(); }
  nlohmann::json to_json() const;
  std::string to_text() const;
};

OverlapReport overlap_report(const Dataset& ds);

// Type-7 (linear interpolation) sample quantile of unsorted values.
double sample_quantile(std::vector<double> values, double q);

}  // namespace modwt
