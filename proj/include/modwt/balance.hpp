#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "modwt/tabular.hpp"

namespace modwt {

struct PropensityFit;

inline constexpr double kBalanceThreshold = 0.10;

struct ArmMeans {
  double treated = 0.0;
  double control = 0.0;
};

// Weighted mean of x within each arm.
ArmMeans weighted_arm_means(std::span<const double> x, std::span<const std::uint8_t> t, std::span<const double> w);

// Population-form weighted standard deviation over all rows.
double weighted_sd(std::span<const double> x, std::span<const double> w);

// Weighted Pearson correlation over all rows.
double weighted_correlation(std::span<const double> x, std::span<const double> y, std::span<const double> w);

// (mean_T - mean_C) / pooled_sd. pooled_sd == 0 returns 0 when the means
// agree and throws StatisticalError otherwise.
double weighted_smd(std::span<const double> x, std::span<const std::uint8_t> t, std::span<const double> w,
                    double pooled_sd);

// Same, with pooled_sd = weighted_sd(x, w).
double weighted_smd(std::span<const double> x, std::span<const std::uint8_t> t, std::span<const double> w);

// Sup-distance between the arms' weighted ECDFs, evaluated at every
// distinct value of x. For 0/1 columns this is |mean_T - mean_C| exactly.
double weighted_ks(std::span<const double> x, std::span<const std::uint8_t> t, std::span<const double> w);

// KS with a caller-supplied ascending order of x (ties in any order).
double weighted_ks_sorted(std::span<const double> x, std::span<const std::uint8_t> t, std::span<const double> w,
                          std::span<const std::uint32_t> order);

bool is_binary_column(std::span<const double> x);

// Balance columns of one stratum with the per-column pieces that do not
// depend on the PS weights precomputed once.
struct BalanceColumns {
  std::vector<ColumnLabel> labels;
  std::vector<std::vector<double>> columns;
  std::vector<double> pooled_sd;                   // survey-weighted, full stratum
  std::vector<std::uint8_t> binary;                // 1 when the column is 0/1
  std::vector<std::vector<std::uint32_t>> order;   // ascending order; empty for binary columns

  std::size_t size() const { return columns.size(); }
};

BalanceColumns prepare_balance_columns(const DesignMatrix& dm, std::span<const double> survey_weight);

struct Criterion {
  double ks_max = 0.0;
  double es_max = 0.0;  // max |SMD|
};

// Max KS and max |SMD| over all balance columns under weights w.
// The serial version is the reference; the OpenMP version splits the
// column loop and must agree bit for bit.
Criterion balance_criterion_serial(const BalanceColumns& cols, std::span<const std::uint8_t> t,
                                   std::span<const double> w);
Criterion balance_criterion_omp(const BalanceColumns& cols, std::span<const std::uint8_t> t,
                                std::span<const double> w);

enum class BalancePhase { pre, post };

struct BalanceRow {
  std::string stratum;
  std::string covariate;
  std::string level;  // "–" for continuous covariates
  BalancePhase phase = BalancePhase::pre;
  double mean_treated = 0.0;
  double mean_control = 0.0;
  double smd = 0.0;
  double ks = 0.0;

  bool flag_smd() const { return std::abs(smd) > kBalanceThreshold; }
  bool flag_ks() const { return ks > kBalanceThreshold; }
};

struct BalanceSummary {
  std::string stratum;
  BalancePhase phase = BalancePhase::pre;
  double max_abs_smd = 0.0;
  double max_ks = 0.0;
};

struct BalanceTable {
  std::vector<BalanceRow> rows;
  std::vector<BalanceSummary> summary;

  bool any_post_flag() const;
  std::vector<std::string> strata() const;
};

// Pre rows use survey weights, post rows use the fits' composite weights.
// One block per moderator level present in ds.
BalanceTable balance_table(const Dataset& ds, std::span<const PropensityFit> fits);

std::string stratum_label(const Dataset& ds, int z);
const char* to_string(BalancePhase p);

}  // namespace modwt
