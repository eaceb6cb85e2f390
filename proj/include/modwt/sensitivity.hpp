#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "modwt/outcome.hpp"
#include "modwt/ps.hpp"
#include "modwt/tabular.hpp"

namespace modwt {

struct SensitivityConfig {
  bool enabled = true;
  std::vector<double> es_grid;  // empty: derived from the benchmarks
  std::vector<double> rho_grid{0.0, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40};
  int n_reps = 100;
  std::vector<double> p_contours{0.05};
  std::uint64_t seed = 0;

  void validate() const;
  static SensitivityConfig from_json(const nlohmann::json& j);
  static SensitivityConfig from_json(const nlohmann::json& j, const SensitivityConfig& defaults);
  nlohmann::json to_json() const;
};

// Symmetric grid with step 0.05 spanning at least [-0.80, 0.80] and the
// largest benchmark |SMD|.
std::vector<double> auto_es_grid(double max_benchmark_es);

// Everything the simulation needs for one moderator stratum.
struct StratumInputs {
  std::string stratum;
  int z = 0;
  Dataset data;                   // rows of the stratum only
  std::vector<double> propensity;  // baseline p-hat, aligned with data
};

std::vector<StratumInputs> sensitivity_inputs(const Dataset& ds, std::span<const PropensityFit> fits);

// Stratum outcome model on [1, T, X] with the baseline composite weights.
struct Baseline {
  OutcomeDesign design;
  OutcomeFit fit;
  std::vector<double> composite_weight;
  std::vector<double> residual;  // y - fitted probability
  Effect effect;                  // g-computation RD within the stratum
  // Score directions of the two refits (T - p-hat for the propensity update,
  // ps_weight * residual for the outcome model). e is kept orthogonal to them.
  std::vector<std::vector<double>> score_directions;
};

Baseline fit_baseline(const StratumInputs& in);

struct OmittedVariable {
  std::vector<double> u;
  bool feasible = true;
};

// U = a r~ + b T~ + c e with e orthogonalized against 1, r~, T~ and any
// extra directions in the survey-weighted inner product, so corr(U, r) = rho
// and SMD(U) = es hold exactly. Infeasible when the required c^2 is negative.
OmittedVariable simulate_omitted_variable(std::span<const double> residual, std::span<const std::uint8_t> t,
                                          std::span<const double> survey_weight, double es, double rho,
                                          std::uint64_t rep_seed,
                                          std::span<const std::vector<double>> orthogonal_to = {});

// Offset logistic update of the propensity on U (no intercept), new composite weights, and
// the stratum outcome model refit with U appended. Throws StatisticalError
// when either fit fails.
Effect adjusted_effect(const StratumInputs& in, const Baseline& base, std::span<const double> u);

struct BenchmarkPoint {
  ColumnLabel label;
  double es = 0.0;   // |SMD| vs treatment, survey weights
  double rho = 0.0;  // |weighted correlation| with the outcome
};

std::vector<BenchmarkPoint> benchmarks(const Dataset& stratum);

enum class CellStatus { ok, infeasible, failed };

struct SensitivityCell {
  double es = 0.0;
  double rho = 0.0;
  CellStatus status = CellStatus::ok;
  int n_ok = 0;
  int n_failed = 0;
  double mean_estimate = 0.0;
  double mean_p = 0.0;
  double sd_estimate = 0.0;
  std::string reason;  // first failure message when every rep failed
};

struct SensitivityGrid {
  std::string stratum;
  std::vector<double> es_grid;
  std::vector<double> rho_grid;
  std::vector<SensitivityCell> cells;  // es-major: cells[i * rho_grid.size() + j]
  Effect baseline;
  std::vector<BenchmarkPoint> benchmarks;

  const SensitivityCell& at(std::size_t es_index, std::size_t rho_index) const {
    return cells[es_index * rho_grid.size() + rho_index];
  }
};

enum class Execution { serial, parallel };

SensitivityGrid ov_grid(const StratumInputs& in, const SensitivityConfig& cfg,
                        Execution exec = Execution::parallel);

std::vector<SensitivityGrid> ov_grids(const Dataset& ds, std::span<const PropensityFit> fits,
                                      const SensitivityConfig& cfg, Execution exec = Execution::parallel);

}  // namespace modwt
