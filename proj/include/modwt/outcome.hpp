#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "modwt/tabular.hpp"

namespace modwt {

struct LogisticOptions {
  int max_iterations = 100;
  double score_tolerance = 1e-10;      // max |score| / n
  double deviance_tolerance = 1e-12;   // relative change
  double separation_eta = 30.0;        // |linear predictor| treated as pinned
  double separation_step = 1e-3;       // Newton step still this long at a flat deviance
  std::optional<Eigen::VectorXd> start;
};

// Weighted logistic fit. Weights are normalized to mean 1 internally, so
// coefficients, scores and the sandwich covariance do not depend on the
// weight scale.
struct OutcomeFit {
  std::vector<std::string> terms;
  Eigen::VectorXd beta;
  Eigen::MatrixXd covariance;  // sandwich A^-1 B A^-1
  std::size_t n = 0;
  double weighted_n = 0.0;     // sum of the raw weights
  int iterations = 0;
  double final_step_norm = 0.0;
  double deviance = 0.0;       // on normalized weights
  double max_score = 0.0;      // max |sum w (y - p) x| / n at the solution

  Eigen::VectorXd standard_errors() const { return covariance.diagonal().cwiseSqrt(); }
  std::size_t term_index(const std::string& name) const;
};

OutcomeFit fit_weighted_logistic(const Eigen::MatrixXd& x, std::vector<std::string> terms,
                                 std::span<const std::uint8_t> y, std::span<const double> w,
                                 const LogisticOptions& options = {}, std::span<const double> offset = {});

// V = A^-1 B A^-1 with A = sum w p(1-p) x x', B = sum (w (y-p))^2 x x',
// weights as given (no normalization).
Eigen::MatrixXd sandwich_covariance(const Eigen::VectorXd& beta, const Eigen::MatrixXd& x,
                                    std::span<const std::uint8_t> y, std::span<const double> w,
                                    std::span<const double> offset = {});

// A^-1 with weights as given; the textbook model-based covariance.
Eigen::MatrixXd model_based_covariance(const Eigen::VectorXd& beta, const Eigen::MatrixXd& x,
                                       std::span<const double> w, std::span<const double> offset = {});

// Outcome-model design with column roles. Intercept is always column 0.
struct OutcomeDesign {
  DesignMatrix matrix;
  int treatment_col = 1;
  int moderator_col = -1;
  int interaction_col = -1;

  std::vector<std::string> terms() const;
};

// (Intercept), T, Z, T:Z, then encoded X; no X-by-Z interactions.
OutcomeDesign build_outcome_design(const Dataset& ds);
// (Intercept), T, then encoded X columns that vary within the stratum.
OutcomeDesign build_stratum_outcome_design(const Dataset& ds);

struct Effect {
  double estimate = 0.0;
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double p_value = 1.0;
};

Effect make_effect(double estimate, double se);

struct RiskDifference {
  Effect effect;
  Eigen::VectorXd gradient;  // d RD / d beta
};

// g-computation: RD = sum_i w_i [expit(x_i1' b) - expit(x_i0' b)] / sum w_i
// over the rows in `rows` (all rows when empty), with T set to 1/0 and, when
// z is given, Z and T:Z set counterfactually. Delta-method SE from cov.
RiskDifference marginal_risk_difference(const Eigen::VectorXd& beta, const Eigen::MatrixXd& cov,
                                        const OutcomeDesign& design, std::span<const double> w,
                                        std::optional<int> z = std::nullopt,
                                        std::span<const std::size_t> rows = {});

enum class MateAveraging { full_sample, within_stratum };

struct StratumEffect {
  int z = 0;
  RiskDifference rd;
};

struct ModerationTest {
  Effect interaction;  // alpha_3 on the log-odds scale
};

struct MateEstimate {
  std::vector<StratumEffect> strata;
  ModerationTest moderation;
};

MateEstimate mate_estimates(const OutcomeFit& fit, const OutcomeDesign& design, const Dataset& ds,
                            std::span<const double> w, MateAveraging averaging = MateAveraging::full_sample);

// Wald test of the interaction coefficient with the sandwich SE.
ModerationTest moderation_test(const OutcomeFit& fit, const OutcomeDesign& design);

double expit(double eta);
double normal_two_sided_p(double z);

}  // namespace modwt
