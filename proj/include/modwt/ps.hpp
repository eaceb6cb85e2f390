#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "modwt/balance.hpp"
#include "modwt/tabular.hpp"

namespace modwt {

enum class StopMethod { ks_max, es_max };

struct BoostConfig {
  int n_trees = 10000;
  int interaction_depth = 2;  // splits per tree, grown best-first
  double shrinkage = 0.01;
  double bag_fraction = 1.0;
  double min_node_weight = 10.0;  // in units of mean-normalized sample weight
  StopMethod stop_method = StopMethod::ks_max;
  int eval_stride = 10;
  std::uint64_t seed = 0;
  int max_bins = 256;  // split candidates per continuous column

  void validate() const;
  static BoostConfig from_json(const nlohmann::json& j);
  static BoostConfig from_json(const nlohmann::json& j, BoostConfig defaults);
  nlohmann::json to_json() const;
};

inline constexpr double kPropensityClamp = 1e-6;

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;  // go left when x <= threshold
  int left = -1;
  int right = -1;
  double value = 0.0;  // unscaled Newton step at leaves
};

struct RegressionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  template <typename Row>
  double predict(const Row& x) const {
    int k = 0;
    while (nodes[k].feature >= 0) k = x(nodes[k].feature) <= nodes[k].threshold ? nodes[k].left : nodes[k].right;
    return nodes[k].value;
  }
  int depth() const;
};

class BoostedModel {
 public:
  BoostedModel() = default;
  BoostedModel(double initial_score, double shrinkage, std::vector<RegressionTree> trees)
      : initial_score_(initial_score), shrinkage_(shrinkage), trees_(std::move(trees)) {}

  int iterations() const { return static_cast<int>(trees_.size()); }
  double initial_score() const { return initial_score_; }
  double shrinkage() const { return shrinkage_; }
  const std::vector<RegressionTree>& trees() const { return trees_; }

  // F0 + shrinkage * sum of the first `iteration` trees.
  Eigen::VectorXd score(const Eigen::MatrixXd& x, int iteration) const;
  // expit(score) clamped into [1e-6, 1 - 1e-6].
  Eigen::VectorXd propensity(const Eigen::MatrixXd& x, int iteration) const;

 private:
  double initial_score_ = 0.0;
  double shrinkage_ = 0.01;
  std::vector<RegressionTree> trees_;
};

BoostedModel fit_boosted_propensity(const DesignMatrix& design, std::span<const std::uint8_t> treatment,
                                    std::span<const double> sample_weights, const BoostConfig& cfg);

// Weighted Bernoulli deviance (mean-normalized weights) after 0..M trees.
std::vector<double> deviance_path(const BoostedModel& model, const DesignMatrix& design,
                                  std::span<const std::uint8_t> treatment, std::span<const double> sample_weights);

// w = T/p + (1-T)/(1-p), with p clamped into [1e-6, 1 - 1e-6].
std::vector<double> ate_weights(std::span<const double> propensity, std::span<const std::uint8_t> treatment);

// (sum w)^2 / sum w^2 over rows of the given arm.
double effective_sample_size(std::span<const double> w, std::span<const std::uint8_t> t, int arm);

Criterion evaluate_criterion(const BoostedModel& model, int iteration, const DesignMatrix& design,
                             const BalanceColumns& balance, std::span<const std::uint8_t> treatment,
                             std::span<const double> sample_weights);

struct IterationSelection {
  int iteration = 0;
  std::vector<std::pair<int, double>> evaluated;  // ascending iteration, unique
};

// Coarse pass every `stride` iterations plus both endpoints, then every
// iteration within +-stride of the coarse minimum. Global minimum over the
// evaluated points; ties go to the smallest iteration.
IterationSelection select_iteration(int n_iterations, int stride, const std::function<double(int)>& criterion);

struct TracePoint {
  int iteration = 0;
  double ks_max = 0.0;
  double es_max = 0.0;
};

struct PropensityFit {
  std::string stratum;  // "<moderator>_<z>" or "pooled"
  int moderator_level = -1;  // -1 when pooled
  std::vector<std::size_t> rows;  // indices into the source dataset
  BoostedModel model;
  int selected_iteration = 0;
  std::vector<TracePoint> criterion_trace;
  std::vector<double> propensity;
  std::vector<double> ps_weight;
  std::vector<double> composite_weight;
  double ess_treated = 0.0;
  double ess_control = 0.0;
};

// Boost, evaluate the stopping criterion along the path, and export weights
// at the selected iteration.
PropensityFit fit_propensity(const DesignMatrix& design, const BalanceColumns& balance,
                             std::span<const std::uint8_t> treatment, std::span<const double> survey_weight,
                             const BoostConfig& cfg);

// One fit per moderator level present; per-stratum seed = cfg.seed ^ z.
std::vector<PropensityFit> fit_stratified(const Dataset& ds, const BoostConfig& cfg);

// Single fit with Z as a design column; seed = cfg.seed ^ 2.
PropensityFit fit_pooled(const Dataset& ds, const BoostConfig& cfg);

// Full-length composite weight vector assembled from fits covering ds.
std::vector<double> composite_weights(const Dataset& ds, std::span<const PropensityFit> fits);

}  // namespace modwt
