#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "modwt/tabular.hpp"

namespace modwt {

// Synthetic moderation study used by `modwt demo` and the acceptance suite.
//
//   Z ~ Bernoulli(0.5), independent of X
//   X: age (4 levels), race (3), educ (3), employ (3), score ~ N(0,1)
//   logit P(T=1 | X, Z=z) = stratum-specific linear predictor
//   logit P(Y=1 | T, Z, X) = a0 + a1 T + a2 Z + a3 T Z + linear(X)
//   survey weight ~ Uniform(0.5, 1.5), independent of everything
//
// a1 and a3 are calibrated so the marginal risk differences are 0.05 (Z=0)
// and 0.15 (Z=1); the null-interaction variant sets a3 = 0.
struct DemoDgp {
  struct Categorical {
    const char* name;
    std::vector<std::string> levels;
    std::vector<double> probs;
  };

  struct TreatmentModel {
    double intercept;
    std::vector<std::vector<double>> categorical;  // per covariate, per level
    double score;
  };

  std::vector<Categorical> categoricals{
      {"age", {"18-25", "26-34", "35-49", "50+"}, {0.25, 0.25, 0.25, 0.25}},
      {"race", {"white", "black", "hispanic"}, {0.55, 0.25, 0.20}},
      {"educ", {"hs_or_less", "some_college", "college"}, {0.30, 0.40, 0.30}},
      {"employ", {"full_time", "part_time", "other"}, {0.55, 0.25, 0.20}},
  };
  std::string continuous_name = "score";

  std::array<TreatmentModel, 2> treatment{{
      {-0.6, {{0, -0.2, -0.5, -0.9}, {0, 0.3, 0.5}, {0, 0.2, -0.3}, {0, 0.4, 0.6}}, 0.4},
      {-0.4, {{0, -0.4, -0.9, -1.4}, {0, 0.1, 0.2}, {0, -0.2, -0.5}, {0, 0.5, 0.8}}, -0.3},
  }};

  double a0 = -1.2;
  double a1 = 0.2837403355555698;
  double a2 = -0.3;
  double a3 = 0.5752423094692767;
  std::vector<std::vector<double>> outcome_categorical{{0, 0.3, 0.5, 0.2}, {0, -0.3, -0.4}, {0, -0.3, -0.8}, {0, 0.2, 0.4}};
  double outcome_score = 0.3;

  static DemoDgp null_interaction() {
    DemoDgp d;
    d.a3 = 0.0;
    return d;
  }

  SchemaConfig schema() const;
  Dataset generate(std::size_t n, std::uint64_t seed) const;

  // Linear predictors given level indices and the continuous score.
  double treatment_eta(int z, const std::vector<int>& levels, double score) const;
  double outcome_eta(int t, int z, const std::vector<int>& levels, double score) const;
};

std::string dataset_to_csv(const Dataset& ds);

}  // namespace modwt
