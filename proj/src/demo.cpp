#include "modwt/demo.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "modwt/csv.hpp"

namespace modwt {

SchemaConfig DemoDgp::schema() const {
  SchemaConfig s;
  s.treatment = "treat";
  s.moderator = "female";
  s.outcome = "smoke";
  s.survey_weight = "wt";
  for (const auto& c : categoricals) s.covariates.push_back({c.name, CovariateKind::categorical, c.levels});
  s.covariates.push_back({continuous_name, CovariateKind::continuous, {}});
  return s;
}

double DemoDgp::treatment_eta(int z, const std::vector<int>& levels, double score) const {
  const auto& m = treatment[static_cast<std::size_t>(z)];
  double eta = m.intercept + m.score * score;
  for (std::size_t k = 0; k < levels.size(); ++k) eta += m.categorical[k][static_cast<std::size_t>(levels[k])];
  return eta;
}

double DemoDgp::outcome_eta(int t, int z, const std::vector<int>& levels, double score) const {
  double eta = a0 + a1 * t + a2 * z + a3 * t * z + outcome_score * score;
  for (std::size_t k = 0; k < levels.size(); ++k) eta += outcome_categorical[k][static_cast<std::size_t>(levels[k])];
  return eta;
}

Dataset DemoDgp::generate(std::size_t n, std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto bernoulli = [&](double p) { return unif(rng) < p ? std::uint8_t{1} : std::uint8_t{0}; };
  auto expit = [](double e) { return 1.0 / (1.0 + std::exp(-e)); };

  std::vector<std::int64_t> ids(n);
  std::vector<std::uint8_t> t(n), z(n), y(n);
  std::vector<double> w(n);
  std::vector<std::vector<double>> cov(categoricals.size() + 1, std::vector<double>(n));
  std::vector<int> levels(categoricals.size());
  for (std::size_t i = 0; i < n; ++i) {
    ids[i] = static_cast<std::int64_t>(i + 1);
    z[i] = bernoulli(0.5);
    for (std::size_t k = 0; k < categoricals.size(); ++k) {
      std::discrete_distribution<int> pick(categoricals[k].probs.begin(), categoricals[k].probs.end());
      levels[k] = pick(rng);
      cov[k][i] = levels[k];
    }
    const double score = normal(rng);
    cov.back()[i] = score;
    t[i] = bernoulli(expit(treatment_eta(z[i], levels, score)));
    y[i] = bernoulli(expit(outcome_eta(t[i], z[i], levels, score)));
    w[i] = 0.5 + unif(rng);
  }
  return Dataset(schema(), std::move(ids), std::move(t), std::move(z), std::move(y), std::move(w), std::move(cov));
}

std::string dataset_to_csv(const Dataset& ds) {
  std::ostringstream out;
  csv::Writer wr(out);
  const auto& s = ds.schema();
  wr.field(std::string_view(s.treatment)).field(std::string_view(s.moderator)).field(std::string_view(s.outcome));
  if (s.survey_weight) wr.field(std::string_view(*s.survey_weight));
  for (const auto& c : s.covariates) wr.field(std::string_view(c.name));
  wr.end_row();
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    wr.field(static_cast<int>(ds.treatment()[i])).field(static_cast<int>(ds.moderator()[i])).field(static_cast<int>(ds.outcome()[i]));
    if (s.survey_weight) wr.field(ds.survey_weight()[i]);
    for (std::size_t k = 0; k < s.covariates.size(); ++k) {
      const double v = ds.covariate(k)[i];
      if (s.covariates[k].kind == CovariateKind::categorical)
        wr.field(std::string_view(s.covariates[k].levels[static_cast<std::size_t>(v)]));
      else
        wr.field(v);
    }
    wr.end_row();
  }
  return out.str();
}

}  // namespace modwt
