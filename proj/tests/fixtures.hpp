#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "modwt/tabular.hpp"

namespace fixtures {

inline modwt::SchemaConfig schema(std::vector<modwt::CovariateSpec> covariates, bool weighted = true) {
  modwt::SchemaConfig s;
  s.treatment = "t";
  s.moderator = "z";
  s.outcome = "y";
  if (weighted) s.survey_weight = "w";
  s.covariates = std::move(covariates);
  return s;
}

inline modwt::CovariateSpec categorical(std::string name, std::vector<std::string> levels) {
  return {std::move(name), modwt::CovariateKind::categorical, std::move(levels)};
}

inline modwt::CovariateSpec continuous(std::string name) { return {std::move(name), modwt::CovariateKind::continuous, {}}; }

inline modwt::Dataset make(const modwt::SchemaConfig& s, std::vector<std::uint8_t> t, std::vector<std::uint8_t> z,
                           std::vector<std::uint8_t> y, std::vector<double> w, std::vector<std::vector<double>> x) {
  std::vector<std::int64_t> ids(t.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<std::int64_t>(i) + 1;
  return modwt::Dataset(s, std::move(ids), std::move(t), std::move(z), std::move(y), std::move(w), std::move(x));
}

// Small confounded study: one 3-level factor and one continuous covariate.
inline modwt::Dataset confounded(std::size_t n, std::uint64_t seed, double z_share = 0.5) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g;
  const auto s = schema({categorical("grp", {"a", "b", "c"}), continuous("x")});
  std::vector<std::uint8_t> t(n), z(n), y(n);
  std::vector<double> w(n), grp(n), x(n);
  for (std::size_t i = 0; i < n; ++i) {
    z[i] = u(rng) < z_share;
    grp[i] = static_cast<double>(static_cast<int>(u(rng) * 3.0));
    x[i] = g(rng);
    const double eta_t = -0.5 + (z[i] ? 0.8 : -0.4) * x[i] + (z[i] ? -0.6 : 0.5) * (grp[i] == 2.0);
    t[i] = u(rng) < 1.0 / (1.0 + std::exp(-eta_t));
    const double eta_y = -0.8 + 0.5 * t[i] + 0.4 * x[i] + 0.3 * (grp[i] == 1.0) + 0.2 * z[i];
    y[i] = u(rng) < 1.0 / (1.0 + std::exp(-eta_y));
    w[i] = 0.5 + u(rng);
  }
  return make(s, t, z, y, w, {grp, x});
}

}  // namespace fixtures
