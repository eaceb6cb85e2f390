#include "modwt/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <random>

#include "modwt/balance.hpp"
#include "modwt/error.hpp"
#include "modwt/rng.hpp"

namespace modwt {

void SensitivityConfig::validate() const {
  if (rho_grid.empty()) throw InputError("sensitivity: rho_grid is empty");
  for (double r : rho_grid)
    if (!(r >= 0.0 && r < 1.0)) throw InputError("sensitivity: rho values must lie in [0, 1)");
  for (double e : es_grid)
    if (!std::isfinite(e)) throw InputError("sensitivity: es_grid values must be finite");
  if (n_reps < 1) throw InputError("sensitivity: n_reps must be positive");
  for (double p : p_contours)
    if (!(p > 0.0 && p < 1.0)) throw InputError("sensitivity: p_contours must lie in (0, 1)");
}

SensitivityConfig SensitivityConfig::from_json(const nlohmann::json& j, const SensitivityConfig& defaults) {
  SensitivityConfig c = defaults;
  try {
    c.enabled = j.value("enabled", c.enabled);
    c.es_grid = j.value("es_grid", c.es_grid);
    c.rho_grid = j.value("rho_grid", c.rho_grid);
    c.n_reps = j.value("n_reps", c.n_reps);
    c.p_contours = j.value("p_contours", c.p_contours);
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("sensitivity: ") + e.what());
  }
  c.validate();
  return c;
}

SensitivityConfig SensitivityConfig::from_json(const nlohmann::json& j) { return from_json(j, SensitivityConfig{}); }

nlohmann::json SensitivityConfig::to_json() const {
  return {{"enabled", enabled}, {"es_grid", es_grid},       {"rho_grid", rho_grid},
          {"n_reps", n_reps},   {"p_contours", p_contours}, {"seed", seed}};
}

std::vector<double> auto_es_grid(double max_benchmark_es) {
  const int k = std::max(16, static_cast<int>(std::ceil(max_benchmark_es / 0.05 - 1e-9)));
  std::vector<double> grid;
  for (int i = -k; i <= k; ++i) grid.push_back(i * 5 / 100.0);
  return grid;
}

std::vector<StratumInputs> sensitivity_inputs(const Dataset& ds, std::span<const PropensityFit> fits) {
  std::vector<StratumInputs> out;
  auto add = [&](int z, const std::vector<std::size_t>& rows, std::vector<double> p) {
    out.push_back({stratum_label(ds, z), z, ds.subset(rows), std::move(p)});
  };
  for (const auto& f : fits) {
    if (f.moderator_level >= 0) {
      add(f.moderator_level, f.rows, f.propensity);
      continue;
    }
    for (int z = 0; z <= 1; ++z) {
      std::vector<std::size_t> rows;
      std::vector<double> p;
      for (std::size_t k = 0; k < f.rows.size(); ++k) {
        if (ds.moderator()[f.rows[k]] != z) continue;
        rows.push_back(f.rows[k]);
        p.push_back(f.propensity[k]);
      }
      if (!rows.empty()) add(z, rows, std::move(p));
    }
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.z < b.z; });
  return out;
}

namespace {

std::vector<double> composite(std::span<const double> propensity, const Dataset& d) {
  auto w = ate_weights(propensity, d.treatment());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] *= d.survey_weight()[i];
  return w;
}

double logit(double p) {
  p = std::clamp(p, kPropensityClamp, 1.0 - kPropensityClamp);
  return std::log(p / (1.0 - p));
}

}  // namespace

Baseline fit_baseline(const StratumInputs& in) {
  Baseline b;
  b.design = build_stratum_outcome_design(in.data);
  b.composite_weight = composite(in.propensity, in.data);
  b.fit = fit_weighted_logistic(b.design.matrix.values, b.design.terms(), in.data.outcome(), b.composite_weight);
  const Eigen::VectorXd eta = b.design.matrix.values * b.fit.beta;
  b.residual.resize(in.data.rows());
  for (std::size_t i = 0; i < b.residual.size(); ++i)
    b.residual[i] = in.data.outcome()[i] - expit(eta(static_cast<Eigen::Index>(i)));
  b.effect = marginal_risk_difference(b.fit.beta, b.fit.covariance, b.design, b.composite_weight).effect;
  const std::size_t n = in.data.rows();
  std::vector<double> ps_dir(n), out_dir(n);
  for (std::size_t i = 0; i < n; ++i) {
    ps_dir[i] = in.data.treatment()[i] - in.propensity[i];
    out_dir[i] = b.composite_weight[i] / in.data.survey_weight()[i] * b.residual[i];
  }
  b.score_directions = {std::move(ps_dir), std::move(out_dir)};
  return b;
}

OmittedVariable simulate_omitted_variable(std::span<const double> residual, std::span<const std::uint8_t> t,
                                          std::span<const double> survey_weight, double es, double rho,
                                          std::uint64_t rep_seed,
                                          std::span<const std::vector<double>> orthogonal_to) {
  if (!(std::abs(rho) < 1.0)) throw InputError("sensitivity: |rho| must be below 1");
  const std::size_t n = residual.size();
  double sw = 0.0;
  for (double s : survey_weight) sw += s;
  auto dot = [&](const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += survey_weight[i] * a[i] * b[i];
    return acc / sw;
  };
  auto center = [&](std::vector<double>& a) {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += survey_weight[i] * a[i];
    m /= sw;
    for (auto& v : a) v -= m;
  };
  auto scale = [&](std::vector<double>& a) {
    const double sd = std::sqrt(dot(a, a));
    if (!(sd > 0.0)) throw StatisticalError("sensitivity: degenerate column in omitted-variable construction");
    for (auto& v : a) v /= sd;
  };

  std::vector<double> r(residual.begin(), residual.end()), tt(t.begin(), t.end());
  center(r);
  scale(r);
  double pi = 0.0;
  for (std::size_t i = 0; i < n; ++i) pi += survey_weight[i] * t[i];
  pi /= sw;
  center(tt);
  scale(tt);

  const double q = dot(r, tt);
  const double kappa = es * std::sqrt(pi * (1.0 - pi));
  const double det = 1.0 - q * q;
  if (!(det > 1e-12)) throw StatisticalError("sensitivity: residuals are collinear with treatment");
  const double a = (rho - q * kappa) / det;
  const double b = (kappa - q * rho) / det;
  const double c2 = 1.0 - (a * a + b * b + 2.0 * a * b * q);
  OmittedVariable out;
  if (c2 < 0.0) {
    out.feasible = false;
    return out;
  }

  // Orthonormal basis of span{r~, T~, extra directions} for the projection.
  std::vector<std::vector<double>> basis{r, std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) basis[1][i] = (tt[i] - q * r[i]) / std::sqrt(det);
  auto project_out = [&](std::vector<double>& v) {
    for (int pass = 0; pass < 2; ++pass) {
      center(v);
      for (const auto& e : basis) {
        const double c = dot(v, e);
        for (std::size_t i = 0; i < n; ++i) v[i] -= c * e[i];
      }
    }
  };
  for (const auto& dir : orthogonal_to) {
    if (dir.size() != n) throw InputError("sensitivity: direction is not aligned with the stratum rows");
    std::vector<double> v = dir;
    center(v);
    const double before = std::sqrt(dot(v, v));
    project_out(v);
    const double after = std::sqrt(dot(v, v));
    if (!(after > 1e-8 * before)) continue;
    for (auto& x : v) x /= after;
    basis.push_back(std::move(v));
  }

  std::mt19937_64 rng(rep_seed);
  std::normal_distribution<double> normal;
  std::vector<double> e(n);
  for (auto& v : e) v = normal(rng);
  project_out(e);
  scale(e);

  const double c = std::sqrt(c2);
  out.u.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.u[i] = a * r[i] + b * tt[i] + c * e[i];
  return out;
}

Effect adjusted_effect(const StratumInputs& in, const Baseline& base, std::span<const double> u) {
  const auto& d = in.data;
  const auto n = static_cast<Eigen::Index>(d.rows());
  if (u.size() != d.rows()) throw InputError("sensitivity: U is not aligned with the stratum rows");

  // No intercept: U is centered, so p-hat only moves through U.
  Eigen::MatrixXd xu(n, 1);
  std::vector<double> offset(d.rows());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    xu(i, 0) = u[k];
    offset[k] = logit(in.propensity[k]);
  }
  const auto ps = fit_weighted_logistic(xu, {"U"}, d.treatment(), d.survey_weight(), {}, offset);
  std::vector<double> p(d.rows());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    p[k] = std::clamp(expit(offset[k] + ps.beta(0) * u[k]), kPropensityClamp,
                      1.0 - kPropensityClamp);
  }
  const auto w = composite(p, d);

  OutcomeDesign design = base.design;
  auto& x = design.matrix.values;
  x.conservativeResize(Eigen::NoChange, x.cols() + 1);
  for (Eigen::Index i = 0; i < n; ++i) x(i, x.cols() - 1) = u[static_cast<std::size_t>(i)];
  design.matrix.labels.push_back({"U", ""});

  LogisticOptions opt;
  opt.start = Eigen::VectorXd::Zero(x.cols());
  opt.start->head(base.fit.beta.size()) = base.fit.beta;
  const auto fit = fit_weighted_logistic(x, design.terms(), d.outcome(), w, opt);
  return marginal_risk_difference(fit.beta, fit.covariance, design, w).effect;
}

std::vector<BenchmarkPoint> benchmarks(const Dataset& stratum) {
  const auto dm = encode_balance(stratum);
  const auto s = stratum.survey_weight();
  std::vector<double> y(stratum.outcome().begin(), stratum.outcome().end());
  std::vector<BenchmarkPoint> out;
  for (Eigen::Index j = 0; j < dm.cols(); ++j) {
    std::vector<double> x(dm.values.col(j).data(), dm.values.col(j).data() + dm.rows());
    if (!(weighted_sd(x, s) > 0.0)) continue;
    out.push_back({dm.labels[static_cast<std::size_t>(j)], std::abs(weighted_smd(x, stratum.treatment(), s)),
                   std::abs(weighted_correlation(x, y, s))});
  }
  return out;
}

namespace {

struct RepResult {
  bool feasible = true;
  bool ok = false;
  double estimate = 0.0;
  double p = 0.0;
  std::string error;
};

RepResult run_rep(const StratumInputs& in, const Baseline& base, double es, double rho, std::uint64_t seed) {
  RepResult r;
  try {
    const auto ov = simulate_omitted_variable(base.residual, in.data.treatment(), in.data.survey_weight(), es,
                                              rho, seed, base.score_directions);
    if (!ov.feasible) {
      r.feasible = false;
      return r;
    }
    const auto e = adjusted_effect(in, base, ov.u);
    r.ok = true;
    r.estimate = e.estimate;
    r.p = e.p_value;
  } catch (const StatisticalError& e) {
    r.error = e.what();
  }
  return r;
}

}  // namespace

SensitivityGrid ov_grid(const StratumInputs& in, const SensitivityConfig& cfg, Execution exec) {
  cfg.validate();
  SensitivityGrid g;
  g.stratum = in.stratum;
  g.benchmarks = benchmarks(in.data);
  double max_es = 0.0;
  for (const auto& b : g.benchmarks) max_es = std::max(max_es, b.es);
  g.es_grid = cfg.es_grid.empty() ? auto_es_grid(max_es) : cfg.es_grid;
  g.rho_grid = cfg.rho_grid;

  const auto base = fit_baseline(in);
  g.baseline = base.effect;

  const std::size_t n_es = g.es_grid.size(), n_rho = g.rho_grid.size();
  const auto reps = static_cast<std::size_t>(cfg.n_reps);
  const auto n_tasks = static_cast<long>(n_es * n_rho * reps);
  std::vector<RepResult> results(static_cast<std::size_t>(n_tasks));
  std::exception_ptr fatal;

  auto task = [&](long k) {
    const auto idx = static_cast<std::size_t>(k);
    const std::size_t rep = idx % reps, cell = idx / reps;
    const std::size_t i = cell / n_rho, j = cell % n_rho;
    const auto seed = derive_seed({cfg.seed, static_cast<std::uint64_t>(in.z), i, j, rep});
    results[idx] = run_rep(in, base, g.es_grid[i], g.rho_grid[j], seed);
  };

  if (exec == Execution::serial) {
    for (long k = 0; k < n_tasks; ++k) task(k);
  } else {
#pragma omp parallel for schedule(dynamic, 4)
    for (long k = 0; k < n_tasks; ++k) {
      try {
        task(k);
      } catch (...) {
#pragma omp critical(modwt_sensitivity_fatal)
        if (!fatal) fatal = std::current_exception();
      }
    }
    if (fatal) std::rethrow_exception(fatal);
  }

  // Fixed-order reduction keeps the grid independent of scheduling.
  g.cells.resize(n_es * n_rho);
  for (std::size_t cell = 0; cell < g.cells.size(); ++cell) {
    auto& c = g.cells[cell];
    c.es = g.es_grid[cell / n_rho];
    c.rho = g.rho_grid[cell % n_rho];
    std::vector<double> est;
    double p_sum = 0.0;
    bool feasible = true;
    for (std::size_t rep = 0; rep < reps; ++rep) {
      const auto& r = results[cell * reps + rep];
      if (!r.feasible) {
        feasible = false;
        break;
      }
      if (r.ok) {
        est.push_back(r.estimate);
        p_sum += r.p;
      } else {
        ++c.n_failed;
        if (c.reason.empty()) c.reason = r.error;
      }
    }
    if (!feasible) {
      c.status = CellStatus::infeasible;
      c.mean_estimate = c.mean_p = c.sd_estimate = std::nan("");
      c.reason = "infeasible (es, rho) combination";
      continue;
    }
    c.n_ok = static_cast<int>(est.size());
    if (est.empty()) {
      c.status = CellStatus::failed;
      c.mean_estimate = c.mean_p = c.sd_estimate = std::nan("");
      continue;
    }
    double sum = 0.0;
    for (double v : est) sum += v;
    c.mean_estimate = sum / static_cast<double>(est.size());
    c.mean_p = p_sum / static_cast<double>(est.size());
    double ss = 0.0;
    for (double v : est) ss += (v - c.mean_estimate) * (v - c.mean_estimate);
    c.sd_estimate = est.size() > 1 ? std::sqrt(ss / static_cast<double>(est.size() - 1)) : 0.0;
    if (c.n_failed == 0) c.reason.clear();
  }
  return g;
}

std::vector<SensitivityGrid> ov_grids(const Dataset& ds, std::span<const PropensityFit> fits,
                                      const SensitivityConfig& cfg, Execution exec) {
  std::vector<SensitivityGrid> out;
  for (const auto& in : sensitivity_inputs(ds, fits)) out.push_back(ov_grid(in, cfg, exec));
  return out;
}

}  // namespace modwt
