#include "modwt/outcome.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "modwt/error.hpp"

namespace modwt {

double expit(double eta) {
  return eta >= 0 ? 1.0 / (1.0 + std::exp(-eta)) : std::exp(eta) / (1.0 + std::exp(eta));
}

double normal_two_sided_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

Effect make_effect(double estimate, double se) {
  Effect e;
  e.estimate = estimate;
  e.se = se;
  e.ci_lo = estimate - 1.96 * se;
  e.ci_hi = estimate + 1.96 * se;
  e.p_value = se > 0.0 ? normal_two_sided_p(estimate / se) : (estimate == 0.0 ? 1.0 : 0.0);
  return e;
}

std::size_t OutcomeFit::term_index(const std::string& name) const {
  for (std::size_t k = 0; k < terms.size(); ++k)
    if (terms[k] == name) return k;
  throw InputError("outcome: unknown term '" + name + "'");
}

namespace {

Eigen::VectorXd linear_predictor(const Eigen::MatrixXd& x, const Eigen::VectorXd& beta, std::span<const double> offset) {
  Eigen::VectorXd eta = x * beta;
  if (!offset.empty())
    for (Eigen::Index i = 0; i < eta.size(); ++i) eta(i) += offset[static_cast<std::size_t>(i)];
  return eta;
}

double deviance(const Eigen::VectorXd& eta, std::span<const std::uint8_t> y, const Eigen::VectorXd& w) {
  double d = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    const double e = eta(i);
    const double sp = e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
    d += w(i) * (sp - y[static_cast<std::size_t>(i)] * e);
  }
  return 2.0 * d;
}

void check_rank(const Eigen::MatrixXd& x, const std::vector<std::string>& terms) {
  Eigen::MatrixXd scaled = x;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double norm = x.col(j).norm();
    if (norm > 0) scaled.col(j) /= norm;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(scaled);
  qr.setThreshold(1e-9);
  if (qr.rank() == x.cols()) return;
  std::ostringstream msg;
  msg << "outcome: design is rank deficient (rank " << qr.rank() << " of " << x.cols() << "); aliased columns:";
  const auto& perm = qr.colsPermutation().indices();
  for (Eigen::Index k = qr.rank(); k < x.cols(); ++k) msg << " '" << terms[static_cast<std::size_t>(perm(k))] << "'";
  throw RankDeficiencyError(msg.str());
}

}  // namespace

Eigen::MatrixXd sandwich_covariance(const Eigen::VectorXd& beta, const Eigen::MatrixXd& x,
                                    std::span<const std::uint8_t> y, std::span<const double> w,
                                    std::span<const double> offset) {
  const Eigen::VectorXd eta = linear_predictor(x, beta, offset);
  const auto p = x.cols();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p);
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd wa(x.rows()), wb(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    const double pi = expit(eta(i));
    wa(i) = w[k] * pi * (1.0 - pi);
    const double u = w[k] * (y[k] - pi);
    wb(i) = u * u;
  }
  a.selfadjointView<Eigen::Lower>().rankUpdate(x.transpose() * wa.cwiseSqrt().asDiagonal());
  b.selfadjointView<Eigen::Lower>().rankUpdate(x.transpose() * wb.cwiseSqrt().asDiagonal());
  a = a.selfadjointView<Eigen::Lower>();
  b = b.selfadjointView<Eigen::Lower>();
  Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-14)
    throw StatisticalError("outcome: information matrix is singular");
  const Eigen::MatrixXd ainv = ldlt.solve(Eigen::MatrixXd::Identity(p, p));
  Eigen::MatrixXd v = ainv * b * ainv;
  return 0.5 * (v + v.transpose());
}

Eigen::MatrixXd model_based_covariance(const Eigen::VectorXd& beta, const Eigen::MatrixXd& x,
                                       std::span<const double> w, std::span<const double> offset) {
  const Eigen::VectorXd eta = linear_predictor(x, beta, offset);
  Eigen::VectorXd wa(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double pi = expit(eta(i));
    wa(i) = w[static_cast<std::size_t>(i)] * pi * (1.0 - pi);
  }
  const Eigen::MatrixXd a = x.transpose() * wa.asDiagonal() * x;
  return a.ldlt().solve(Eigen::MatrixXd::Identity(x.cols(), x.cols()));
}

OutcomeFit fit_weighted_logistic(const Eigen::MatrixXd& x, std::vector<std::string> terms,
                                 std::span<const std::uint8_t> y, std::span<const double> w,
                                 const LogisticOptions& options, std::span<const double> offset) {
  const auto n = x.rows();
  const auto p = x.cols();
  if (static_cast<std::size_t>(n) != y.size() || y.size() != w.size())
    throw InputError("outcome: design, outcome and weights differ in length");
  if (!offset.empty() && offset.size() != y.size()) throw InputError("outcome: offset length mismatch");
  if (terms.size() != static_cast<std::size_t>(p)) throw InputError("outcome: term count mismatch");
  const auto ones = std::count(y.begin(), y.end(), std::uint8_t{1});
  if (ones == 0 || ones == n) throw StatisticalError("outcome: outcome has a single class");
  check_rank(x, terms);

  const double wsum = std::accumulate(w.begin(), w.end(), 0.0);
  Eigen::VectorXd wn(n);
  for (Eigen::Index i = 0; i < n; ++i) wn(i) = w[static_cast<std::size_t>(i)] * static_cast<double>(n) / wsum;

  Eigen::VectorXd beta = options.start ? *options.start : Eigen::VectorXd::Zero(p);
  if (beta.size() != p) throw InputError("outcome: start vector has wrong length");
  Eigen::VectorXd eta = linear_predictor(x, beta, offset);
  double dev = deviance(eta, y, wn);

  OutcomeFit fit;
  fit.terms = std::move(terms);
  fit.n = static_cast<std::size_t>(n);
  fit.weighted_n = wsum;

  std::vector<double> dev_trace{dev};
  Eigen::VectorXd score(p), hw(n), resid(n);
  auto compute_score = [&](const Eigen::VectorXd& e) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double pi = expit(e(i));
      hw(i) = wn(i) * pi * (1.0 - pi);
      resid(i) = wn(i) * (y[static_cast<std::size_t>(i)] - pi);
    }
    score.noalias() = x.transpose() * resid;
  };

  bool converged = false;
  compute_score(eta);
  for (int it = 1; it <= options.max_iterations; ++it) {
    fit.iterations = it;
    Eigen::MatrixXd info = Eigen::MatrixXd::Zero(p, p);
    info.selfadjointView<Eigen::Lower>().rankUpdate(x.transpose() * hw.cwiseSqrt().asDiagonal());
    info = info.selfadjointView<Eigen::Lower>();
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    if (ldlt.info() != Eigen::Success) throw StatisticalError("outcome: IRLS information matrix not positive definite");
    Eigen::VectorXd step = ldlt.solve(score);

    double scale = 1.0;
    Eigen::VectorXd trial_beta, trial_eta;
    double trial_dev = 0.0;
    for (int half = 0; half < 40; ++half) {
      trial_beta = beta + scale * step;
      trial_eta = linear_predictor(x, trial_beta, offset);
      trial_dev = deviance(trial_eta, y, wn);
      if (std::isfinite(trial_dev) && trial_dev <= dev * (1.0 + 1e-10) + 1e-300) break;
      scale *= 0.5;
    }
    fit.final_step_norm = (scale * step).norm();
    const double rel_change = std::abs(dev - trial_dev) / (std::abs(trial_dev) + 0.1);
    beta = trial_beta;
    eta = trial_eta;
    dev = trial_dev;
    dev_trace.push_back(dev);
    compute_score(eta);

    if (eta.cwiseAbs().maxCoeff() > options.separation_eta) {
      const auto pinned = (eta.array().abs() > options.separation_eta).count();
      throw SeparationError("outcome: separation detected (" + std::to_string(pinned) +
                            " rows with fitted probability pinned at 0 or 1)");
    }
    const double max_score = score.cwiseAbs().maxCoeff() / static_cast<double>(n);
    if (max_score < options.score_tolerance || rel_change < options.deviance_tolerance) {
      // Converging with a long Newton step means the coefficients are running
      // off along a separating direction while score and deviance vanish.
      if (fit.final_step_norm > options.separation_step) {
        const auto pinned = (eta.array().abs() > 15.0).count();
        throw SeparationError("outcome: separation detected (coefficients diverging; " + std::to_string(pinned) +
                              " rows with fitted probability near 0 or 1)");
      }
      converged = true;
      break;
    }
  }
  if (!converged) {
    std::ostringstream msg;
    msg << "outcome: IRLS did not converge in " << options.max_iterations << " iterations; deviance trace:";
    for (double d : dev_trace) msg << ' ' << d;
    throw ConvergenceError(msg.str());
  }

  fit.beta = beta;
  fit.deviance = dev;
  fit.max_score = score.cwiseAbs().maxCoeff() / static_cast<double>(n);
  std::vector<double> wv(wn.data(), wn.data() + n);
  fit.covariance = sandwich_covariance(beta, x, y, wv, offset);
  return fit;
}

std::vector<std::string> OutcomeDesign::terms() const {
  std::vector<std::string> out;
  for (const auto& l : matrix.labels) out.push_back(l.text());
  return out;
}

OutcomeDesign build_outcome_design(const Dataset& ds) {
  const auto xd = encode(ds, false);
  const auto n = xd.rows();
  OutcomeDesign d;
  d.matrix.values.resize(n, xd.cols() + 4);
  const auto& s = ds.schema();
  d.matrix.labels = {{"(Intercept)", ""}, {s.treatment, ""}, {s.moderator, ""}, {s.treatment + ":" + s.moderator, ""}};
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = ds.treatment()[static_cast<std::size_t>(i)];
    const double z = ds.moderator()[static_cast<std::size_t>(i)];
    d.matrix.values(i, 0) = 1.0;
    d.matrix.values(i, 1) = t;
    d.matrix.values(i, 2) = z;
    d.matrix.values(i, 3) = t * z;
  }
  d.matrix.values.rightCols(xd.cols()) = xd.values;
  d.matrix.labels.insert(d.matrix.labels.end(), xd.labels.begin(), xd.labels.end());
  d.treatment_col = 1;
  d.moderator_col = 2;
  d.interaction_col = 3;
  return d;
}

OutcomeDesign build_stratum_outcome_design(const Dataset& ds) {
  const auto xd = encode(ds, false);
  const auto n = xd.rows();
  // Levels absent from the stratum give constant columns; leave them out.
  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 0; j < xd.cols(); ++j) {
    const auto col = xd.values.col(j);
    if (n > 0 && (col.array() != col(0)).any()) keep.push_back(j);
  }
  OutcomeDesign d;
  d.matrix.values.resize(n, static_cast<Eigen::Index>(keep.size()) + 2);
  d.matrix.labels = {{"(Intercept)", ""}, {ds.schema().treatment, ""}};
  for (Eigen::Index i = 0; i < n; ++i) {
    d.matrix.values(i, 0) = 1.0;
    d.matrix.values(i, 1) = ds.treatment()[static_cast<std::size_t>(i)];
  }
  for (std::size_t k = 0; k < keep.size(); ++k) {
    d.matrix.values.col(static_cast<Eigen::Index>(k) + 2) = xd.values.col(keep[k]);
    d.matrix.labels.push_back(xd.labels[static_cast<std::size_t>(keep[k])]);
  }
  d.treatment_col = 1;
  return d;
}

RiskDifference marginal_risk_difference(const Eigen::VectorXd& beta, const Eigen::MatrixXd& cov,
                                        const OutcomeDesign& design, std::span<const double> w,
                                        std::optional<int> z, std::span<const std::size_t> rows) {
  const auto& x = design.matrix.values;
  const auto p = x.cols();
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(p);
  double total = 0.0, wsum = 0.0;
  Eigen::RowVectorXd x1(p), x0(p);
  auto visit = [&](std::size_t i) {
    const auto r = static_cast<Eigen::Index>(i);
    x1 = x.row(r);
    x0 = x.row(r);
    x1(design.treatment_col) = 1.0;
    x0(design.treatment_col) = 0.0;
    if (z) {
      if (design.moderator_col >= 0) {
        x1(design.moderator_col) = *z;
        x0(design.moderator_col) = *z;
      }
      if (design.interaction_col >= 0) {
        x1(design.interaction_col) = *z;
        x0(design.interaction_col) = 0.0;
      }
    }
    const double p1 = expit(x1.dot(beta));
    const double p0 = expit(x0.dot(beta));
    total += w[i] * (p1 - p0);
    wsum += w[i];
    grad += w[i] * (p1 * (1.0 - p1) * x1.transpose() - p0 * (1.0 - p0) * x0.transpose());
  };
  if (rows.empty()) {
    for (std::size_t i = 0; i < static_cast<std::size_t>(x.rows()); ++i) visit(i);
  } else {
    for (auto i : rows) visit(i);
  }
  RiskDifference rd;
  rd.gradient = grad / wsum;
  const double var = rd.gradient.dot(cov * rd.gradient);
  rd.effect = make_effect(total / wsum, std::sqrt(std::max(var, 0.0)));
  return rd;
}

ModerationTest moderation_test(const OutcomeFit& fit, const OutcomeDesign& design) {
  if (design.interaction_col < 0) throw InputError("moderation test: design has no interaction column");
  const auto k = design.interaction_col;
  return {make_effect(fit.beta(k), std::sqrt(fit.covariance(k, k)))};
}

MateEstimate mate_estimates(const OutcomeFit& fit, const OutcomeDesign& design, const Dataset& ds,
                            std::span<const double> w, MateAveraging averaging) {
  MateEstimate out;
  for (int z = 0; z <= 1; ++z) {
    std::vector<std::size_t> rows;
    if (averaging == MateAveraging::within_stratum) {
      for (std::size_t i = 0; i < ds.rows(); ++i)
        if (ds.moderator()[i] == z) rows.push_back(i);
      if (rows.empty()) continue;
    }
    out.strata.push_back({z, marginal_risk_difference(fit.beta, fit.covariance, design, w, z, rows)});
  }
  if (design.interaction_col >= 0) out.moderation = moderation_test(fit, design);
  return out;
}

}  // namespace modwt
