#include <doctest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "modwt/error.hpp"
#include "modwt/outcome.hpp"

using namespace modwt;

namespace {

double sigmoid(double e) { return 1.0 / (1.0 + std::exp(-e)); }

struct Simulated {
  Eigen::MatrixXd x;
  std::vector<std::uint8_t> y;
  std::vector<double> w;
};

Simulated simulate(std::size_t n, std::uint64_t seed, bool weighted) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g;
  Simulated s{Eigen::MatrixXd(n, 4), std::vector<std::uint8_t>(n), std::vector<double>(n, 1.0)};
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const double t = u(rng) < 0.4, x1 = g(rng), x2 = u(rng) < 0.5;
    s.x.row(r) << 1.0, t, x1, x2;
    s.y[i] = u(rng) < sigmoid(-0.5 + 0.7 * t + 0.4 * x1 - 0.3 * x2);
    if (weighted) s.w[i] = 0.2 + 2.0 * u(rng);
  }
  return s;
}

const std::vector<std::string> kTerms{"(Intercept)", "t", "x1", "x2"};

}  // namespace

TEST_SUITE("outcome") {
  TEST_CASE("intercept-only fit is the logit of the weighted mean") {
    const std::vector<std::uint8_t> y{1, 0, 0, 1, 1, 0, 0};
    const std::vector<double> w{1.0, 2.0, 0.5, 3.0, 1.5, 1.0, 2.5};
    const auto fit = fit_weighted_logistic(Eigen::MatrixXd::Ones(7, 1), {"(Intercept)"}, y, w);
    double sy = 0, sw = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      sy += w[i] * y[i];
      sw += w[i];
    }
    // stopping rule bounds the score at 1e-10 per row
    CHECK(std::abs(fit.beta(0) - std::log(sy / (sw - sy))) <= 1e-9);
  }

  TEST_CASE("saturated 2x2 recovers the log odds ratio") {
    // cells: (t, y) counts 30/70 untreated, 45/55 treated (y=1 first)
    Eigen::MatrixXd x(200, 2);
    std::vector<std::uint8_t> y(200);
    for (int i = 0; i < 200; ++i) {
      const int t = i >= 100;
      const int k = i % 100;
      x.row(i) << 1.0, t;
      y[i] = t ? k < 45 : k < 30;
    }
    const auto fit = fit_weighted_logistic(x, {"(Intercept)", "t"}, y, std::vector<double>(200, 1.0));
    const double analytic = std::log((45.0 / 55.0) / (30.0 / 70.0));
    CHECK(std::abs(fit.beta(1) - analytic) <= 1e-8);
    CHECK(std::abs(fit.beta(0) - std::log(30.0 / 70.0)) <= 1e-8);
  }

  TEST_CASE("sandwich matches a direct transcription on five rows") {
    Eigen::MatrixXd x(5, 3);
    x << 1, 0, 0.5,  //
        1, 1, -1.0,  //
        1, 0, 2.0,   //
        1, 1, 0.3,   //
        1, 1, -0.7;
    const std::vector<std::uint8_t> y{1, 0, 0, 1, 1};
    const std::vector<double> w{1.2, 0.7, 2.0, 1.1, 0.4};
    Eigen::Vector3d beta(-0.2, 0.5, 0.3);

    const auto expected = oracles::sandwich(x, std::vector<std::uint8_t>(y.begin(), y.end()), w, beta);
    const Eigen::MatrixXd v = sandwich_covariance(beta, x, y, w);
    CHECK((v - expected.covariance).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK((model_based_covariance(beta, x, w) - expected.bread_inverse).cwiseAbs().maxCoeff() <= 1e-10);
  }

  TEST_CASE("converged fit has a vanishing score and a symmetric PSD covariance") {
    const auto s = simulate(3000, 1, true);
    const auto fit = fit_weighted_logistic(s.x, kTerms, s.y, s.w);
    CHECK(fit.max_score < 1e-10);
    Eigen::VectorXd score = Eigen::VectorXd::Zero(4);
    double wsum = 0;
    for (auto v : s.w) wsum += v;
    for (Eigen::Index i = 0; i < s.x.rows(); ++i) {
      const auto k = static_cast<std::size_t>(i);
      score += (s.w[k] * 3000.0 / wsum) * (s.y[k] - sigmoid(s.x.row(i).dot(fit.beta))) * s.x.row(i).transpose();
    }
    CHECK(score.cwiseAbs().maxCoeff() / 3000.0 < 1e-10);
    CHECK((fit.covariance - fit.covariance.transpose()).cwiseAbs().maxCoeff() <= 1e-15);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(fit.covariance);
    CHECK(es.eigenvalues().minCoeff() >= 0.0);
    CHECK(fit.iterations > 0);
    CHECK(fit.n == 3000);
  }

  TEST_CASE("scaling the weights changes nothing") {
    const auto s = simulate(1500, 2, true);
    const auto base = fit_weighted_logistic(s.x, kTerms, s.y, s.w);
    auto w = s.w;
    for (auto& v : w) v *= 123.0;
    const auto scaled = fit_weighted_logistic(s.x, kTerms, s.y, w);
    CHECK((scaled.beta - base.beta).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK((scaled.covariance - base.covariance).cwiseAbs().maxCoeff() <= 1e-12);
    OutcomeDesign d;
    d.matrix.values = s.x;
    const auto r1 = marginal_risk_difference(base.beta, base.covariance, d, s.w);
    const auto r2 = marginal_risk_difference(scaled.beta, scaled.covariance, d, w);
    CHECK(std::abs(r1.effect.estimate - r2.effect.estimate) <= 1e-12);
    CHECK(std::abs(r1.effect.ci_lo - r2.effect.ci_lo) <= 1e-12);
    CHECK(std::abs(r1.effect.ci_hi - r2.effect.ci_hi) <= 1e-12);
  }

  TEST_CASE("duplicated rows at half weight keep beta and halve the covariance") {
    const auto s = simulate(800, 3, true);
    const auto base = fit_weighted_logistic(s.x, kTerms, s.y, s.w);
    Eigen::MatrixXd x2(1600, 4);
    x2 << s.x, s.x;
    std::vector<std::uint8_t> y2(s.y);
    y2.insert(y2.end(), s.y.begin(), s.y.end());
    std::vector<double> w2;
    for (int r = 0; r < 2; ++r)
      for (double v : s.w) w2.push_back(v / 2.0);
    const auto dup = fit_weighted_logistic(x2, kTerms, y2, w2);
    CHECK((dup.beta - base.beta).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((dup.covariance - base.covariance / 2.0).cwiseAbs().maxCoeff() <= 1e-12);
  }

  TEST_CASE("sandwich and model-based errors agree for a correct model with equal weights") {
    const auto s = simulate(20000, 4, false);
    const auto fit = fit_weighted_logistic(s.x, kTerms, s.y, s.w);
    const Eigen::VectorXd model = model_based_covariance(fit.beta, s.x, s.w).diagonal().cwiseSqrt();
    const Eigen::VectorXd sand = fit.standard_errors();
    for (Eigen::Index k = 0; k < 4; ++k) CHECK(std::abs(sand(k) / model(k) - 1.0) <= 0.10);
  }

  TEST_CASE("separation and rank deficiency are reported") {
    Eigen::MatrixXd x(6, 2);
    x << 1, -3, 1, -2, 1, -1, 1, 1, 1, 2, 1, 3;
    const std::vector<std::uint8_t> y{0, 0, 0, 1, 1, 1};
    CHECK_THROWS_AS(fit_weighted_logistic(x, {"(Intercept)", "x"}, y, std::vector<double>(6, 1.0)), SeparationError);

    // outcome equal to treatment: scores vanish long before eta gets large
    const auto sim = simulate(500, 9, true);
    std::vector<std::uint8_t> yt(500);
    for (Eigen::Index i = 0; i < 500; ++i) yt[static_cast<std::size_t>(i)] = sim.x(i, 1) > 0.5;
    CHECK_THROWS_AS(fit_weighted_logistic(sim.x, kTerms, yt, sim.w), SeparationError);

    Eigen::MatrixXd xr(6, 3);
    xr << 1, 0, 1, 1, 1, 0, 1, 0, 1, 1, 1, 0, 1, 0, 1, 1, 1, 0;
    const std::vector<std::uint8_t> yr{0, 1, 1, 0, 1, 0};
    try {
      fit_weighted_logistic(xr, {"(Intercept)", "a", "b"}, yr, std::vector<double>(6, 1.0));
      FAIL("expected rank deficiency");
    } catch (const RankDeficiencyError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("aliased") != std::string::npos);
    }
    CHECK_THROWS_AS(fit_weighted_logistic(Eigen::MatrixXd::Ones(3, 1), {"(Intercept)"}, std::vector<std::uint8_t>{1, 1, 1},
                                          std::vector<double>(3, 1.0)),
                    StatisticalError);
  }

  TEST_CASE("risk difference: closed form, definitional identity, gradient") {
    const auto s = simulate(2000, 5, true);
    OutcomeDesign d;
    d.matrix.values = s.x;

    SUBCASE("treatment-only model") {
      const Eigen::MatrixXd xt = s.x.leftCols(2);
      const auto fit = fit_weighted_logistic(xt, {"(Intercept)", "t"}, s.y, s.w);
      OutcomeDesign dt;
      dt.matrix.values = xt;
      const auto rd = marginal_risk_difference(fit.beta, fit.covariance, dt, s.w);
      CHECK(std::abs(rd.effect.estimate - (sigmoid(fit.beta(0) + fit.beta(1)) - sigmoid(fit.beta(0)))) <= 1e-14);
    }

    const auto fit = fit_weighted_logistic(s.x, kTerms, s.y, s.w);
    const auto rd = marginal_risk_difference(fit.beta, fit.covariance, d, s.w);

    SUBCASE("weighted mean of per-row contrasts") {
      long double num = 0, den = 0;
      for (Eigen::Index i = 0; i < s.x.rows(); ++i) {
        Eigen::RowVectorXd r1 = s.x.row(i), r0 = s.x.row(i);
        r1(1) = 1.0;
        r0(1) = 0.0;
        const auto k = static_cast<std::size_t>(i);
        num += s.w[k] * (sigmoid(r1.dot(fit.beta)) - sigmoid(r0.dot(fit.beta)));
        den += s.w[k];
      }
      CHECK(std::abs(rd.effect.estimate - static_cast<double>(num / den)) <= 1e-14);
    }

    SUBCASE("delta-method gradient matches central differences") {
      const double h = 1e-6;
      for (Eigen::Index k = 0; k < fit.beta.size(); ++k) {
        Eigen::VectorXd bp = fit.beta, bm = fit.beta;
        bp(k) += h;
        bm(k) -= h;
        const double fd = (marginal_risk_difference(bp, fit.covariance, d, s.w).effect.estimate -
                           marginal_risk_difference(bm, fit.covariance, d, s.w).effect.estimate) /
                          (2 * h);
        CHECK(std::abs(fd - rd.gradient(k)) <= 1e-6 * std::max(std::abs(rd.gradient(k)), 1e-3));
      }
    }

    SUBCASE("interval is symmetric with the 1.96 multiplier") {
      CHECK(rd.effect.estimate >= -1.0);
      CHECK(rd.effect.estimate <= 1.0);
      CHECK(std::abs((rd.effect.ci_hi - rd.effect.estimate) - 1.96 * rd.effect.se) <= 1e-15);
      CHECK(std::abs((rd.effect.estimate - rd.effect.ci_lo) - 1.96 * rd.effect.se) <= 1e-15);
      const double se = std::sqrt(rd.gradient.dot(fit.covariance * rd.gradient));
      CHECK(std::abs(rd.effect.se - se) <= 1e-15);
    }
  }

  TEST_CASE("joint design column order and moderated estimates") {
    const auto ds = fixtures::confounded(3000, 6);
    const auto d = build_outcome_design(ds);
    CHECK(d.terms() == std::vector<std::string>{"(Intercept)", "t", "z", "t:z", "grp:b", "grp:c", "x"});
    const auto w = std::vector<double>(ds.survey_weight().begin(), ds.survey_weight().end());
    const auto fit = fit_weighted_logistic(d.matrix.values, d.terms(), ds.outcome(), w);
    const auto full = mate_estimates(fit, d, ds, w, MateAveraging::full_sample);
    const auto within = mate_estimates(fit, d, ds, w, MateAveraging::within_stratum);
    REQUIRE(full.strata.size() == 2);
    REQUIRE(within.strata.size() == 2);
    CHECK(full.moderation.interaction.estimate == fit.beta(3));
    CHECK(full.moderation.interaction.se == std::sqrt(fit.covariance(3, 3)));

    // full-sample averaging with Z fixed: direct recomputation
    for (int z = 0; z <= 1; ++z) {
      long double num = 0, den = 0;
      for (Eigen::Index i = 0; i < d.matrix.rows(); ++i) {
        Eigen::RowVectorXd r1 = d.matrix.values.row(i), r0 = r1;
        r1(1) = 1;
        r1(2) = z;
        r1(3) = z;
        r0(1) = 0;
        r0(2) = z;
        r0(3) = 0;
        num += w[static_cast<std::size_t>(i)] * (sigmoid(r1.dot(fit.beta)) - sigmoid(r0.dot(fit.beta)));
        den += w[static_cast<std::size_t>(i)];
      }
      CHECK(std::abs(full.strata[static_cast<std::size_t>(z)].rd.effect.estimate - static_cast<double>(num / den)) <= 1e-14);
    }
  }

  TEST_CASE("equal odds ratios across strata give a zero interaction and p = 1") {
    // per stratum: untreated 1/4 events, treated 1/2 events
    std::vector<std::uint8_t> t, z, y;
    for (int zz = 0; zz <= 1; ++zz)
      for (int tt = 0; tt <= 1; ++tt)
        for (int k = 0; k < 8; ++k) {
          t.push_back(static_cast<std::uint8_t>(tt));
          z.push_back(static_cast<std::uint8_t>(zz));
          y.push_back(tt ? k < 4 : k < 2);
        }
    const std::size_t n = t.size();
    const auto sch = fixtures::schema({});
    const auto ds = fixtures::make(sch, t, z, y, std::vector<double>(n, 1.0), {});
    const auto d = build_outcome_design(ds);
    const auto fit = fit_weighted_logistic(d.matrix.values, d.terms(), ds.outcome(), ds.survey_weight());
    const auto test = moderation_test(fit, d);
    CHECK(std::abs(test.interaction.estimate) <= 1e-14);
    CHECK(test.interaction.p_value == doctest::Approx(1.0).epsilon(1e-12));
  }

  TEST_CASE("stratum design reduces to the plain ATE g-computation") {
    const auto ds = stratify(fixtures::confounded(2000, 7), 0);
    const auto d = build_stratum_outcome_design(ds);
    CHECK(d.terms() == std::vector<std::string>{"(Intercept)", "t", "grp:b", "grp:c", "x"});
    const std::vector<double> w(ds.survey_weight().begin(), ds.survey_weight().end());
    const auto fit = fit_weighted_logistic(d.matrix.values, d.terms(), ds.outcome(), w);
    const auto m = mate_estimates(fit, d, ds, w);
    const auto rd = marginal_risk_difference(fit.beta, fit.covariance, d, w);
    for (const auto& s : m.strata) CHECK(s.rd.effect.estimate == rd.effect.estimate);
  }

  TEST_CASE("normal helpers") {
    CHECK(normal_two_sided_p(0.0) == 1.0);
    CHECK(normal_two_sided_p(1.959963984540054) == doctest::Approx(0.05).epsilon(1e-12));
    CHECK(expit(0.0) == 0.5);
    CHECK(std::isfinite(expit(-800.0)));
  }
}
