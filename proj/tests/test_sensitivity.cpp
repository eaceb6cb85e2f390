#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "fixtures.hpp"
#include "modwt/balance.hpp"
#include "modwt/error.hpp"
#include "modwt/sensitivity.hpp"

using namespace modwt;

namespace {

double sigmoid(double e) { return 1.0 / (1.0 + std::exp(-e)); }

// Stratum inputs with a logistic propensity on the encoded covariates.
StratumInputs logistic_inputs(Dataset data, int z = 0) {
  const auto d = encode_balance(data);
  Eigen::MatrixXd x(d.rows(), d.cols() + 1);
  x.col(0).setOnes();
  x.rightCols(d.cols()) = d.values;
  std::vector<std::string> terms{"(Intercept)"};
  for (Eigen::Index j = 0; j < d.cols(); ++j) terms.push_back("c" + std::to_string(j));
  // drop one indicator per factor to keep the design full rank
  std::vector<Eigen::Index> keep{0};
  std::vector<std::string> kept{"(Intercept)"};
  for (Eigen::Index j = 0; j < d.cols(); ++j) {
    const auto& lab = d.labels[static_cast<std::size_t>(j)];
    bool first_level = false;
    for (const auto& cov : data.schema().covariates)
      if (cov.name == lab.covariate && cov.kind == CovariateKind::categorical && lab.level == cov.levels.front())
        first_level = true;
    if (first_level) continue;
    keep.push_back(j + 1);
    kept.push_back(terms[static_cast<std::size_t>(j + 1)]);
  }
  Eigen::MatrixXd xk(x.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k) xk.col(static_cast<Eigen::Index>(k)) = x.col(keep[k]);
  const auto fit = fit_weighted_logistic(xk, kept, data.treatment(), data.survey_weight());
  const Eigen::VectorXd eta = xk * fit.beta;
  std::vector<double> p(data.rows());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = sigmoid(eta(static_cast<Eigen::Index>(i)));
  return {"z_" + std::to_string(z), z, std::move(data), std::move(p)};
}

double brute_corr(const std::vector<double>& a, const std::vector<double>& b, std::span<const double> w) {
  long double sw = 0, ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sw += w[i];
    ma += w[i] * a[i];
    mb += w[i] * b[i];
  }
  ma /= sw;
  mb /= sw;
  long double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += w[i] * (a[i] - ma) * (b[i] - mb);
    saa += w[i] * (a[i] - ma) * (a[i] - ma);
    sbb += w[i] * (b[i] - mb) * (b[i] - mb);
  }
  return static_cast<double>(sab / std::sqrt(saa * sbb));
}

struct Vectors {
  std::vector<double> r, w;
  std::vector<std::uint8_t> t;
};

Vectors random_vectors(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g;
  Vectors v;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = g(rng);
    v.t.push_back(u(rng) < sigmoid(0.6 * x));
    const double p = sigmoid(-0.3 + 0.5 * v.t.back() + 0.8 * x);
    v.r.push_back((u(rng) < p) - p);
    v.w.push_back(0.5 + u(rng));
  }
  return v;
}

}  // namespace

TEST_SUITE("sensitivity") {
  TEST_CASE("omitted variable hits the requested moments") {
    const auto v = random_vectors(10000, 11);
    const std::vector<double> t(v.t.begin(), v.t.end());
    for (double es : {-0.6, 0.0, 0.2, 0.5}) {
      for (double rho : {0.0, 0.1, 0.3}) {
        CAPTURE(es);
        CAPTURE(rho);
        const auto ov = simulate_omitted_variable(v.r, v.t, v.w, es, rho, 42);
        REQUIRE(ov.feasible);
        CHECK(std::abs(weighted_smd(ov.u, v.t, v.w) - es) <= 0.02);
        CHECK(std::abs(brute_corr(ov.u, v.r, v.w) - rho) <= 0.02);
        // construction makes both exact up to rounding
        CHECK(std::abs(weighted_smd(ov.u, v.t, v.w) - es) <= 1e-10);
        CHECK(std::abs(brute_corr(ov.u, v.r, v.w) - rho) <= 1e-10);
        long double m = 0, s = 0, sw = 0;
        for (std::size_t i = 0; i < ov.u.size(); ++i) {
          m += v.w[i] * ov.u[i];
          s += v.w[i] * ov.u[i] * ov.u[i];
          sw += v.w[i];
        }
        CHECK(std::abs(static_cast<double>(m / sw)) <= 1e-12);
        CHECK(std::abs(static_cast<double>(s / sw) - 1.0) <= 1e-10);
      }
    }
    (void)t;
  }

  TEST_CASE("null omitted variable is noise") {
    const auto v = random_vectors(1000, 12);
    const auto ov = simulate_omitted_variable(v.r, v.t, v.w, 0.0, 0.0, 7);
    const std::vector<double> t(v.t.begin(), v.t.end());
    CHECK(std::abs(brute_corr(ov.u, t, v.w)) <= 0.05);
    CHECK(std::abs(brute_corr(ov.u, v.r, v.w)) <= 0.05);
    // different seeds give unrelated draws
    const auto other = simulate_omitted_variable(v.r, v.t, v.w, 0.0, 0.0, 8);
    CHECK(std::abs(brute_corr(ov.u, other.u, v.w)) <= 0.15);
  }

  TEST_CASE("extra directions carry no weight in U") {
    const auto v = random_vectors(2000, 14);
    std::mt19937_64 rng(15);
    std::normal_distribution<double> normal;
    std::vector<std::vector<double>> dirs(2, std::vector<double>(v.r.size()));
    for (auto& d : dirs)
      for (auto& x : d) x = normal(rng);
    dirs.push_back(dirs[0]);  // duplicates are skipped
    const auto ov = simulate_omitted_variable(v.r, v.t, v.w, 0.4, 0.2, 3, dirs);
    REQUIRE(ov.feasible);
    CHECK(std::abs(weighted_smd(ov.u, v.t, v.w) - 0.4) <= 1e-10);
    CHECK(std::abs(brute_corr(ov.u, v.r, v.w) - 0.2) <= 1e-10);
    const auto null = simulate_omitted_variable(v.r, v.t, v.w, 0.0, 0.0, 3, dirs);
    for (std::size_t k = 0; k < 2; ++k) CHECK(std::abs(brute_corr(null.u, dirs[k], v.w)) <= 1e-10);
  }

  TEST_CASE("omitted variable is a function of the seed") {
    const auto v = random_vectors(500, 13);
    const auto a = simulate_omitted_variable(v.r, v.t, v.w, 0.3, 0.2, 99);
    const auto b = simulate_omitted_variable(v.r, v.t, v.w, 0.3, 0.2, 99);
    CHECK(a.u == b.u);
    const auto c = simulate_omitted_variable(v.r, v.t, v.w, 0.3, 0.2, 100);
    CHECK(a.u != c.u);
  }

  TEST_CASE("infeasibility follows the correlation-matrix determinant") {
    const auto v = random_vectors(2000, 14);
    const std::vector<double> t(v.t.begin(), v.t.end());
    const double q = brute_corr(v.r, t, v.w);
    long double pi = 0, sw = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      pi += v.w[i] * t[i];
      sw += v.w[i];
    }
    const double p = static_cast<double>(pi / sw);
    int infeasible = 0;
    for (double es = -3.0; es <= 3.0; es += 0.25) {
      for (double rho = 0.0; rho < 1.0; rho += 0.1) {
        const double k = es * std::sqrt(p * (1 - p));
        // det of corr(r, T, U) must be non-negative for U to exist
        const double det = 1 - q * q - rho * rho - k * k + 2 * q * rho * k;
        if (std::abs(det) < 1e-9) continue;
        const auto ov = simulate_omitted_variable(v.r, v.t, v.w, es, rho, 1);
        CAPTURE(es);
        CAPTURE(rho);
        CHECK(ov.feasible == (det > 0));
        if (!ov.feasible) {
          ++infeasible;
          CHECK(ov.u.empty());
        }
      }
    }
    CHECK(infeasible > 0);
    CHECK_THROWS_AS(simulate_omitted_variable(v.r, v.t, v.w, 0.1, 1.0, 1), InputError);
    CHECK_THROWS_AS(simulate_omitted_variable(v.r, v.t, v.w, 0.1, -1.5, 1), InputError);
  }

  TEST_CASE("benchmarks match balance SMD and a brute-force correlation") {
    const auto ds = stratify(fixtures::confounded(1500, 15), 1);
    const auto pts = benchmarks(ds);
    const auto dm = encode_balance(ds);
    REQUIRE(pts.size() == static_cast<std::size_t>(dm.cols()));
    const std::vector<double> y(ds.outcome().begin(), ds.outcome().end());
    for (std::size_t j = 0; j < pts.size(); ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      std::vector<double> x(dm.values.col(jj).data(), dm.values.col(jj).data() + dm.rows());
      CHECK(pts[j].label == dm.labels[j]);
      CHECK(std::abs(pts[j].es - std::abs(weighted_smd(x, ds.treatment(), ds.survey_weight()))) <= 1e-12);
      CHECK(std::abs(pts[j].rho - std::abs(brute_corr(x, y, ds.survey_weight()))) <= 1e-12);
    }
  }

  TEST_CASE("benchmarks skip columns that do not vary") {
    const auto s = fixtures::schema({fixtures::categorical("g", {"a", "b"}), fixtures::continuous("x")});
    const auto ds = fixtures::make(s, {0, 1, 0, 1, 1, 0}, {0, 0, 0, 0, 0, 0}, {0, 1, 1, 0, 1, 0},
                                   std::vector<double>(6, 1.0), {{0, 0, 0, 0, 0, 0}, {0.1, 0.5, -0.2, 1.0, 0.3, 0.0}});
    const auto pts = benchmarks(ds);
    REQUIRE(pts.size() == 1);
    CHECK(pts[0].label.covariate == "x");
  }

  TEST_CASE("auto effect-size grid") {
    const auto g = auto_es_grid(0.3);
    REQUIRE(g.size() == 33);
    CHECK(g.front() == -0.8);
    CHECK(g.back() == 0.8);
    CHECK(g[16] == 0.0);
    const auto wide = auto_es_grid(0.93);
    CHECK(wide.back() == doctest::Approx(0.95).epsilon(1e-15));
    CHECK(wide.size() == 39);
    CHECK(auto_es_grid(0.85).back() == doctest::Approx(0.85).epsilon(1e-15));
  }

  TEST_CASE("config validation and round trip") {
    SensitivityConfig c;
    c.es_grid = {-0.1, 0.0, 0.1};
    c.n_reps = 7;
    c.seed = 123;
    const auto back = SensitivityConfig::from_json(c.to_json());
    CHECK(back.es_grid == c.es_grid);
    CHECK(back.rho_grid == c.rho_grid);
    CHECK(back.n_reps == 7);
    CHECK(back.seed == 123);
    CHECK(back.p_contours == std::vector<double>{0.05});
    CHECK_THROWS_AS(SensitivityConfig::from_json({{"rho_grid", {0.0, 1.0}}}), InputError);
    CHECK_THROWS_AS(SensitivityConfig::from_json({{"rho_grid", nlohmann::json::array()}}), InputError);
    CHECK_THROWS_AS(SensitivityConfig::from_json({{"n_reps", 0}}), InputError);
    CHECK_THROWS_AS(SensitivityConfig::from_json({{"p_contours", {1.5}}}), InputError);
    CHECK_THROWS_AS(SensitivityConfig::from_json({{"n_reps", "many"}}), InputError);
  }

  TEST_CASE("grid is complete, anchored at the origin and schedule invariant") {
    const auto in = logistic_inputs(stratify(fixtures::confounded(1200, 16), 0));
    SensitivityConfig cfg;
    cfg.es_grid = {-0.4, 0.0, 0.4, 5.0};
    cfg.rho_grid = {0.0, 0.2, 0.95};
    cfg.n_reps = 40;
    cfg.seed = 2024;
    const auto serial = ov_grid(in, cfg, Execution::serial);
#ifdef _OPENMP
    const int saved = omp_get_max_threads();
    omp_set_num_threads(4);
#endif
    const auto parallel = ov_grid(in, cfg, Execution::parallel);
#ifdef _OPENMP
    omp_set_num_threads(saved);
#endif
    REQUIRE(serial.cells.size() == 12);
    REQUIRE(parallel.cells.size() == 12);
    for (std::size_t k = 0; k < serial.cells.size(); ++k) {
      const auto& a = serial.cells[k];
      const auto& b = parallel.cells[k];
      CHECK(a.status == b.status);
      CHECK(a.n_ok == b.n_ok);
      CHECK(a.n_failed == b.n_failed);
      CHECK(std::memcmp(&a.mean_estimate, &b.mean_estimate, sizeof(double)) == 0);
      CHECK(std::memcmp(&a.mean_p, &b.mean_p, sizeof(double)) == 0);
      CHECK(std::memcmp(&a.sd_estimate, &b.sd_estimate, sizeof(double)) == 0);
      if (a.status != CellStatus::infeasible) CHECK(a.n_ok + a.n_failed == cfg.n_reps);
    }
    for (std::size_t i = 0; i < cfg.es_grid.size(); ++i)
      for (std::size_t j = 0; j < cfg.rho_grid.size(); ++j) {
        CHECK(serial.at(i, j).es == cfg.es_grid[i]);
        CHECK(serial.at(i, j).rho == cfg.rho_grid[j]);
      }

    // es = 5 cannot coexist with rho = 0.95
    CHECK(serial.at(3, 2).status == CellStatus::infeasible);
    CHECK(std::isnan(serial.at(3, 2).mean_estimate));

    const auto& origin = serial.at(1, 0);
    REQUIRE(origin.status == CellStatus::ok);
    // U at the origin has no score in either refit, so the gap is solver accuracy
    CHECK(std::abs(origin.mean_estimate - serial.baseline.estimate) <=
          2.0 * origin.sd_estimate / std::sqrt(static_cast<double>(origin.n_ok)) + 1e-9);
    CHECK(std::abs(origin.mean_p - serial.baseline.p_value) <= 0.05);

    // confounders aligned with treatment and outcome pull the estimate down
    CHECK(serial.at(2, 1).mean_estimate < serial.at(1, 0).mean_estimate);
    CHECK(serial.at(0, 1).mean_estimate > serial.at(1, 0).mean_estimate);
  }

  TEST_CASE("rerun is bit identical and seed dependent") {
    const auto in = logistic_inputs(stratify(fixtures::confounded(600, 17), 1), 1);
    SensitivityConfig cfg;
    cfg.es_grid = {0.0, 0.3};
    cfg.rho_grid = {0.0, 0.1};
    cfg.n_reps = 6;
    cfg.seed = 5;
    const auto a = ov_grid(in, cfg);
    const auto b = ov_grid(in, cfg);
    cfg.seed = 6;
    const auto c = ov_grid(in, cfg);
    bool any_diff = false;
    for (std::size_t k = 0; k < a.cells.size(); ++k) {
      CHECK(std::memcmp(&a.cells[k].mean_estimate, &b.cells[k].mean_estimate, sizeof(double)) == 0);
      any_diff = any_diff || a.cells[k].mean_estimate != c.cells[k].mean_estimate;
    }
    CHECK(any_diff);
  }

  TEST_CASE("injecting a withheld confounder recovers the effect") {
    // 1.96 SE holds about 95% of the time; 6 of 8 leaves room for one or two misses
    int covered = 0;
    for (std::uint64_t seed = 18; seed < 26; ++seed) {
      std::mt19937_64 rng(seed);
      std::uniform_real_distribution<double> u(0.0, 1.0);
      std::normal_distribution<double> g;
      const std::size_t n = 6000;
      std::vector<std::uint8_t> t(n), z(n, 0), y(n);
      std::vector<double> w(n, 1.0), x(n), c(n), p_true(n);
      double truth = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        x[i] = g(rng);
        c[i] = g(rng);
        p_true[i] = sigmoid(0.4 * x[i] + 1.0 * c[i]);
        t[i] = u(rng) < p_true[i];
        const double base = -0.5 + 0.5 * x[i] + 1.0 * c[i];
        y[i] = u(rng) < sigmoid(base + 0.6 * t[i]);
        truth += sigmoid(base + 0.6) - sigmoid(base);
      }
      truth /= static_cast<double>(n);
      const auto ds = fixtures::make(fixtures::schema({fixtures::continuous("x")}), t, z, y, w, {x});
      const auto in = logistic_inputs(ds);
      const auto base = fit_baseline(in);
      CAPTURE(seed);
      // withholding c biases the naive estimate well beyond its error
      CHECK(std::abs(base.effect.estimate - truth) > 3.0 * base.effect.se);

      double m = 0, s = 0;
      for (double v : c) m += v;
      m /= static_cast<double>(n);
      for (double v : c) s += (v - m) * (v - m);
      s = std::sqrt(s / static_cast<double>(n));
      std::vector<double> uu(n);
      for (std::size_t i = 0; i < n; ++i) uu[i] = (c[i] - m) / s;
      const auto adj = adjusted_effect(in, base, uu);
      if (std::abs(adj.estimate - truth) <= 1.96 * adj.se) ++covered;

      // same model fitted as if c had been observed, with the true propensity
      const StratumInputs oracle{"z_0", 0, ds, p_true};
      const auto full = adjusted_effect(oracle, fit_baseline(oracle), uu);
      CHECK(std::abs(adj.estimate - full.estimate) <= 0.1 * adj.se);
    }
    CHECK(covered >= 6);
  }

  TEST_CASE("reps that cannot be fitted are counted, not fatal") {
    const auto in = logistic_inputs(stratify(fixtures::confounded(400, 19), 0));
    SensitivityConfig cfg;
    cfg.es_grid = {0.0};
    cfg.rho_grid = {0.0, 0.999};
    cfg.n_reps = 3;
    const auto g = ov_grid(in, cfg);
    CHECK(g.at(0, 0).status == CellStatus::ok);
    const auto& extreme = g.at(0, 1);
    if (extreme.status == CellStatus::failed) {
      CHECK(extreme.n_failed == 3);
      CHECK_FALSE(extreme.reason.empty());
      CHECK(std::isnan(extreme.mean_estimate));
    } else {
      CHECK(extreme.n_ok + extreme.n_failed == 3);
    }
  }

  TEST_CASE("frozen 30-row fixture") {
    std::mt19937_64 rng(30);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<std::uint8_t> t(30), z(30, 0), y(30);
    std::vector<double> w(30), x(30);
    for (std::size_t i = 0; i < 30; ++i) {
      x[i] = std::round(u(rng) * 100.0) / 25.0 - 2.0;
      t[i] = u(rng) < sigmoid(0.5 * x[i]);
      y[i] = u(rng) < sigmoid(-0.2 + 0.8 * t[i] + 0.3 * x[i]);
      w[i] = 0.5 + std::round(u(rng) * 10.0) / 10.0;
    }
    const auto ds = fixtures::make(fixtures::schema({fixtures::continuous("x")}), t, z, y, w, {x});
    const auto in = logistic_inputs(ds);
    const auto base = fit_baseline(in);
    const auto ov = simulate_omitted_variable(base.residual, t, w, 0.3, 0.15, 20240601, base.score_directions);
    REQUIRE(ov.feasible);
    const auto adj = adjusted_effect(in, base, ov.u);
    CHECK(base.effect.estimate == doctest::Approx(-0.12361346045239953).epsilon(1e-9));
    CHECK(adj.estimate == doctest::Approx(-0.13426898441878876).epsilon(1e-9));
    CHECK(adj.p_value == doctest::Approx(0.3497882470686583).epsilon(1e-9));
  }
}
