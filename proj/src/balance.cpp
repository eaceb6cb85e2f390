#include "modwt/balance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "modwt/error.hpp"
#include "modwt/ps.hpp"

namespace modwt {

ArmMeans weighted_arm_means(std::span<const double> x, std::span<const std::uint8_t> t, std::span<const double> w) {
  double sx[2] = {0.0, 0.0};
  double sw[2] = {0.0, 0.0};
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx[t[i]] += w[i] * x[i];
    sw[t[i]] += w[i];
  }
  if (sw[0] <= 0.0 || sw[1] <= 0.0) throw StatisticalError("balance: a treatment arm is empty");
  return {sx[1] / sw[1], sx[0] / sw[0]};
}

double weighted_sd(std::span<const double> x, std::span<const double> w) {
  double sw = 0.0, sx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sw += w[i];
    sx += w[i] * x[i];
  }
  const double mean = sx / sw;
  double ss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) ss += w[i] * (x[i] - mean) * (x[i] - mean);
  return std::sqrt(ss / sw);
}

double weighted_correlation(std::span<const double> x, std::span<const double> y, std::span<const double> w) {
  double sw = 0.0, mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sw += w[i];
    mx += w[i] * x[i];
    my += w[i] * y[i];
  }
  mx /= sw;
  my /= sw;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += w[i] * (x[i] - mx) * (y[i] - my);
    sxx += w[i] * (x[i] - mx) * (x[i] - mx);
    syy += w[i] * (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

double weighted_smd(std::span<const double> x, std::span<const std::uint8_t> t, std::span<const double> w,
                    double pooled_sd) {
  const auto m = weighted_arm_means(x, t, w);
  const double diff = m.treated - m.control;
  if (pooled_sd > 0.0) return diff / pooled_sd;
  if (diff == 0.0) return 0.0;
  throw StatisticalError("balance: zero pooled SD with unequal arm means");
}

double weighted_smd(std::span<const double> x, std::span<const std::uint8_t> t, std::span<const double> w) {
  return weighted_smd(x, t, w, weighted_sd(x, w));
}

bool is_binary_column(std::span<const double> x) {
  return std::all_of(x.begin(), x.end(), [](double v) { return v == 0.0 || v == 1.0; });
}

double weighted_ks_sorted(std::span<const double> x, std::span<const std::uint8_t> t, std::span<const double> w,
                          std::span<const std::uint32_t> order) {
  double total[2] = {0.0, 0.0};
  for (std::size_t i = 0; i < x.size(); ++i) total[t[i]] += w[i];
  if (total[0] <= 0.0 || total[1] <= 0.0) throw StatisticalError("balance: a treatment arm is empty");
  double cum[2] = {0.0, 0.0};
  double ks = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto i = order[k];
    cum[t[i]] += w[i];
    // evaluate only once all rows tied at this value are in
    if (k + 1 < order.size() && x[order[k + 1]] == x[i]) continue;
    ks = std::max(ks, std::abs(cum[1] / total[1] - cum[0] / total[0]));
  }
  return std::min(ks, 1.0);
}

namespace {

std::vector<std::uint32_t> ascending_order(std::span<const double> x) {
  std::vector<std::uint32_t> order(x.size());
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) { return x[a] < x[b]; });
  return order;
}

double binary_ks(std::span<const double> x, std::span<const std::uint8_t> t, std::span<const double> w) {
  const auto m = weighted_arm_means(x, t, w);
  return std::abs(m.treated - m.control);
}

}  // namespace

double weighted_ks(std::span<const double> x, std::span<const std::uint8_t> t, std::span<const double> w) {
  if (is_binary_column(x)) return binary_ks(x, t, w);
  const auto order = ascending_order(x);
  return weighted_ks_sorted(x, t, w, order);
}

BalanceColumns prepare_balance_columns(const DesignMatrix& dm, std::span<const double> survey_weight) {
  BalanceColumns out;
  out.labels = dm.labels;
  const auto n = static_cast<std::size_t>(dm.rows());
  for (Eigen::Index j = 0; j < dm.cols(); ++j) {
    std::vector<double> col(n);
    for (std::size_t i = 0; i < n; ++i) col[i] = dm.values(static_cast<Eigen::Index>(i), j);
    out.pooled_sd.push_back(weighted_sd(col, survey_weight));
    const bool bin = is_binary_column(col);
    out.binary.push_back(bin ? 1 : 0);
    out.order.push_back(bin ? std::vector<std::uint32_t>{} : ascending_order(col));
    out.columns.push_back(std::move(col));
  }
  return out;
}

namespace {

void column_criterion(const BalanceColumns& cols, std::size_t j, std::span<const std::uint8_t> t,
                      std::span<const double> w, double& ks, double& es) {
  const auto& x = cols.columns[j];
  es = std::abs(weighted_smd(x, t, w, cols.pooled_sd[j]));
  ks = cols.binary[j] ? binary_ks(x, t, w) : weighted_ks_sorted(x, t, w, cols.order[j]);
}

}  // namespace

Criterion balance_criterion_serial(const BalanceColumns& cols, std::span<const std::uint8_t> t,
                                   std::span<const double> w) {
  Criterion c;
  for (std::size_t j = 0; j < cols.size(); ++j) {
    double ks = 0.0, es = 0.0;
    column_criterion(cols, j, t, w, ks, es);
    c.ks_max = std::max(c.ks_max, ks);
    c.es_max = std::max(c.es_max, es);
  }
  return c;
}

Criterion balance_criterion_omp(const BalanceColumns& cols, std::span<const std::uint8_t> t,
                                std::span<const double> w) {
  const auto m = static_cast<long>(cols.size());
  std::vector<double> ks(cols.size()), es(cols.size());
  // max is order-independent, so per-column results reduce identically.
#pragma omp parallel for schedule(static)
  for (long j = 0; j < m; ++j) column_criterion(cols, static_cast<std::size_t>(j), t, w, ks[j], es[j]);
  Criterion c;
  for (std::size_t j = 0; j < cols.size(); ++j) {
    c.ks_max = std::max(c.ks_max, ks[j]);
    c.es_max = std::max(c.es_max, es[j]);
  }
  return c;
}

const char* to_string(BalancePhase p) { return p == BalancePhase::pre ? "pre" : "post"; }

std::string stratum_label(const Dataset& ds, int z) { return ds.schema().moderator + "_" + std::to_string(z); }

bool BalanceTable::any_post_flag() const {
  return std::any_of(rows.begin(), rows.end(),
                     [](const BalanceRow& r) { return r.phase == BalancePhase::post && (r.flag_smd() || r.flag_ks()); });
}

std::vector<std::string> BalanceTable::strata() const {
  std::vector<std::string> out;
  for (const auto& s : summary)
    if (std::find(out.begin(), out.end(), s.stratum) == out.end()) out.push_back(s.stratum);
  return out;
}

BalanceTable balance_table(const Dataset& ds, std::span<const PropensityFit> fits) {
  const auto composite = composite_weights(ds, fits);
  BalanceTable table;
  for (int z = 0; z <= 1; ++z) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < ds.rows(); ++i)
      if (ds.moderator()[i] == z) rows.push_back(i);
    if (rows.empty()) continue;
    const Dataset sub = ds.subset(rows);
    const auto label = stratum_label(ds, z);
    const auto dm = encode_balance(sub);
    const auto survey = sub.survey_weight();
    std::vector<double> post(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) post[k] = composite[rows[k]];
    const auto cols = prepare_balance_columns(dm, survey);

    for (auto phase : {BalancePhase::pre, BalancePhase::post}) {
      const std::span<const double> w = phase == BalancePhase::pre ? survey : std::span<const double>(post);
      BalanceSummary s{label, phase, 0.0, 0.0};
      for (std::size_t j = 0; j < cols.size(); ++j) {
        BalanceRow r;
        r.stratum = label;
        r.covariate = cols.labels[j].covariate;
        r.level = cols.labels[j].level.empty() ? "–" : cols.labels[j].level;
        r.phase = phase;
        const auto m = weighted_arm_means(cols.columns[j], sub.treatment(), w);
        r.mean_treated = m.treated;
        r.mean_control = m.control;
        r.smd = weighted_smd(cols.columns[j], sub.treatment(), w, cols.pooled_sd[j]);
        r.ks = cols.binary[j] ? std::abs(m.treated - m.control)
                              : weighted_ks_sorted(cols.columns[j], sub.treatment(), w, cols.order[j]);
        s.max_abs_smd = std::max(s.max_abs_smd, std::abs(r.smd));
        s.max_ks = std::max(s.max_ks, r.ks);
        table.rows.push_back(std::move(r));
      }
      table.summary.push_back(s);
    }
  }
  return table;
}

}  // namespace modwt
