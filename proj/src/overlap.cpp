#include "modwt/overlap.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "modwt/error.hpp"

namespace modwt {

long long ContingencyTable::cell_total(int t, int z) const {
  long long s = 0;
  for (const auto& c : counts) s += c[t][z];
  return s;
}

ContingencyTable crosstab(const Dataset& ds, const std::string& covariate) {
  const auto k = ds.covariate_index(covariate);
  const auto& spec = ds.schema().covariates[k];
  if (spec.kind != CovariateKind::categorical) throw InputError("crosstab: '" + covariate + "' is not categorical");
  ContingencyTable tab;
  tab.covariate = covariate;
  tab.levels = spec.levels;
  tab.counts.assign(spec.levels.size(), {});
  tab.weighted_share.assign(spec.levels.size(), {});
  double cell_w[2][2] = {{0, 0}, {0, 0}};
  const auto x = ds.covariate(k);
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    const auto l = static_cast<std::size_t>(x[i]);
    const int t = ds.treatment()[i], z = ds.moderator()[i];
    ++tab.counts[l][t][z];
    tab.weighted_share[l][t][z] += ds.survey_weight()[i];
    cell_w[t][z] += ds.survey_weight()[i];
  }
  for (auto& share : tab.weighted_share)
    for (int t = 0; t < 2; ++t)
      for (int z = 0; z < 2; ++z) share[t][z] = cell_w[t][z] > 0 ? share[t][z] / cell_w[t][z] : 0.0;
  return tab;
}

double sample_quantile(std::vector<double> v, double q) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

OverlapReport overlap_report(const Dataset& ds) {
  OverlapReport rep;
  const auto& covs = ds.schema().covariates;
  for (std::size_t k = 0; k < covs.size(); ++k) {
    const auto& spec = covs[k];
    if (spec.kind == CovariateKind::categorical) {
      auto tab = crosstab(ds, spec.name);
      for (std::size_t l = 0; l < tab.levels.size(); ++l)
        for (int t = 0; t < 2; ++t)
          for (int z = 0; z < 2; ++z)
            if (tab.counts[l][t][z] == 0) rep.empty_cells.push_back({spec.name, tab.levels[l], t, z});
      rep.categorical.push_back(std::move(tab));
      continue;
    }
    const auto x = ds.covariate(k);
    std::vector<double> cell[2][2];
    for (std::size_t i = 0; i < ds.rows(); ++i) cell[ds.treatment()[i]][ds.moderator()[i]].push_back(x[i]);
    std::vector<ContinuousCellSummary> sums;
    for (int z = 0; z < 2; ++z) {
      for (int t = 0; t < 2; ++t) {
        const auto& v = cell[t][z];
        ContinuousCellSummary s{t, z, static_cast<long long>(v.size())};
        if (!v.empty()) {
          s.min = *std::min_element(v.begin(), v.end());
          s.max = *std::max_element(v.begin(), v.end());
          s.q01 = sample_quantile(v, 0.01);
          s.q25 = sample_quantile(v, 0.25);
          s.median = sample_quantile(v, 0.5);
          s.q75 = sample_quantile(v, 0.75);
          s.q99 = sample_quantile(v, 0.99);
        }
        sums.push_back(s);
      }
      const auto& s0 = sums[sums.size() - 2];
      const auto& s1 = sums[sums.size() - 1];
      if (s0.n == 0 || s1.n == 0) {
        for (int t = 0; t < 2; ++t)
          if (cell[t][z].empty()) rep.empty_cells.push_back({spec.name, "–", t, z});
        continue;
      }
      rep.percentile_gaps.push_back({spec.name, z, s1.q01 - s0.q01, s1.q99 - s0.q99});
      // disjoint supports: one arm entirely outside the other's hull
      if (s1.max < s0.min) rep.range_violations.push_back({spec.name, 1, z, "below"});
      else if (s1.min > s0.max) rep.range_violations.push_back({spec.name, 1, z, "above"});
    }
    rep.continuous.emplace_back(spec.name, std::move(sums));
  }
  return rep;
}

nlohmann::json OverlapReport::to_json() const {
  nlohmann::json j;
  j["categorical"] = nlohmann::json::array();
  for (const auto& tab : categorical) {
    nlohmann::json tj{{"covariate", tab.covariate}, {"cells", nlohmann::json::array()}};
    for (std::size_t l = 0; l < tab.levels.size(); ++l)
      for (int z = 0; z < 2; ++z)
        for (int t = 0; t < 2; ++t)
          tj["cells"].push_back({{"level", tab.levels[l]},
                                 {"treatment", t},
                                 {"moderator", z},
                                 {"count", tab.counts[l][t][z]},
                                 {"weighted_share", tab.weighted_share[l][t][z]}});
    j["categorical"].push_back(tj);
  }
  j["continuous"] = nlohmann::json::array();
  for (const auto& [name, sums] : continuous) {
    nlohmann::json cj{{"covariate", name}, {"cells", nlohmann::json::array()}};
    for (const auto& s : sums)
      cj["cells"].push_back({{"treatment", s.t}, {"moderator", s.z}, {"n", s.n}, {"min", s.min}, {"q01", s.q01},
                             {"q25", s.q25}, {"median", s.median}, {"q75", s.q75}, {"q99", s.q99}, {"max", s.max}});
    j["continuous"].push_back(cj);
  }
  j["percentile_gaps"] = nlohmann::json::array();
  for (const auto& g : percentile_gaps)
    j["percentile_gaps"].push_back({{"covariate", g.covariate}, {"moderator", g.z}, {"q01_gap", g.q01_gap}, {"q99_gap", g.q99_gap}});
  j["empty_cells"] = nlohmann::json::array();
  for (const auto& e : empty_cells)
    j["empty_cells"].push_back({{"covariate", e.covariate}, {"level", e.level}, {"treatment", e.t}, {"moderator", e.z}});
  j["range_violations"] = nlohmann::json::array();
  for (const auto& r : range_violations)
    j["range_violations"].push_back({{"covariate", r.covariate}, {"treatment", r.t}, {"moderator", r.z}, {"direction", r.direction}});
  j["ok"] = ok();
  return j;
}

std::string OverlapReport::to_text() const {
  std::ostringstream out;
  out << std::fixed;
  for (const auto& tab : categorical) {
    out << tab.covariate << "\n";
    out << "  " << std::left << std::setw(40) << "level" << std::right;
    for (int z = 0; z < 2; ++z)
      for (int t = 0; t < 2; ++t) out << std::setw(14) << ("T=" + std::to_string(t) + ",Z=" + std::to_string(z));
    out << "\n";
    for (std::size_t l = 0; l < tab.levels.size(); ++l) {
      out << "  " << std::left << std::setw(40) << tab.levels[l] << std::right;
      for (int z = 0; z < 2; ++z)
        for (int t = 0; t < 2; ++t) {
          std::ostringstream cell;
          cell << tab.counts[l][t][z] << " (" << std::fixed << std::setprecision(1)
               << 100.0 * tab.weighted_share[l][t][z] << "%)";
          out << std::setw(14) << cell.str();
        }
      out << "\n";
    }
    out << "\n";
  }
  for (const auto& [name, sums] : continuous) {
    out << name << " (continuous)\n";
    for (const auto& s : sums)
      out << "  T=" << s.t << ",Z=" << s.z << "  n=" << s.n << std::setprecision(4) << "  min=" << s.min
          << "  q01=" << s.q01 << "  median=" << s.median << "  q99=" << s.q99 << "  max=" << s.max << "\n";
    out << "\n";
  }
  if (ok()) {
    out << "No empty cells or range violations.\n";
  } else {
    for (const auto& e : empty_cells)
      out << "WARNING empty cell: " << e.covariate << "=" << e.level << " T=" << e.t << " Z=" << e.z << "\n";
    for (const auto& r : range_violations)
      out << "WARNING range violation: " << r.covariate << " T=" << r.t << " lies " << r.direction
          << " the other arm within Z=" << r.z << "\n";
  }
  return out.str();
}

}  // namespace modwt
