#include "modwt/tabular.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "modwt/csv.hpp"
#include "modwt/error.hpp"

namespace modwt {

namespace {

std::optional<double> parse_number(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::string trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return std::string(s);
}

[[noreturn]] void row_error(std::int64_t row, const std::string& column, const std::string& what) {
  throw InputError("row " + std::to_string(row) + ", column '" + column + "': " + what);
}

}  // namespace

SchemaConfig SchemaConfig::from_json(const nlohmann::json& j) {
  SchemaConfig s;
  try {
    s.treatment = j.at("treatment").get<std::string>();
    s.moderator = j.at("moderator").get<std::string>();
    s.outcome = j.at("outcome").get<std::string>();
    if (j.contains("survey_weight") && !j.at("survey_weight").is_null())
      s.survey_weight = j.at("survey_weight").get<std::string>();
    for (const auto& c : j.at("covariates")) {
      CovariateSpec spec;
      spec.name = c.at("name").get<std::string>();
      const auto kind = c.value("kind", std::string("categorical"));
      if (kind == "categorical") {
        spec.kind = CovariateKind::categorical;
        spec.levels = c.at("levels").get<std::vector<std::string>>();
        if (spec.levels.size() < 2)
          throw InputError("schema: categorical covariate '" + spec.name + "' needs at least two levels");
      } else if (kind == "continuous") {
        spec.kind = CovariateKind::continuous;
      } else {
        throw InputError("schema: unknown covariate kind '" + kind + "'");
      }
      s.covariates.push_back(std::move(spec));
    }
    if (j.contains("missing_values")) s.missing_tokens = j.at("missing_values").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("schema: ") + e.what());
  }
  if (s.covariates.empty()) throw InputError("schema: no covariates declared");
  std::vector<std::string> names{s.treatment, s.moderator, s.outcome};
  for (const auto& c : s.covariates) names.push_back(c.name);
  for (std::size_t a = 0; a < names.size(); ++a)
    for (std::size_t b = a + 1; b < names.size(); ++b)
      if (names[a] == names[b]) throw InputError("schema: column '" + names[a] + "' declared twice");
  return s;
}

nlohmann::json SchemaConfig::to_json() const {
  nlohmann::json j;
  j["treatment"] = treatment;
  j["moderator"] = moderator;
  j["outcome"] = outcome;
  j["survey_weight"] = survey_weight ? nlohmann::json(*survey_weight) : nlohmann::json(nullptr);
  j["covariates"] = nlohmann::json::array();
  for (const auto& c : covariates) {
    nlohmann::json cj{{"name", c.name}, {"kind", c.kind == CovariateKind::categorical ? "categorical" : "continuous"}};
    if (c.kind == CovariateKind::categorical) cj["levels"] = c.levels;
    j["covariates"].push_back(cj);
  }
  j["missing_values"] = missing_tokens;
  return j;
}

Dataset::Dataset(SchemaConfig schema, std::vector<std::int64_t> row_ids, std::vector<std::uint8_t> treatment,
                 std::vector<std::uint8_t> moderator, std::vector<std::uint8_t> outcome,
                 std::vector<double> survey_weight, std::vector<std::vector<double>> covariates)
    : schema_(std::move(schema)),
      row_ids_(std::move(row_ids)),
      treatment_(std::move(treatment)),
      moderator_(std::move(moderator)),
      outcome_(std::move(outcome)),
      survey_weight_(std::move(survey_weight)),
      covariates_(std::move(covariates)) {
  const std::size_t n = treatment_.size();
  if (row_ids_.size() != n || moderator_.size() != n || outcome_.size() != n || survey_weight_.size() != n)
    throw InputError("dataset: column lengths differ");
  if (covariates_.size() != schema_.covariates.size()) throw InputError("dataset: covariate count mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    if (treatment_[i] > 1 || moderator_[i] > 1 || outcome_[i] > 1)
      row_error(row_ids_[i], "binary", "value outside {0,1}");
    if (!std::isfinite(survey_weight_[i]) || survey_weight_[i] <= 0.0)
      row_error(row_ids_[i], schema_.survey_weight.value_or("weight"), "weight must be finite and positive");
  }
  for (std::size_t k = 0; k < covariates_.size(); ++k) {
    const auto& spec = schema_.covariates[k];
    if (covariates_[k].size() != n) throw InputError("dataset: covariate '" + spec.name + "' length mismatch");
    for (std::size_t i = 0; i < n; ++i) {
      const double v = covariates_[k][i];
      if (!std::isfinite(v)) row_error(row_ids_[i], spec.name, "non-finite value");
      if (spec.kind == CovariateKind::categorical &&
          (v < 0 || v >= static_cast<double>(spec.levels.size()) || v != std::floor(v)))
        row_error(row_ids_[i], spec.name, "level index out of declared set");
    }
  }
}

std::size_t Dataset::covariate_index(std::string_view name) const {
  for (std::size_t k = 0; k < schema_.covariates.size(); ++k)
    if (schema_.covariates[k].name == name) return k;
  throw InputError("unknown covariate '" + std::string(name) + "'");
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  std::vector<std::int64_t> ids;
  std::vector<std::uint8_t> t, z, y;
  std::vector<double> w;
  std::vector<std::vector<double>> cov(covariates_.size());
  ids.reserve(rows.size());
  for (std::size_t i : rows) {
    ids.push_back(row_ids_.at(i));
    t.push_back(treatment_[i]);
    z.push_back(moderator_[i]);
    y.push_back(outcome_[i]);
    w.push_back(survey_weight_[i]);
    for (std::size_t k = 0; k < cov.size(); ++k) cov[k].push_back(covariates_[k][i]);
  }
  Dataset out(schema_, std::move(ids), std::move(t), std::move(z), std::move(y), std::move(w), std::move(cov));
  out.dropped_ = dropped_;
  return out;
}

Dataset load_dataset(std::string_view csv_text, const SchemaConfig& schema) {
  const auto records = csv::parse(csv_text);
  if (records.empty()) throw InputError("csv: missing header row");
  const auto& header = records.front();

  auto column_of = [&](const std::string& name) -> std::size_t {
    for (std::size_t c = 0; c < header.size(); ++c)
      if (trim(header[c]) == name) return c;
    throw InputError("csv: declared column '" + name + "' not found in header");
  };
  const std::size_t col_t = column_of(schema.treatment);
  const std::size_t col_z = column_of(schema.moderator);
  const std::size_t col_y = column_of(schema.outcome);
  const std::optional<std::size_t> col_w =
      schema.survey_weight ? std::optional<std::size_t>(column_of(*schema.survey_weight)) : std::nullopt;
  std::vector<std::size_t> col_x;
  std::vector<std::unordered_map<std::string, double>> level_maps;
  for (const auto& c : schema.covariates) {
    col_x.push_back(column_of(c.name));
    std::unordered_map<std::string, double> m;
    for (std::size_t l = 0; l < c.levels.size(); ++l) m.emplace(c.levels[l], static_cast<double>(l));
    level_maps.push_back(std::move(m));
  }

  auto is_missing = [&](const std::string& cell) {
    const auto t = trim(cell);
    for (const auto& tok : schema.missing_tokens)
      if (t == tok) return true;
    return false;
  };

  std::vector<std::int64_t> ids;
  std::vector<std::uint8_t> t, z, y;
  std::vector<double> w;
  std::vector<std::vector<double>> cov(schema.covariates.size());
  std::size_t dropped = 0;

  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    const auto row_id = static_cast<std::int64_t>(r);
    if (rec.size() == 1 && trim(rec[0]).empty()) {
      ++dropped;
      continue;
    }
    if (rec.size() != header.size())
      row_error(row_id, "*", "expected " + std::to_string(header.size()) + " fields, got " + std::to_string(rec.size()));

    bool missing = is_missing(rec[col_t]) || is_missing(rec[col_z]) || is_missing(rec[col_y]) ||
                   (col_w && is_missing(rec[*col_w]));
    for (std::size_t k = 0; k < col_x.size() && !missing; ++k) missing = is_missing(rec[col_x[k]]);
    if (missing) {
      ++dropped;
      continue;
    }

    auto binary = [&](std::size_t col, const std::string& name) -> std::uint8_t {
      const auto v = parse_number(rec[col]);
      if (!v || (*v != 0.0 && *v != 1.0)) row_error(row_id, name, "non-binary value '" + rec[col] + "'");
      return static_cast<std::uint8_t>(*v);
    };
    t.push_back(binary(col_t, schema.treatment));
    z.push_back(binary(col_z, schema.moderator));
    y.push_back(binary(col_y, schema.outcome));
    if (col_w) {
      const auto v = parse_number(rec[*col_w]);
      if (!v || !std::isfinite(*v) || *v <= 0.0)
        row_error(row_id, *schema.survey_weight, "weight must be finite and positive, got '" + rec[*col_w] + "'");
      w.push_back(*v);
    } else {
      w.push_back(1.0);
    }
    for (std::size_t k = 0; k < col_x.size(); ++k) {
      const auto& spec = schema.covariates[k];
      const auto cell = trim(rec[col_x[k]]);
      if (spec.kind == CovariateKind::categorical) {
        auto it = level_maps[k].find(cell);
        if (it == level_maps[k].end()) row_error(row_id, spec.name, "level '" + cell + "' not in declared set");
        cov[k].push_back(it->second);
      } else {
        const auto v = parse_number(cell);
        if (!v || !std::isfinite(*v)) row_error(row_id, spec.name, "non-numeric value '" + cell + "'");
        cov[k].push_back(*v);
      }
    }
    ids.push_back(row_id);
  }

  Dataset ds(schema, std::move(ids), std::move(t), std::move(z), std::move(y), std::move(w), std::move(cov));
  ds.set_dropped_rows(dropped);
  return ds;
}

Dataset load_dataset_file(const std::string& path, const SchemaConfig& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open input file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return load_dataset(buf.str(), schema);
}

Dataset stratify(const Dataset& ds, int z) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < ds.rows(); ++i)
    if (ds.moderator()[i] == z) rows.push_back(i);
  if (rows.empty())
    throw InputError("stratum " + ds.schema().moderator + "=" + std::to_string(z) + " is empty");
  return ds.subset(rows);
}

namespace {

DesignMatrix encode_impl(const Dataset& ds, bool include_moderator, bool drop_reference) {
  const auto& covs = ds.schema().covariates;
  DesignMatrix dm;
  for (const auto& c : covs) {
    if (c.kind == CovariateKind::categorical) {
      for (std::size_t l = drop_reference ? 1 : 0; l < c.levels.size(); ++l) dm.labels.push_back({c.name, c.levels[l]});
    } else {
      dm.labels.push_back({c.name, ""});
    }
  }
  if (include_moderator) dm.labels.push_back({ds.schema().moderator, ""});

  const auto n = static_cast<Eigen::Index>(ds.rows());
  dm.values = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(dm.labels.size()));
  Eigen::Index col = 0;
  for (std::size_t k = 0; k < covs.size(); ++k) {
    const auto x = ds.covariate(k);
    if (covs[k].kind == CovariateKind::categorical) {
      const std::size_t first = drop_reference ? 1 : 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto lvl = static_cast<std::size_t>(x[i]);
        if (lvl >= covs[k].levels.size()) throw InputError("encode: level index out of range for " + covs[k].name);
        if (lvl >= first) dm.values(i, col + static_cast<Eigen::Index>(lvl - first)) = 1.0;
      }
      col += static_cast<Eigen::Index>(covs[k].levels.size() - first);
    } else {
      for (Eigen::Index i = 0; i < n; ++i) dm.values(i, col) = x[i];
      ++col;
    }
  }
  if (include_moderator)
    for (Eigen::Index i = 0; i < n; ++i) dm.values(i, col) = ds.moderator()[i];
  return dm;
}

}  // namespace

DesignMatrix encode(const Dataset& ds, bool include_moderator) { return encode_impl(ds, include_moderator, true); }

DesignMatrix encode_balance(const Dataset& ds) { return encode_impl(ds, false, false); }

}  // namespace modwt
