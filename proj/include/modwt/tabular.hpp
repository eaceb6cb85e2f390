#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace modwt {

enum class CovariateKind { categorical, continuous };

struct CovariateSpec {
  std::string name;
  CovariateKind kind = CovariateKind::categorical;
  std::vector<std::string> levels;  // categorical only; first level is the reference
};

struct SchemaConfig {
  std::string treatment;
  std::string moderator;
  std::string outcome;
  std::optional<std::string> survey_weight;
  std::vector<CovariateSpec> covariates;
  std::vector<std::string> missing_tokens{"", "NA", "NaN", "."};

  static SchemaConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

// Column-major, immutable after construction. Categorical cells hold the
// level index into CovariateSpec::levels; continuous cells hold the value.
class Dataset {
 public:
  Dataset() = default;
  Dataset(SchemaConfig schema, std::vector<std::int64_t> row_ids, std::vector<std::uint8_t> treatment,
          std::vector<std::uint8_t> moderator, std::vector<std::uint8_t> outcome,
          std::vector<double> survey_weight, std::vector<std::vector<double>> covariates);

  const SchemaConfig& schema() const { return schema_; }
  std::size_t rows() const { return treatment_.size(); }
  std::size_t dropped_rows() const { return dropped_; }

  std::span<const std::int64_t> row_ids() const { return row_ids_; }
  std::span<const std::uint8_t> treatment() const { return treatment_; }
  std::span<const std::uint8_t> moderator() const { return moderator_; }
  std::span<const std::uint8_t> outcome() const { return outcome_; }
  std::span<const double> survey_weight() const { return survey_weight_; }
  std::span<const double> covariate(std::size_t k) const { return covariates_.at(k); }
  std::size_t covariate_index(std::string_view name) const;

  // Rows with the given indices, in that order; metadata unchanged.
  Dataset subset(std::span<const std::size_t> rows) const;

  void set_dropped_rows(std::size_t n) { dropped_ = n; }

 private:
  SchemaConfig schema_;
  std::vector<std::int64_t> row_ids_;  // 1-based data-row number in the source file
  std::vector<std::uint8_t> treatment_;
  std::vector<std::uint8_t> moderator_;
  std::vector<std::uint8_t> outcome_;
  std::vector<double> survey_weight_;
  std::vector<std::vector<double>> covariates_;
  std::size_t dropped_ = 0;
};

struct ColumnLabel {
  std::string covariate;
  std::string level;  // empty for continuous / moderator columns

  std::string text() const { return level.empty() ? covariate : covariate + ":" + level; }
  bool operator==(const ColumnLabel&) const = default;
};

struct DesignMatrix {
  Eigen::MatrixXd values;  // rows x columns
  std::vector<ColumnLabel> labels;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
};

Dataset load_dataset(std::string_view csv_text, const SchemaConfig& schema);
Dataset load_dataset_file(const std::string& path, const SchemaConfig& schema);

// Rows with moderator == z. Throws InputError on an empty stratum.
Dataset stratify(const Dataset& ds, int z);

// Reference-level-dropped one-hot encoding plus continuous columns, in
// schema order. With include_moderator, Z is appended as the last column.
DesignMatrix encode(const Dataset& ds, bool include_moderator);

// Indicator for every level (reference included) plus continuous columns;
// the column set used for balance diagnostics.
DesignMatrix encode_balance(const Dataset& ds);

}  // namespace modwt
