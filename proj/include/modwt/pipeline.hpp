#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "modwt/balance.hpp"
#include "modwt/outcome.hpp"
#include "modwt/overlap.hpp"
#include "modwt/ps.hpp"
#include "modwt/sensitivity.hpp"
#include "modwt/tabular.hpp"

namespace modwt {

enum class PsMode { stratified, pooled };

struct RunConfig {
  std::filesystem::path input;
  SchemaConfig schema;
  BoostConfig boost;
  SensitivityConfig sensitivity;
  PsMode ps_mode = PsMode::stratified;
  MateAveraging mate_averaging = MateAveraging::full_sample;
  bool strict_overlap = false;
  bool strict_balance = false;
  std::filesystem::path out_dir;
  std::optional<std::uint64_t> seed;
  int max_threads = 0;  // 0: OpenMP default

  // Relative paths (input, schema file, out_dir) resolve against base_dir.
  // "schema" is either an inline object or a path to a JSON file.
  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  nlohmann::json to_json() const;

  // Seed present, input readable. Run-level seed is copied into the boost
  // and sensitivity blocks.
  void finalize();
};

RunConfig load_run_config(const std::filesystem::path& path, std::string* raw_bytes = nullptr);

struct ReportBundle {
  Dataset data;
  OverlapReport overlap;
  std::vector<PropensityFit> fits;
  BalanceTable balance;
  OutcomeDesign outcome_design;
  OutcomeFit outcome;
  MateEstimate mate;
  std::vector<SensitivityGrid> sensitivity;
  nlohmann::json manifest;
  std::vector<std::string> warnings;
};

using LogSink = std::function<void(std::string_view)>;

// Runs load, overlap, propensity, balance, outcome and sensitivity in order
// and writes every artifact under cfg.out_dir. config_bytes is hashed into
// the manifest. On failure a FAILED marker is written and the error is
// rethrown with the step name prefixed.
ReportBundle run_pipeline(const RunConfig& cfg, std::string_view config_bytes, const LogSink& log = {});

std::string sha256_hex(std::string_view bytes);

}  // namespace modwt
