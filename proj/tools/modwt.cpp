#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "modwt/demo.hpp"
#include "modwt/error.hpp"
#include "modwt/pipeline.hpp"

namespace fs = std::filesystem;
using namespace modwt;

namespace {

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::input: return 1;
    case ErrorKind::statistical: return 2;
    case ErrorKind::abort: return 3;
  }
  return 1;
}

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  int max_threads = -1;
  bool strict_overlap = false;
  bool strict_balance = false;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--seed", o.seed, "Override the run seed");
  cmd->add_option("--out-dir", o.out_dir, "Output directory (falls back to MODWT_OUT)");
  cmd->add_option("--max-threads", o.max_threads, "Upper bound on worker threads")->check(CLI::NonNegativeNumber);
  cmd->add_flag("--strict-overlap", o.strict_overlap, "Abort on overlap violations");
  cmd->add_flag("--strict-balance", o.strict_balance, "Abort when post-weighting balance flags fire");
  cmd->add_flag("-q,--quiet", o.quiet, "Only print errors");
}

void apply(RunConfig& cfg, const Overrides& o) {
  if (o.seed) cfg.seed = o.seed;
  if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
  if (cfg.out_dir.empty())
    if (const char* env = std::getenv("MODWT_OUT"); env && *env) cfg.out_dir = env;
  if (o.max_threads >= 0) cfg.max_threads = o.max_threads;
  cfg.strict_overlap = cfg.strict_overlap || o.strict_overlap;
  cfg.strict_balance = cfg.strict_balance || o.strict_balance;
}

LogSink sink(bool quiet) {
  if (quiet) return {};
  return [](std::string_view msg) { std::cerr << msg << '\n'; };
}

int run(const std::string& config_path, const Overrides& o) {
  std::string bytes;
  auto cfg = load_run_config(config_path, &bytes);
  apply(cfg, o);
  const auto bundle = run_pipeline(cfg, bytes, sink(o.quiet));
  if (!o.quiet) std::cerr << "outputs written to " << cfg.out_dir.string() << '\n';
  return 0;
}

nlohmann::json demo_config(std::uint64_t seed, int reps) {
  return {{"input", "demo_data.csv"},
          {"schema", DemoDgp{}.schema().to_json()},
          {"boost", BoostConfig{}.to_json()},
          {"sensitivity", {{"n_reps", reps}}},
          {"ps_mode", "stratified"},
          {"mate_averaging", "full_sample"},
          {"seed", seed}};
}

int demo(std::size_t n, std::uint64_t data_seed, int reps, bool null_interaction, Overrides o) {
  if (o.out_dir.empty())
    if (const char* env = std::getenv("MODWT_OUT"); env && *env) o.out_dir = env;
  if (o.out_dir.empty()) o.out_dir = "modwt-demo";
  const fs::path dir = o.out_dir;
  fs::create_directories(dir);
  const DemoDgp dgp = null_interaction ? DemoDgp::null_interaction() : DemoDgp{};
  std::ofstream(dir / "demo_data.csv", std::ios::binary) << dataset_to_csv(dgp.generate(n, data_seed));
  auto j = demo_config(o.seed.value_or(data_seed), reps);
  j.erase("boost");
  const std::string bytes = j.dump(2) + "\n";
  std::ofstream(dir / "demo_config.json", std::ios::binary) << bytes;
  return run((dir / "demo_config.json").string(), o);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Propensity-score weighting for moderation analysis"};
  app.set_version_flag("--version", MODWT_VERSION);
  app.require_subcommand(1);

  Overrides run_o;
  std::string config_path;
  auto* run_cmd = app.add_subcommand("run", "Run the full analysis from a JSON config");
  run_cmd->add_option("-c,--config", config_path, "Run configuration")->required();
  add_common(run_cmd, run_o);

  Overrides demo_o;
  std::size_t demo_n = 4000;
  std::uint64_t demo_seed = 1;
  int demo_reps = 100;
  bool demo_null = false;
  auto* demo_cmd = app.add_subcommand("demo", "Generate the synthetic study and analyse it");
  demo_cmd->add_option("-n,--rows", demo_n, "Sample size")->check(CLI::PositiveNumber);
  demo_cmd->add_option("--data-seed", demo_seed, "Seed for the simulated data");
  demo_cmd->add_option("--reps", demo_reps, "Sensitivity replicates per grid cell")->check(CLI::PositiveNumber);
  demo_cmd->add_flag("--null-interaction", demo_null, "Simulate without treatment-by-moderator interaction");
  add_common(demo_cmd, demo_o);

  std::string validate_path;
  auto* validate_cmd = app.add_subcommand("validate-config", "Check a run configuration without running it");
  validate_cmd->add_option("-c,--config", validate_path, "Run configuration")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*run_cmd) return run(config_path, run_o);
    if (*demo_cmd) return demo(demo_n, demo_seed, demo_reps, demo_null, demo_o);
    if (*validate_cmd) {
      auto cfg = load_run_config(validate_path);
      if (cfg.out_dir.empty()) cfg.out_dir = ".";
      cfg.finalize();
      std::cout << cfg.to_json().dump(2) << '\n';
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
