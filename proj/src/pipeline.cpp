#include "modwt/pipeline.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>
#include <omp.h>

#include "modwt/csv.hpp"
#include "modwt/error.hpp"
#include "modwt/svg.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace modwt {

namespace {

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw InputError("cannot read '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path resolve(const fs::path& p, const fs::path& base) { return p.is_absolute() ? p : base / p; }

const char* to_string(PsMode m) { return m == PsMode::stratified ? "stratified" : "pooled"; }
const char* to_string(MateAveraging m) {
  return m == MateAveraging::full_sample ? "full_sample" : "within_stratum";
}

json effect_json(const Effect& e) {
  return {{"estimate", e.estimate}, {"se", e.se},         {"z", e.se > 0.0 ? e.estimate / e.se : 0.0},
          {"p_value", e.p_value},   {"ci_lo", e.ci_lo}, {"ci_hi", e.ci_hi}};
}

}  // namespace

RunConfig RunConfig::from_json(const json& j, const fs::path& base_dir) {
  static const std::vector<std::string> known{"input",       "schema",         "boost",          "sensitivity",
                                              "ps_mode",     "mate_averaging", "strict_overlap", "strict_balance",
                                              "out_dir",     "seed",           "max_threads"};
  if (!j.is_object()) throw InputError("config: top level must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw InputError("config: unknown key '" + key + "'");

  RunConfig c;
  try {
    if (!j.contains("input")) throw InputError("config: 'input' is required");
    c.input = resolve(j.at("input").get<std::string>(), base_dir);
    if (!j.contains("schema")) throw InputError("config: 'schema' is required");
    const auto& s = j.at("schema");
    if (s.is_string()) {
      const auto path = resolve(s.get<std::string>(), base_dir);
      json sj;
      try {
        sj = json::parse(read_text(path));
      } catch (const json::parse_error& e) {
        throw InputError("config: schema file '" + path.string() + "': " + e.what());
      }
      c.schema = SchemaConfig::from_json(sj);
    } else {
      c.schema = SchemaConfig::from_json(s);
    }
    if (j.contains("boost")) c.boost = BoostConfig::from_json(j.at("boost"));
    if (j.contains("sensitivity")) c.sensitivity = SensitivityConfig::from_json(j.at("sensitivity"));
    if (j.contains("ps_mode")) {
      const auto m = j.at("ps_mode").get<std::string>();
      if (m == "stratified") c.ps_mode = PsMode::stratified;
      else if (m == "pooled") c.ps_mode = PsMode::pooled;
      else throw InputError("config: ps_mode must be 'stratified' or 'pooled'");
    }
    if (j.contains("mate_averaging")) {
      const auto m = j.at("mate_averaging").get<std::string>();
      if (m == "full_sample") c.mate_averaging = MateAveraging::full_sample;
      else if (m == "within_stratum") c.mate_averaging = MateAveraging::within_stratum;
      else throw InputError("config: mate_averaging must be 'full_sample' or 'within_stratum'");
    }
    c.strict_overlap = j.value("strict_overlap", false);
    c.strict_balance = j.value("strict_balance", false);
    if (j.contains("out_dir")) c.out_dir = resolve(j.at("out_dir").get<std::string>(), base_dir);
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    c.max_threads = j.value("max_threads", 0);
  } catch (const json::exception& e) {
    throw InputError(std::string("config: ") + e.what());
  }
  if (c.max_threads < 0) throw InputError("config: max_threads must be nonnegative");
  return c;
}

json RunConfig::to_json() const {
  json j{{"input", input.string()},
         {"schema", schema.to_json()},
         {"boost", boost.to_json()},
         {"sensitivity", sensitivity.to_json()},
         {"ps_mode", to_string(ps_mode)},
         {"mate_averaging", to_string(mate_averaging)},
         {"strict_overlap", strict_overlap},
         {"strict_balance", strict_balance},
         {"out_dir", out_dir.string()},
         {"max_threads", max_threads}};
  if (seed) j["seed"] = *seed;
  return j;
}

void RunConfig::finalize() {
  if (!seed) throw InputError("config: 'seed' is required");
  if (out_dir.empty()) throw InputError("config: no output directory (set out_dir, --out-dir or MODWT_OUT)");
  if (!fs::is_regular_file(input)) throw InputError("config: input file '" + input.string() + "' does not exist");
  boost.seed = *seed;
  sensitivity.seed = *seed;
  boost.validate();
  sensitivity.validate();
}

RunConfig load_run_config(const fs::path& path, std::string* raw_bytes) {
  const auto text = read_text(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InputError("config: " + std::string(e.what()));
  }
  if (raw_bytes) *raw_bytes = text;
  return RunConfig::from_json(j, path.parent_path());
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int{digest[i]};
  return os.str();
}

namespace {

class ArtifactWriter {
 public:
  explicit ArtifactWriter(fs::path dir) : dir_(std::move(dir)) {}

  void write(const std::string& name, const std::string& content) {
    std::ofstream out(dir_ / name, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write '" + (dir_ / name).string() + "'");
    out << content;
    if (!out) throw InputError("write failed for '" + (dir_ / name).string() + "'");
    files_.push_back({{"name", name}, {"sha256", sha256_hex(content)}, {"bytes", content.size()}});
  }

  const json& files() const { return files_; }

 private:
  fs::path dir_;
  json files_ = json::array();
};

std::string csv_weights(const Dataset& ds, const PropensityFit& f) {
  std::ostringstream os;
  csv::Writer w(os);
  w.row("row_id", "propensity", "ps_weight", "composite_weight");
  for (std::size_t k = 0; k < f.rows.size(); ++k)
    w.row(ds.row_ids()[f.rows[k]], f.propensity[k], f.ps_weight[k], f.composite_weight[k]);
  return os.str();
}

std::string csv_trace(const PropensityFit& f) {
  std::ostringstream os;
  csv::Writer w(os);
  w.row("iteration", "ks_max", "es_max");
  for (const auto& t : f.criterion_trace) w.row(t.iteration, t.ks_max, t.es_max);
  return os.str();
}

std::string csv_balance(const BalanceTable& table, const std::string& stratum) {
  std::ostringstream os;
  csv::Writer w(os);
  w.row("covariate", "level", "phase", "mean_treated", "mean_control", "smd", "ks", "flag_smd", "flag_ks");
  for (const auto& r : table.rows)
    if (r.stratum == stratum)
      w.row(r.covariate, r.level, to_string(r.phase), r.mean_treated, r.mean_control, r.smd, r.ks, r.flag_smd(),
            r.flag_ks());
  return os.str();
}

std::string csv_outcome(const OutcomeFit& fit) {
  std::ostringstream os;
  csv::Writer w(os);
  w.row("term", "estimate", "se", "z", "p", "ci_lo", "ci_hi");
  const auto se = fit.standard_errors();
  for (std::size_t k = 0; k < fit.terms.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    const auto e = make_effect(fit.beta(i), se(i));
    w.row(fit.terms[k], e.estimate, e.se, e.se > 0.0 ? e.estimate / e.se : 0.0, e.p_value, e.ci_lo, e.ci_hi);
  }
  return os.str();
}

std::string csv_mate(const Dataset& ds, const MateEstimate& m) {
  std::ostringstream os;
  csv::Writer w(os);
  w.row("stratum", "risk_difference", "se", "ci_lo", "ci_hi");
  for (const auto& s : m.strata)
    w.row(stratum_label(ds, s.z), s.rd.effect.estimate, s.rd.effect.se, s.rd.effect.ci_lo, s.rd.effect.ci_hi);
  return os.str();
}

std::string csv_sensitivity(const SensitivityGrid& g) {
  std::ostringstream os;
  csv::Writer w(os);
  w.row("es", "rho", "mean_estimate", "mean_p", "n_ok", "n_failed");
  for (const auto& c : g.cells) w.row(c.es, c.rho, c.mean_estimate, c.mean_p, c.n_ok, c.n_failed);
  return os.str();
}

std::string csv_benchmarks(const SensitivityGrid& g) {
  std::ostringstream os;
  csv::Writer w(os);
  w.row("covariate", "level", "es", "rho");
  for (const auto& b : g.benchmarks) w.row(b.label.covariate, b.label.level, b.es, b.rho);
  return os.str();
}

std::string summary_text(const ReportBundle& b, const RunConfig& cfg) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "rows analysed: " << b.data.rows() << " (dropped for missing values: " << b.data.dropped_rows() << ")\n";
  os << "overlap: " << (b.overlap.ok() ? "ok" : "VIOLATIONS, see overlap.txt") << "\n\n";
  os << "propensity (" << to_string(cfg.ps_mode) << ")\n";
  for (const auto& f : b.fits)
    os << "  " << f.stratum << ": iteration " << f.selected_iteration << ", ESS treated " << f.ess_treated
       << ", ESS control " << f.ess_control << "\n";
  os << "\nbalance (max |SMD| / max KS)\n";
  for (const auto& s : b.balance.summary)
    os << "  " << s.stratum << " " << to_string(s.phase) << ": " << s.max_abs_smd << " / " << s.max_ks << "\n";
  const auto& m = b.mate.moderation.interaction;
  os << "\ninteraction (log-odds): " << m.estimate << " (95% CI " << m.ci_lo << ", " << m.ci_hi
     << "), p = " << m.p_value << "\n";
  os << "risk differences (" << to_string(cfg.mate_averaging) << ")\n";
  for (const auto& s : b.mate.strata)
    os << "  " << stratum_label(b.data, s.z) << ": " << s.rd.effect.estimate << " (95% CI " << s.rd.effect.ci_lo
       << ", " << s.rd.effect.ci_hi << ")\n";
  if (!b.sensitivity.empty()) {
    os << "\nsensitivity (" << cfg.sensitivity.n_reps << " reps per cell)\n";
    for (const auto& g : b.sensitivity) {
      int infeasible = 0, failed = 0;
      for (const auto& c : g.cells) {
        infeasible += c.status == CellStatus::infeasible;
        failed += c.status == CellStatus::failed;
      }
      os << "  " << g.stratum << ": baseline " << g.baseline.estimate << " (p = " << g.baseline.p_value << "), "
         << g.cells.size() << " cells, " << infeasible << " infeasible, " << failed << " failed\n";
    }
  }
  if (!b.warnings.empty()) {
    os << "\nwarnings\n";
    for (const auto& w : b.warnings) os << "  " << w << "\n";
  }
  return os.str();
}

template <typename F>
void run_step(const char* name, json& timings, F&& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  try {
    fn();
  } catch (const Error& e) {
    throw Error(e.kind(), std::string(name) + ": " + e.what());
  } catch (const fs::filesystem_error& e) {
    throw Error(ErrorKind::input, std::string(name) + ": " + e.what());
  }
  timings[name] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

ReportBundle run_pipeline(const RunConfig& cfg_in, std::string_view config_bytes, const LogSink& log) {
  RunConfig cfg = cfg_in;
  cfg.finalize();
  fs::create_directories(cfg.out_dir);
  fs::remove(cfg.out_dir / "FAILED");
  if (cfg.max_threads > 0) omp_set_num_threads(cfg.max_threads);

  ReportBundle b;
  ArtifactWriter out(cfg.out_dir);
  json timings = json::object();
  auto info = [&](const std::string& msg) {
    if (log) log(msg);
  };
  auto warn = [&](const std::string& msg) {
    b.warnings.push_back(msg);
    if (log) log("warning: " + msg);
  };

  try {
    run_step("load", timings, [&] {
      b.data = load_dataset_file(cfg.input.string(), cfg.schema);
      info("load: " + std::to_string(b.data.rows()) + " rows, " + std::to_string(b.data.dropped_rows()) +
           " dropped");
    });

    run_step("overlap", timings, [&] {
      b.overlap = overlap_report(b.data);
      out.write("overlap.json", b.overlap.to_json().dump(2) + "\n");
      out.write("overlap.txt", b.overlap.to_text());
      if (!b.overlap.ok()) {
        warn("overlap: " + std::to_string(b.overlap.empty_cells.size()) + " empty cells, " +
             std::to_string(b.overlap.range_violations.size()) + " range violations");
        if (cfg.strict_overlap) throw AbortError("overlap violations under strict_overlap");
      }
    });

    run_step("propensity", timings, [&] {
      if (cfg.ps_mode == PsMode::stratified) b.fits = fit_stratified(b.data, cfg.boost);
      else b.fits.push_back(fit_pooled(b.data, cfg.boost));
      for (const auto& f : b.fits) {
        out.write("weights_" + f.stratum + ".csv", csv_weights(b.data, f));
        out.write("trace_" + f.stratum + ".csv", csv_trace(f));
        info("propensity: " + f.stratum + " stopped at iteration " + std::to_string(f.selected_iteration));
      }
    });

    run_step("balance", timings, [&] {
      b.balance = balance_table(b.data, b.fits);
      for (const auto& s : b.balance.strata()) out.write("balance_" + s + ".csv", csv_balance(b.balance, s));
      if (b.balance.any_post_flag()) {
        warn("balance: post-weighting |SMD| or KS above 0.10");
        if (cfg.strict_balance) throw AbortError("post-weighting imbalance under strict_balance");
      }
    });

    run_step("outcome", timings, [&] {
      const auto w = composite_weights(b.data, b.fits);
      b.outcome_design = build_outcome_design(b.data);
      b.outcome = fit_weighted_logistic(b.outcome_design.matrix.values, b.outcome_design.terms(),
                                        b.data.outcome(), w);
      b.mate = mate_estimates(b.outcome, b.outcome_design, b.data, w, cfg.mate_averaging);
      out.write("outcome_model.csv", csv_outcome(b.outcome));
      out.write("mate.csv", csv_mate(b.data, b.mate));
      json mt = effect_json(b.mate.moderation.interaction);
      mt["term"] = b.outcome.terms[static_cast<std::size_t>(b.outcome_design.interaction_col)];
      out.write("moderation_test.json", mt.dump(2) + "\n");
    });

    if (cfg.sensitivity.enabled) {
      run_step("sensitivity", timings, [&] {
        b.sensitivity = ov_grids(b.data, b.fits, cfg.sensitivity);
        for (const auto& g : b.sensitivity) {
          out.write("sensitivity_" + g.stratum + ".csv", csv_sensitivity(g));
          out.write("benchmarks_" + g.stratum + ".csv", csv_benchmarks(g));
        }
      });
    }

    run_step("plots", timings, [&] {
      try {
        for (const auto& s : b.balance.strata()) out.write("balance_" + s + ".svg", love_plot_svg(b.balance, s));
        if (b.sensitivity.empty()) warn("plots: sensitivity disabled, no sensitivity plot");
        for (const auto& g : b.sensitivity)
          out.write("sensitivity_" + g.stratum + ".svg", sensitivity_plot_svg(g, cfg.sensitivity.p_contours));
      } catch (const std::exception& e) {
        warn(std::string("plots: ") + e.what());
      }
    });

    out.write("summary.txt", summary_text(b, cfg));

    b.manifest = {{"tool", "modwt"},
                  {"versions",
                   {{"modwt", MODWT_VERSION},
                    {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                  std::to_string(EIGEN_MINOR_VERSION)},
                    {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                          std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                          std::to_string(NLOHMANN_JSON_VERSION_PATCH)}}},
                  {"config_sha256", sha256_hex(config_bytes)},
                  {"config", cfg.to_json()},
                  {"timings_seconds", timings},
                  {"files", out.files()},
                  {"warnings", b.warnings}};
    std::ofstream(cfg.out_dir / "manifest.json", std::ios::binary) << b.manifest.dump(2) << "\n";
  } catch (const std::exception& e) {
    std::ofstream(cfg.out_dir / "FAILED", std::ios::binary) << e.what() << "\n";
    throw;
  }
  return b;
}

}  // namespace modwt
