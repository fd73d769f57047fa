#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pedrisk/blocks.hpp"
#include "pedrisk/inference.hpp"
#include "pedrisk/risk.hpp"
#include "pedrisk/synth.hpp"
#include "pedrisk/trajectory.hpp"

namespace pedrisk {

enum class SimulateKind { Blocks, Crossing, Cycles };

struct SimulateConfig {
  SimulateKind kind = SimulateKind::Blocks;
  std::uint64_t seed = 1;

  // Blocks: GEV block extremes from a known model.
  std::string model = "M1";
  std::vector<Covariate> covariates;
  std::vector<std::string> sites{"S1"};
  std::vector<std::pair<std::string, double>> theta;  // by parameter name
  std::array<synth::Range, kNumCovariates> ranges = synth::table1_ranges();
  std::size_t n_cycles = 2000;

  synth::CrossingOptions crossing;
  synth::CycleScenarioOptions cycles;

  bool operator==(const SimulateConfig&) const = default;
};

struct RunConfig {
  // Input and intermediate paths; empty means the default file in output_dir.
  std::string trajectories;
  std::string conflicts;
  std::string blocks;
  std::string fit_report;
  std::optional<PerspectiveModel> perspective;  // set: tracks are in image units

  std::vector<SiteConfig> sites;
  double pet_threshold = kDefaultPetThreshold;
  std::map<std::string, double> pcu_factors = default_pcu_factors();  // sites without their own table
  double correlation_threshold = 0.7;

  std::vector<std::string> models{"M1", "M2a", "M2b", "M2c", "M3a", "M3b", "M4"};
  std::optional<std::vector<Covariate>> covariates;  // unset: correlation-filter survivors
  std::size_t chains = 2;
  std::size_t iterations = 76000;
  std::size_t burn_in = 26000;
  std::uint64_t seed = 1;  // chain k uses seed + k
  bool write_traces = false;

  double z_cr = kDefaultZcr;
  double baseline_eps = kDefaultBaselineEps;
  double total_hours = 5.0 * kHoursPerYear;
  std::optional<double> observed_hours;  // unset: full cycles of each site
  std::optional<double> observed_crashes;

  std::string output_dir = "out";
  std::optional<SimulateConfig> simulate;

  // Throws ConfigError on any out-of-range setting.
  void validate() const;
  [[nodiscard]] std::vector<std::uint64_t> chain_seeds() const;

  bool operator==(const RunConfig&) const = default;
};

// Missing keys take defaults; unknown keys are rejected. Throws ConfigError.
[[nodiscard]] RunConfig parse_run_config(std::string_view json_text);
// Canonical form with every field written out.
[[nodiscard]] std::string serialize_run_config(const RunConfig& config);

[[nodiscard]] synth::Scenario make_scenario(const SimulateConfig& sim);

// Fit report document: per-model parameter tables, R-hat, acceptance, DIC and
// everything cmd_risk needs to rebuild the posterior-mean model.
[[nodiscard]] std::string fit_report_json(const FitReport& report, const FitConfig& config);

struct FittedModel {
  ModelSpec spec;
  std::vector<double> posterior_mean;  // ParameterLayout(spec) order, scaled space
  bool converged = false;
  double dic = 0.0;
};

struct LoadedFit {
  std::vector<FittedModel> models;  // successfully fitted models only
  CovariateScaling scaling;
  std::optional<std::string> selected;
};

// Throws DataError for a malformed document.
[[nodiscard]] LoadedFit parse_fit_report(std::string_view json_text);

[[nodiscard]] std::string risk_summary_json(std::span<const RiskReport> reports, const std::optional<std::string>& selected,
                                            std::optional<double> observed_crashes);

}  // namespace pedrisk
