#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pedrisk/blocks.hpp"
#include "pedrisk/gev.hpp"

namespace pedrisk {

inline constexpr double kDefaultZcr = 1.45;  // 93% one-sided
inline constexpr double kDefaultBaselineEps = 0.05;
inline constexpr double kHoursPerYear = 8766.0;  // 365.25 days

// Probability that the block extreme of negated PET reaches 0 (a collision),
// 1 - G(0).
[[nodiscard]] double crash_risk(const GevParams& params);

struct MrcResult {
  std::vector<double> mrc;
  bool baseline_applied = false;  // first branch: rc - mean - z_cr * sd, clamped at 0
  double rc_mean = 0.0;
  double rc_sd = 0.0;  // sample SD
  std::string diagnostic;
};

// Baseline subtraction applies when mean(rcs) > baseline_eps and there are at
// least two cycles; otherwise rcs pass through unchanged. Throws DomainError
// for negative z_cr.
[[nodiscard]] MrcResult modified_crash_risk(std::span<const double> rcs, double z_cr = kDefaultZcr,
                                            double baseline_eps = kDefaultBaselineEps);

// (T / t) * sum of positive mrc values; T and t in hours. Throws DomainError
// unless both are positive.
[[nodiscard]] double expected_crashes(std::span<const double> mrcs, double total_hours, double observed_hours);

struct RiskOptions {
  double z_cr = kDefaultZcr;
  double baseline_eps = kDefaultBaselineEps;
  double total_hours = 5.0 * kHoursPerYear;  // T
  std::optional<double> observed_hours;        // t; unset: full cycles of each site
};

struct RiskRow {
  std::string site_id;
  std::size_t cycle = 0;
  double mu = 0.0;  // NaN for conflict-free cycles
  double sigma = 0.0;
  double xi = 0.0;
  double rc = 0.0;
  double mrc = 0.0;
  bool has_block = false;
};

struct SiteRisk {
  std::string site_id;
  std::vector<RiskRow> rows;  // every full cycle of the site
  double rc_mean = 0.0;
  double rc_sd = 0.0;
  bool baseline_applied = false;
  double observed_hours = 0.0;  // t
  double n_expected = 0.0;      // from MRC
  double n_expected_raw = 0.0;  // from RC
  std::string diagnostic;
};

struct RiskReport {
  std::string model;
  double z_cr = kDefaultZcr;
  double baseline_eps = kDefaultBaselineEps;
  double total_hours = 0.0;
  std::vector<SiteRisk> sites;
  double n_expected = 0.0;
  double n_expected_raw = 0.0;
};

// Conflict-free cycles get RC = MRC = 0 and stay out of the per-site RC
// baseline. `blocks` carry unscaled covariates; `scaling` maps them into the
// space the model was fitted in.
[[nodiscard]] RiskReport compute_risk(std::string model_name, const GevModel& model, const CovariateScaling& scaling,
                                      std::span<const CycleBlock> blocks, std::span<const SiteConfig> sites,
                                      const RiskOptions& options);

struct BenchmarkRow {
  std::string model;
  double n_expected = 0.0;
  double n_expected_raw = 0.0;
  double observed = 0.0;
};

[[nodiscard]] std::vector<BenchmarkRow> benchmark_against_observed(std::span<const RiskReport> reports,
                                                                   double observed_crashes);

inline constexpr const char* kRiskCsvHeader = "site_id,cycle,mu,sigma,xi,rc,mrc";
void write_risk_csv(std::ostream& out, const RiskReport& report);

// site_id,cycle,z,density for up to `per_site` evenly spaced block cycles per
// site, `points` grid values spanning the 0.1%..99.9% quantiles.
void write_density_curves_csv(std::ostream& out, const RiskReport& report, std::size_t per_site = 5,
                              std::size_t points = 101);

}  // namespace pedrisk
