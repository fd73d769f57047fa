#pragma once

#include <array>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pedrisk/conflict.hpp"
#include "pedrisk/trajectory.hpp"

namespace pedrisk {

// Non-normative PCU weights; real deployments supply their own table.
[[nodiscard]] std::map<std::string, double> default_pcu_factors();

struct SiteConfig {
  std::string site_id;
  double cycle_length = 0.0;  // seconds
  double observation_start = 0.0;
  double observation_duration = 0.0;
  std::map<std::string, double> pcu_factors = default_pcu_factors();

  // Full cycles only; a partial trailing cycle is dropped.
  [[nodiscard]] std::size_t n_cycles() const;
  [[nodiscard]] double cycle_start(std::size_t cycle) const {
    return observation_start + static_cast<double>(cycle) * cycle_length;
  }
  [[nodiscard]] double cycle_end(std::size_t cycle) const { return cycle_start(cycle + 1); }
  void validate() const;

  bool operator==(const SiteConfig&) const = default;
};

// The seven covariates retained for modelling.
enum class Covariate { FMv = 0, FP, SMv, SP, CFMv, CSMv, CSNmv };
inline constexpr std::size_t kNumCovariates = 7;
inline constexpr std::array<Covariate, kNumCovariates> kAllCovariates{
    Covariate::FMv, Covariate::FP, Covariate::SMv, Covariate::SP, Covariate::CFMv, Covariate::CSMv, Covariate::CSNmv};

// Column name: f_mv, f_p, s_mv, s_p, cf_mv, cs_mv, cs_nmv.
[[nodiscard]] std::string_view covariate_name(Covariate c);
[[nodiscard]] Covariate covariate_from_name(std::string_view name);

struct CovariateVector {
  double f_mv = 0.0;    // PCU / cycle
  double f_p = 0.0;     // pedestrians / cycle
  double s_mv = 0.0;    // m/s
  double s_p = 0.0;     // m/s
  double cf_mv = 0.0;   // PCU / cycle
  double cs_mv = 0.0;   // m/s
  double cs_nmv = 0.0;  // m/s

  [[nodiscard]] double get(Covariate c) const;
  void set(Covariate c, double value);
};

struct CycleBlock {
  std::string site_id;
  std::size_t cycle_index = 0;
  double z = 0.0;  // -(minimum PET in the cycle)
  std::size_t n_conflicts = 0;
  CovariateVector covariates;
};

struct CycleBucket {
  std::size_t cycle_index = 0;
  double t_start = 0.0;
  double t_end = 0.0;
  std::vector<ConflictEvent> events;
  std::vector<std::size_t> track_indices;  // into the tracks passed to assign_cycles
};

struct CycleAssignment {
  std::vector<CycleBucket> cycles;  // one per full cycle, possibly empty
  std::vector<ConflictEvent> rejected;
  std::vector<std::string> diagnostics;
};

// Event at first arrival t goes to floor((t - start) / cycle_length); tracks
// join every cycle they overlap with positive duration.
[[nodiscard]] CycleAssignment assign_cycles(std::span<const ConflictEvent> events, std::span<const Track> tracks,
                                            const SiteConfig& site);

// -(min pet); nullopt for an empty cycle.
[[nodiscard]] std::optional<double> block_extreme(std::span<const ConflictEvent> events);

// Throws ConfigError for a subtype missing from `factors`.
[[nodiscard]] double pcu_count(std::span<const Track* const> tracks, const std::map<std::string, double>& factors);

// All twelve candidate covariates screened by the correlation filter: the
// seven retained ones followed by f_nmv, s_nmv, cf_nmv, cf_p, cs_p.
inline constexpr std::size_t kNumCandidates = 12;
[[nodiscard]] const std::array<std::string_view, kNumCandidates>& candidate_names();

struct CandidateCovariates {
  std::array<double, kNumCandidates> values{};
  std::vector<std::string> missing;  // speed columns recorded as 0 for lack of data

  [[nodiscard]] CovariateVector retained() const;
};

[[nodiscard]] CandidateCovariates build_candidate_covariates(const CycleBucket& bucket, std::span<const Track> tracks,
                                                             const SiteConfig& site);
[[nodiscard]] CovariateVector build_covariates(const CycleBucket& bucket, std::span<const Track> tracks,
                                               const SiteConfig& site);

struct CorrelationReport {
  std::vector<std::string> names;
  std::vector<std::vector<double>> matrix;  // Pearson r, NaN for constant columns
  std::vector<std::string> retained;
  std::vector<std::string> dropped;  // in drop order
  std::vector<std::string> diagnostics;
};

// `columns[k]` holds one value per cycle. Repeatedly drops the column with the
// most |r| >= threshold partners; ties drop the later column.
[[nodiscard]] CorrelationReport correlation_filter(std::span<const std::vector<double>> columns,
                                                   std::span<const std::string> names, double threshold = 0.7);
[[nodiscard]] double pearson(std::span<const double> a, std::span<const double> b);
void write_correlation_csv(std::ostream& out, const CorrelationReport& report);

struct CycleSummary {
  std::string site_id;
  std::size_t cycle_index = 0;
  std::size_t n_conflicts = 0;
  double pet_mean = 0.0;  // NaN when no conflicts
  double pet_sd = 0.0;    // sample SD, NaN below two conflicts
};

struct SiteBlocks {
  std::vector<CycleBlock> blocks;  // cycles with at least one conflict
  std::vector<CycleSummary> cycles;
  std::vector<CandidateCovariates> candidates;  // parallel to `blocks`
  std::vector<std::string> diagnostics;
};

// assign_cycles + block_extreme + covariates for one site. `events` are
// expected to be PET-filtered already.
[[nodiscard]] SiteBlocks build_site_blocks(std::span<const ConflictEvent> events, std::span<const Track> tracks,
                                           const SiteConfig& site);

inline constexpr const char* kBlockCsvHeader = "site_id,cycle,z,n_conflicts,f_mv,f_p,s_mv,s_p,cf_mv,cs_mv,cs_nmv";
void write_blocks_csv(std::ostream& out, std::span<const CycleBlock> blocks);
[[nodiscard]] std::vector<CycleBlock> read_blocks_csv(std::istream& in);
void write_cycle_summary_csv(std::ostream& out, std::span<const CycleSummary> cycles);

// Per-covariate divisors that bring each column to sample mean 1.
struct CovariateScaling {
  std::array<double, kNumCovariates> divisor{1, 1, 1, 1, 1, 1, 1};

  [[nodiscard]] CovariateVector apply(const CovariateVector& v) const;
};

// Columns with a non-positive mean keep divisor 1.
[[nodiscard]] CovariateScaling mean_scaling(std::span<const CycleBlock> blocks);
[[nodiscard]] std::vector<CycleBlock> apply_scaling(std::span<const CycleBlock> blocks, const CovariateScaling& s);

}  // namespace pedrisk
