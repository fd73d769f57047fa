#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pedrisk/blocks.hpp"
#include "pedrisk/conflict.hpp"
#include "pedrisk/inference.hpp"
#include "pedrisk/trajectory.hpp"

namespace pedrisk::synth {

struct Range {
  double lo = 1.0;
  double hi = 1.0;

  bool operator==(const Range&) const = default;
};

// Observed min/max envelope over the four study sites.
[[nodiscard]] std::array<Range, kNumCovariates> table1_ranges();

struct Scenario {
  std::vector<std::string> sites{"S1"};
  ModelSpec truth;            // model family and covariates of the generator
  std::vector<double> theta;  // ParameterLayout(truth) order, unscaled covariates
  std::array<Range, kNumCovariates> ranges = table1_ranges();
  std::size_t n_cycles = 0;  // per site
  std::uint64_t seed = 1;

  // Throws ConfigError on a theta outside the prior support, a size mismatch,
  // a non-positive or inverted range, or a site list disagreeing with truth.
  void validate() const;
};

// Covariates uniform over the ranges, z ~ GEV(params_for_cycle(truth)).
[[nodiscard]] std::vector<CycleBlock> generate_blocks(const Scenario& scenario);

struct CrossingOptions {
  std::size_t n_pedestrians = 1;
  std::size_t n_vehicles = 1;
  double ped_speed = 1.25;  // m/s, along +y
  double veh_speed = 10.0;  // m/s, along +x
  double spacing = 3.0;     // between adjacent crosswalk lines and lanes
  double approach = 20.0;   // distance from track start to the first crossing
  double start_spread = 4.0;  // start times uniform on [0, start_spread)
  std::uint64_t seed = 1;
  std::vector<double> ped_start;  // explicit start times override the draw
  std::vector<double> veh_start;

  bool operator==(const CrossingOptions&) const = default;
};

struct CrossingScenario {
  std::vector<Track> tracks;                // pedestrians first
  std::vector<ConflictEvent> expected;      // every pair, sweep_conflicts order
};

// Pedestrian i walks x = i * spacing, vehicle j drives y = j * spacing, so each
// pair meets exactly once with PET from closed-form arrival times.
[[nodiscard]] CrossingScenario generate_crossing_scenario(const CrossingOptions& options);

struct CycleScenarioOptions {
  std::string site_id = "S1";
  double cycle_length = 100.0;
  std::size_t n_cycles = 200;
  // Generating GEV; must put essentially all mass in (-5, 0).
  double mu = -2.3;
  double sigma = 0.5;
  double xi = -0.41;
  std::uint64_t seed = 1;

  bool operator==(const CycleScenarioOptions&) const = default;
};

struct CycleScenario {
  SiteConfig site;
  std::vector<Track> tracks;
  std::vector<ConflictEvent> expected;  // one per cycle, sweep_conflicts order
  std::vector<double> z;                // per cycle
};

// One pedestrian and one vehicle per cycle crossing at the origin with PET
// equal to -z for z drawn from the truth (redrawn until inside (-5, 0)).
// Crossings from different cycles are at least a cycle length apart.
[[nodiscard]] CycleScenario generate_cycle_scenario(const CycleScenarioOptions& options);

// Twelve candidate columns (candidate_names() order) where the last five are
// near-linear functions of retained ones: f_nmv ~ f_mv, s_nmv ~ s_mv,
// cf_nmv ~ cf_mv, cf_p ~ f_p, cs_p ~ s_p.
[[nodiscard]] std::vector<std::vector<double>> collinear_candidates(std::size_t n_rows, std::uint64_t seed);

}  // namespace pedrisk::synth
