#include "pedrisk/synth.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "pedrisk/errors.hpp"

namespace pedrisk::synth {

namespace {

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

std::string indexed(const char* prefix, std::size_t i) {
  std::string s = std::to_string(i);
  if (s.size() < 3) s.insert(0, 3 - s.size(), '0');
  return prefix + s;
}

}  // namespace

std::array<Range, kNumCovariates> table1_ranges() {
  return {{{221.5, 1818.25}, {104.0, 1737.0}, {1.66, 8.57}, {0.62, 2.48}, {43.0, 397.75}, {1.89, 10.60}, {0.59, 4.31}}};
}

void Scenario::validate() const {
  if (sites.empty()) throw ConfigError("scenario needs at least one site");
  if (truth.random_effects() ? truth.sites != sites : truth.sites.size() > 1) {
    throw ConfigError("scenario sites disagree with the true model's sites");
  }
  const ParameterLayout layout(truth);
  if (theta.size() != layout.size()) {
    throw ConfigError("scenario theta has " + std::to_string(theta.size()) + " values, model " + truth.name + " needs " +
                      std::to_string(layout.size()));
  }
  if (!std::isfinite(log_prior(truth, theta))) throw ConfigError("scenario theta lies outside the prior support");
  for (std::size_t k = 0; k < kNumCovariates; ++k) {
    if (!(ranges[k].lo > 0.0) || !(ranges[k].hi >= ranges[k].lo) || !std::isfinite(ranges[k].hi)) {
      throw ConfigError("covariate range for " + std::string(covariate_name(kAllCovariates[k])) +
                        " must satisfy 0 < lo <= hi");
    }
  }
}

std::vector<CycleBlock> generate_blocks(const Scenario& scenario) {
  scenario.validate();
  const GevModel model = to_gev_model(scenario.truth, scenario.theta);
  Rng rng(scenario.seed);
  std::vector<CycleBlock> blocks;
  blocks.reserve(scenario.sites.size() * scenario.n_cycles);
  for (const auto& site : scenario.sites) {
    for (std::size_t c = 0; c < scenario.n_cycles; ++c) {
      CycleBlock b;
      b.site_id = site;
      b.cycle_index = c;
      b.n_conflicts = 1;
      for (std::size_t k = 0; k < kNumCovariates; ++k) {
        b.covariates.set(kAllCovariates[k], uniform(rng, scenario.ranges[k].lo, scenario.ranges[k].hi));
      }
      b.z = gev_sample(params_for_cycle(model, b), rng);
      blocks.push_back(std::move(b));
    }
  }
  return blocks;
}

CrossingScenario generate_crossing_scenario(const CrossingOptions& o) {
  if (o.n_pedestrians == 0 || o.n_vehicles == 0) throw DomainError("crossing scenario needs positive counts");
  if (!(o.ped_speed > 0.0) || !(o.veh_speed > 0.0)) throw DomainError("crossing speeds must be positive");
  if (!(o.spacing > 0.0) || !(o.approach > 0.0) || !(o.start_spread >= 0.0)) {
    throw DomainError("crossing geometry must be positive");
  }
  if (!o.ped_start.empty() && o.ped_start.size() != o.n_pedestrians) throw DomainError("ped_start size mismatch");
  if (!o.veh_start.empty() && o.veh_start.size() != o.n_vehicles) throw DomainError("veh_start size mismatch");

  Rng rng(o.seed);
  std::vector<double> ped_start = o.ped_start;
  std::vector<double> veh_start = o.veh_start;
  for (std::size_t i = ped_start.size(); i < o.n_pedestrians; ++i) ped_start.push_back(uniform(rng, 0.0, o.start_spread));
  for (std::size_t j = veh_start.size(); j < o.n_vehicles; ++j) veh_start.push_back(uniform(rng, 0.0, o.start_spread));

  // Each track runs from -approach to (n-1)*spacing + approach along its axis.
  const double ped_len = static_cast<double>(o.n_vehicles - 1) * o.spacing + 2.0 * o.approach;
  const double veh_len = static_cast<double>(o.n_pedestrians - 1) * o.spacing + 2.0 * o.approach;
  CrossingScenario out;
  for (std::size_t i = 0; i < o.n_pedestrians; ++i) {
    const double x = static_cast<double>(i) * o.spacing;
    const double t0 = ped_start[i];
    out.tracks.emplace_back(indexed("P", i), RoadUserClass::Pedestrian,
                            std::vector<Sample>{{t0, x, -o.approach}, {t0 + ped_len / o.ped_speed, x, ped_len - o.approach}});
  }
  for (std::size_t j = 0; j < o.n_vehicles; ++j) {
    const double y = static_cast<double>(j) * o.spacing;
    const double t0 = veh_start[j];
    out.tracks.emplace_back(indexed("V", j), RoadUserClass::MV,
                            std::vector<Sample>{{t0, -o.approach, y}, {t0 + veh_len / o.veh_speed, veh_len - o.approach, y}});
  }
  for (std::size_t i = 0; i < o.n_pedestrians; ++i) {
    for (std::size_t j = 0; j < o.n_vehicles; ++j) {
      ConflictEvent e;
      e.ped_id = indexed("P", i);
      e.veh_id = indexed("V", j);
      e.veh_class = RoadUserClass::MV;
      e.point = {static_cast<double>(i) * o.spacing, static_cast<double>(j) * o.spacing};
      e.t_p = ped_start[i] + (e.point.y + o.approach) / o.ped_speed;
      e.t_v = veh_start[j] + (e.point.x + o.approach) / o.veh_speed;
      e.pet = compute_pet(e.t_p, e.t_v);
      out.expected.push_back(std::move(e));
    }
  }
  return out;
}

CycleScenario generate_cycle_scenario(const CycleScenarioOptions& o) {
  if (o.n_cycles == 0) throw DomainError("cycle scenario needs at least one cycle");
  if (!(o.cycle_length >= 60.0)) throw DomainError("cycle scenario needs cycles of at least 60 s");
  const GevParams truth{o.mu, std::log(o.sigma), o.xi};
  if (!(o.sigma > 0.0) || !truth.is_valid()) throw DomainError("cycle scenario truth is not a valid GEV");

  constexpr double kPedSpeed = 1.25;
  constexpr double kVehSpeed = 10.0;
  constexpr double kPedApproach = 10.0;  // 8 s to the crossing
  constexpr double kVehApproach = 50.0;  // 5 s to the crossing
  constexpr double kArrival = 20.0;      // pedestrian arrival offset in the cycle

  CycleScenario out;
  out.site.site_id = o.site_id;
  out.site.cycle_length = o.cycle_length;
  out.site.observation_start = 0.0;
  out.site.observation_duration = o.cycle_length * static_cast<double>(o.n_cycles);

  Rng rng(o.seed);
  std::vector<Track> peds;
  std::vector<Track> vehs;
  for (std::size_t c = 0; c < o.n_cycles; ++c) {
    double z = gev_sample(truth, rng);
    while (!(z > -5.0 && z < 0.0)) z = gev_sample(truth, rng);
    const bool ped_first = uniform01(rng) < 0.5;
    const double pet = -z;
    const double base = static_cast<double>(c) * o.cycle_length + kArrival;
    const double t_p = ped_first ? base : base + pet;
    const double t_v = ped_first ? base + pet : base;
    const double tp0 = t_p - kPedApproach / kPedSpeed;
    const double tv0 = t_v - kVehApproach / kVehSpeed;
    peds.emplace_back(indexed("P", c), RoadUserClass::Pedestrian,
                      std::vector<Sample>{{tp0, 0.0, -kPedApproach}, {tp0 + 2.0 * kPedApproach / kPedSpeed, 0.0, kPedApproach}});
    vehs.emplace_back(indexed("V", c), RoadUserClass::MV,
                      std::vector<Sample>{{tv0, -kVehApproach, 0.0}, {tv0 + 2.0 * kVehApproach / kVehSpeed, kVehApproach, 0.0}});
    ConflictEvent e;
    e.ped_id = indexed("P", c);
    e.veh_id = indexed("V", c);
    e.veh_class = RoadUserClass::MV;
    e.point = {0.0, 0.0};
    e.t_p = t_p;
    e.t_v = t_v;
    e.pet = compute_pet(t_p, t_v);
    out.expected.push_back(std::move(e));
    out.z.push_back(-e.pet);
  }
  for (auto& t : peds) out.tracks.push_back(std::move(t));
  for (auto& t : vehs) out.tracks.push_back(std::move(t));
  return out;
}

std::vector<std::vector<double>> collinear_candidates(std::size_t n_rows, std::uint64_t seed) {
  Rng rng(seed);
  const auto ranges = table1_ranges();
  std::vector<std::vector<double>> cols(kNumCandidates, std::vector<double>(n_rows));
  for (std::size_t r = 0; r < n_rows; ++r) {
    for (std::size_t k = 0; k < kNumCovariates; ++k) cols[k][r] = uniform(rng, ranges[k].lo, ranges[k].hi);
    auto noisy = [&](double base, double gain) { return gain * base * (1.0 + 0.02 * (uniform01(rng) - 0.5)); };
    cols[7][r] = noisy(cols[0][r], 0.3);   // f_nmv
    cols[8][r] = noisy(cols[2][r], 0.5);   // s_nmv
    cols[9][r] = noisy(cols[4][r], 0.2);   // cf_nmv
    cols[10][r] = noisy(cols[1][r], 0.1);  // cf_p
    cols[11][r] = noisy(cols[3][r], 0.9);  // cs_p
  }
  return cols;
}

}  // namespace pedrisk::synth
