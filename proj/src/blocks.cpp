#include "pedrisk/blocks.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>
#include <unordered_map>

#include "pedrisk/csv.hpp"
#include "pedrisk/errors.hpp"

namespace pedrisk {

std::map<std::string, double> default_pcu_factors() {
  return {{"car", 1.0}, {"bus", 2.5}, {"truck", 2.5}, {"motorcycle", 0.5}, {"rickshaw", 0.8}};
}

std::size_t SiteConfig::n_cycles() const {
  if (!(cycle_length > 0.0) || !(observation_duration > 0.0)) return 0;
  // The relative nudge absorbs round-off in durations that are whole multiples.
  return static_cast<std::size_t>(std::floor(observation_duration / cycle_length * (1.0 + 1e-12)));
}

void SiteConfig::validate() const {
  if (site_id.empty()) throw ConfigError("site_id must be non-empty");
  if (!(cycle_length > 0.0)) throw ConfigError("site '" + site_id + "': cycle_length must be positive");
  if (!(observation_duration > 0.0)) {
    throw ConfigError("site '" + site_id + "': observation_duration must be positive");
  }
  if (!std::isfinite(observation_start)) throw ConfigError("site '" + site_id + "': bad observation_start");
  for (const auto& [name, weight] : pcu_factors) {
    if (!(weight > 0.0)) throw ConfigError("site '" + site_id + "': PCU weight for '" + name + "' must be positive");
  }
}

std::string_view covariate_name(Covariate c) {
  static constexpr std::array<std::string_view, kNumCovariates> names{"f_mv",  "f_p",   "s_mv",  "s_p",
                                                                      "cf_mv", "cs_mv", "cs_nmv"};
  return names[static_cast<std::size_t>(c)];
}

Covariate covariate_from_name(std::string_view name) {
  for (const auto c : kAllCovariates) {
    if (covariate_name(c) == name) return c;
  }
  throw ConfigError("unknown covariate '" + std::string(name) + "'");
}

double CovariateVector::get(Covariate c) const {
  switch (c) {
    case Covariate::FMv:
      return f_mv;
    case Covariate::FP:
      return f_p;
    case Covariate::SMv:
      return s_mv;
    case Covariate::SP:
      return s_p;
    case Covariate::CFMv:
      return cf_mv;
    case Covariate::CSMv:
      return cs_mv;
    case Covariate::CSNmv:
      return cs_nmv;
  }
  return 0.0;
}

void CovariateVector::set(Covariate c, double value) {
  switch (c) {
    case Covariate::FMv:
      f_mv = value;
      break;
    case Covariate::FP:
      f_p = value;
      break;
    case Covariate::SMv:
      s_mv = value;
      break;
    case Covariate::SP:
      s_p = value;
      break;
    case Covariate::CFMv:
      cf_mv = value;
      break;
    case Covariate::CSMv:
      cs_mv = value;
      break;
    case Covariate::CSNmv:
      cs_nmv = value;
      break;
  }
}

CycleAssignment assign_cycles(std::span<const ConflictEvent> events, std::span<const Track> tracks,
                              const SiteConfig& site) {
  site.validate();
  CycleAssignment out;
  const std::size_t n = site.n_cycles();
  out.cycles.resize(n);
  for (std::size_t c = 0; c < n; ++c) {
    out.cycles[c].cycle_index = c;
    out.cycles[c].t_start = site.cycle_start(c);
    out.cycles[c].t_end = site.cycle_end(c);
  }

  for (const auto& e : events) {
    const double t = e.first_arrival();
    if (t < site.observation_start) {
      out.rejected.push_back(e);
      out.diagnostics.push_back("event " + e.ped_id + "/" + e.veh_id + " at t=" + csv::format_double(t) +
                                " precedes observation start");
      continue;
    }
    const double idx = std::floor((t - site.observation_start) / site.cycle_length);
    if (idx >= static_cast<double>(n)) {
      out.rejected.push_back(e);
      out.diagnostics.push_back("event " + e.ped_id + "/" + e.veh_id + " at t=" + csv::format_double(t) +
                                " falls after the last full cycle");
      continue;
    }
    out.cycles[static_cast<std::size_t>(idx)].events.push_back(e);
  }

  for (std::size_t i = 0; i < tracks.size(); ++i) {
    const double t0 = tracks[i].start_time();
    const double t1 = tracks[i].end_time();
    if (n == 0 || t1 <= site.observation_start) continue;
    const double first = std::max(0.0, std::floor((t0 - site.observation_start) / site.cycle_length));
    for (auto c = static_cast<std::size_t>(first); c < n; ++c) {
      const auto& bucket = out.cycles[c];
      if (t0 >= bucket.t_end) continue;
      if (t1 <= bucket.t_start) break;
      out.cycles[c].track_indices.push_back(i);
    }
  }
  return out;
}

std::optional<double> block_extreme(std::span<const ConflictEvent> events) {
  if (events.empty()) return std::nullopt;
  double z = -std::numeric_limits<double>::infinity();
  for (const auto& e : events) z = std::max(z, -e.pet);
  return z;
}

double pcu_count(std::span<const Track* const> tracks, const std::map<std::string, double>& factors) {
  double total = 0.0;
  for (const Track* t : tracks) {
    const auto it = factors.find(t->subtype());
    if (it == factors.end()) {
      throw ConfigError("no PCU factor for vehicle subtype '" + t->subtype() + "' (track " + t->id() + ")");
    }
    total += it->second;
  }
  return total;
}

const std::array<std::string_view, kNumCandidates>& candidate_names() {
  static constexpr std::array<std::string_view, kNumCandidates> names{
      "f_mv", "f_p", "s_mv", "s_p", "cf_mv", "cs_mv", "cs_nmv", "f_nmv", "s_nmv", "cf_nmv", "cf_p", "cs_p"};
  return names;
}

CovariateVector CandidateCovariates::retained() const {
  CovariateVector v;
  for (const auto c : kAllCovariates) v.set(c, values[static_cast<std::size_t>(c)]);
  return v;
}

CandidateCovariates build_candidate_covariates(const CycleBucket& bucket, std::span<const Track> tracks,
                                               const SiteConfig& site) {
  std::vector<const Track*> peds, mvs, nmvs;
  for (const auto i : bucket.track_indices) {
    const Track& t = tracks[i];
    switch (t.road_user_class()) {
      case RoadUserClass::Pedestrian:
        peds.push_back(&t);
        break;
      case RoadUserClass::MV:
        mvs.push_back(&t);
        break;
      case RoadUserClass::NMV:
        nmvs.push_back(&t);
        break;
    }
  }

  std::unordered_map<std::string_view, const Track*> by_id;
  for (const auto& t : tracks) by_id.emplace(t.id(), &t);
  std::set<std::string> conflict_ids;
  for (const auto& e : bucket.events) {
    conflict_ids.insert(e.ped_id);
    conflict_ids.insert(e.veh_id);
  }
  std::vector<const Track*> c_peds, c_mvs, c_nmvs;
  for (const auto& id : conflict_ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) continue;
    const Track* t = it->second;
    switch (t->road_user_class()) {
      case RoadUserClass::Pedestrian:
        c_peds.push_back(t);
        break;
      case RoadUserClass::MV:
        c_mvs.push_back(t);
        break;
      case RoadUserClass::NMV:
        c_nmvs.push_back(t);
        break;
    }
  }

  CandidateCovariates out;
  auto speed = [&](std::span<const Track* const> group, std::string_view name) {
    if (!group.empty()) {
      try {
        return space_mean_speed(group, bucket.t_start, bucket.t_end);
      } catch (const EmptyWindowError&) {
      }
    }
    out.missing.emplace_back(name);
    return 0.0;
  };
  auto& v = out.values;
  v[0] = pcu_count(mvs, site.pcu_factors);
  v[1] = static_cast<double>(peds.size());
  v[2] = speed(mvs, "s_mv");
  v[3] = speed(peds, "s_p");
  v[4] = pcu_count(c_mvs, site.pcu_factors);
  v[5] = speed(c_mvs, "cs_mv");
  v[6] = speed(c_nmvs, "cs_nmv");
  v[7] = pcu_count(nmvs, site.pcu_factors);
  v[8] = speed(nmvs, "s_nmv");
  v[9] = pcu_count(c_nmvs, site.pcu_factors);
  v[10] = static_cast<double>(c_peds.size());
  v[11] = speed(c_peds, "cs_p");
  return out;
}

CovariateVector build_covariates(const CycleBucket& bucket, std::span<const Track> tracks, const SiteConfig& site) {
  return build_candidate_covariates(bucket, tracks, site).retained();
}

double pearson(std::span<const double> a, std::span<const double> b) {
  const auto n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::nan("");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

CorrelationReport correlation_filter(std::span<const std::vector<double>> columns, std::span<const std::string> names,
                                     double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw DomainError("correlation threshold must lie in (0, 1)");
  if (columns.size() != names.size()) throw DomainError("column and name counts differ");
  const std::size_t k = columns.size();
  const std::size_t rows = k ? columns[0].size() : 0;
  for (const auto& col : columns) {
    if (col.size() != rows) throw DomainError("covariate columns have different lengths");
  }
  if (rows < 3) throw DomainError("correlation filter needs at least three cycles");

  CorrelationReport report;
  report.names.assign(names.begin(), names.end());
  report.matrix.assign(k, std::vector<double>(k, 0.0));
  std::vector<bool> alive(k, true);
  for (std::size_t i = 0; i < k; ++i) {
    const bool constant = std::all_of(columns[i].begin(), columns[i].end(), [&](double x) { return x == columns[i][0]; });
    if (constant) {
      alive[i] = false;
      report.dropped.push_back(names[i]);
      report.diagnostics.push_back("column '" + names[i] + "' is constant; correlation undefined, dropped");
    }
  }
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i; j < k; ++j) {
      const double r = (i == j) ? (alive[i] ? 1.0 : std::nan("")) : pearson(columns[i], columns[j]);
      report.matrix[i][j] = report.matrix[j][i] = r;
    }
  }

  while (true) {
    std::size_t worst = k;
    std::size_t worst_count = 0;
    for (std::size_t i = 0; i < k; ++i) {
      if (!alive[i]) continue;
      std::size_t count = 0;
      for (std::size_t j = 0; j < k; ++j) {
        if (j != i && alive[j] && std::abs(report.matrix[i][j]) >= threshold) ++count;
      }
      if (count > 0 && count >= worst_count) {
        worst = i;
        worst_count = count;
      }
    }
    if (worst == k) break;
    alive[worst] = false;
    report.dropped.push_back(names[worst]);
  }
  for (std::size_t i = 0; i < k; ++i) {
    if (alive[i]) report.retained.push_back(names[i]);
  }
  return report;
}

void write_correlation_csv(std::ostream& out, const CorrelationReport& report) {
  out << "covariate";
  for (const auto& n : report.names) out << ',' << n;
  out << '\n';
  for (std::size_t i = 0; i < report.names.size(); ++i) {
    out << report.names[i];
    for (const double r : report.matrix[i]) out << ',' << csv::format_double(r);
    out << '\n';
  }
}

SiteBlocks build_site_blocks(std::span<const ConflictEvent> events, std::span<const Track> tracks,
                             const SiteConfig& site) {
  auto assignment = assign_cycles(events, tracks, site);
  SiteBlocks out;
  out.diagnostics = std::move(assignment.diagnostics);
  for (const auto& bucket : assignment.cycles) {
    CycleSummary summary{site.site_id, bucket.cycle_index, bucket.events.size(), std::nan(""), std::nan("")};
    if (!bucket.events.empty()) {
      double sum = 0.0;
      for (const auto& e : bucket.events) sum += e.pet;
      const double n = static_cast<double>(bucket.events.size());
      summary.pet_mean = sum / n;
      if (bucket.events.size() > 1) {
        double ss = 0.0;
        for (const auto& e : bucket.events) ss += (e.pet - summary.pet_mean) * (e.pet - summary.pet_mean);
        summary.pet_sd = std::sqrt(ss / (n - 1.0));
      }
    }
    out.cycles.push_back(summary);

    const auto z = block_extreme(bucket.events);
    if (!z) continue;
    auto cand = build_candidate_covariates(bucket, tracks, site);
    for (const auto& m : cand.missing) {
      out.diagnostics.push_back("site " + site.site_id + " cycle " + std::to_string(bucket.cycle_index) + ": " + m +
                                " has no contributing road users, recorded as 0");
    }
    out.blocks.push_back({site.site_id, bucket.cycle_index, *z, bucket.events.size(), cand.retained()});
    out.candidates.push_back(std::move(cand));
  }
  return out;
}

void write_blocks_csv(std::ostream& out, std::span<const CycleBlock> blocks) {
  out << kBlockCsvHeader << '\n';
  for (const auto& b : blocks) {
    out << b.site_id << ',' << b.cycle_index << ',' << csv::format_double(b.z) << ',' << b.n_conflicts;
    for (const auto c : kAllCovariates) out << ',' << csv::format_double(b.covariates.get(c));
    out << '\n';
  }
}

std::vector<CycleBlock> read_blocks_csv(std::istream& in) {
  csv::expect_header(in, kBlockCsvHeader);
  std::vector<CycleBlock> blocks;
  std::string line;
  std::size_t lineno = 1;
  while (csv::read_line(in, line)) {
    ++lineno;
    if (csv::trim(line).empty()) continue;
    const auto f = csv::split(line);
    if (f.size() != 4 + kNumCovariates) throw DataError("wrong number of fields", lineno);
    CycleBlock b;
    b.site_id = std::string(csv::trim(f[0]));
    if (b.site_id.empty()) throw DataError("empty site_id", lineno);
    const auto cycle = csv::parse_int(f[1], lineno);
    const auto n = csv::parse_int(f[3], lineno);
    if (cycle < 0) throw DataError("negative cycle index", lineno);
    if (n < 1) throw DataError("a block needs at least one conflict", lineno);
    b.cycle_index = static_cast<std::size_t>(cycle);
    b.n_conflicts = static_cast<std::size_t>(n);
    b.z = csv::parse_double(f[2], lineno);
    for (std::size_t k = 0; k < kNumCovariates; ++k) {
      const double v = csv::parse_double(f[4 + k], lineno);
      if (v < 0.0) throw DataError("negative covariate value", lineno);
      b.covariates.set(kAllCovariates[k], v);
    }
    blocks.push_back(std::move(b));
  }
  return blocks;
}

void write_cycle_summary_csv(std::ostream& out, std::span<const CycleSummary> cycles) {
  out << "site_id,cycle,n_conflicts,pet_mean,pet_sd\n";
  for (const auto& c : cycles) {
    out << c.site_id << ',' << c.cycle_index << ',' << c.n_conflicts << ',' << csv::format_double(c.pet_mean) << ','
        << csv::format_double(c.pet_sd) << '\n';
  }
}

CovariateVector CovariateScaling::apply(const CovariateVector& v) const {
  CovariateVector out;
  for (const auto c : kAllCovariates) out.set(c, v.get(c) / divisor[static_cast<std::size_t>(c)]);
  return out;
}

CovariateScaling mean_scaling(std::span<const CycleBlock> blocks) {
  CovariateScaling s;
  if (blocks.empty()) return s;
  for (const auto c : kAllCovariates) {
    double sum = 0.0;
    for (const auto& b : blocks) sum += b.covariates.get(c);
    const double mean = sum / static_cast<double>(blocks.size());
    if (mean > 0.0) s.divisor[static_cast<std::size_t>(c)] = mean;
  }
  return s;
}

std::vector<CycleBlock> apply_scaling(std::span<const CycleBlock> blocks, const CovariateScaling& s) {
  std::vector<CycleBlock> out(blocks.begin(), blocks.end());
  for (auto& b : out) b.covariates = s.apply(b.covariates);
  return out;
}

}  // namespace pedrisk
