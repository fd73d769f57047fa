#include "pedrisk/risk.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "pedrisk/csv.hpp"
#include "pedrisk/errors.hpp"

namespace pedrisk {

double crash_risk(const GevParams& params) {
  const double sigma = params.sigma();
  if (std::abs(params.xi) < kXiEps) return -std::expm1(-std::exp(params.mu / sigma));
  const double t = 1.0 - params.xi * params.mu / sigma;
  // Bracket at or below 0: 0 lies beyond the upper endpoint (xi < 0) or below
  // the lower one (xi > 0).
  if (!(t > 0.0)) return params.xi < 0.0 ? 0.0 : 1.0;
  return -std::expm1(-std::exp(-std::log(t) / params.xi));
}

MrcResult modified_crash_risk(std::span<const double> rcs, double z_cr, double baseline_eps) {
  if (!(z_cr >= 0.0)) throw DomainError("z_cr must be non-negative");
  MrcResult out;
  out.mrc.assign(rcs.begin(), rcs.end());
  if (rcs.empty()) return out;
  const auto n = static_cast<double>(rcs.size());
  // offsets from the first value keep a constant series exact
  double acc = 0.0;
  for (const double rc : rcs) acc += rc - rcs[0];
  out.rc_mean = rcs[0] + acc / n;
  if (rcs.size() >= 2) {
    double ss = 0.0;
    for (const double rc : rcs) ss += (rc - out.rc_mean) * (rc - out.rc_mean);
    out.rc_sd = std::sqrt(ss / (n - 1.0));
  }
  if (!(out.rc_mean > baseline_eps)) return out;
  if (rcs.size() < 2) {
    out.diagnostic = "fewer than two cycles: RC standard deviation undefined, baseline not applied";
    return out;
  }
  out.baseline_applied = true;
  const double cutoff = out.rc_mean + z_cr * out.rc_sd;
  for (auto& m : out.mrc) m = std::max(0.0, m - cutoff);
  return out;
}

double expected_crashes(std::span<const double> mrcs, double total_hours, double observed_hours) {
  if (!(total_hours > 0.0) || !(observed_hours > 0.0)) throw DomainError("T and t must be positive hours");
  double sum = 0.0;
  for (const double m : mrcs) {
    if (m > 0.0) sum += m;
  }
  return total_hours / observed_hours * sum;
}

RiskReport compute_risk(std::string model_name, const GevModel& model, const CovariateScaling& scaling,
                        std::span<const CycleBlock> blocks, std::span<const SiteConfig> sites,
                        const RiskOptions& options) {
  RiskReport report;
  report.model = std::move(model_name);
  report.z_cr = options.z_cr;
  report.baseline_eps = options.baseline_eps;
  report.total_hours = options.total_hours;
  for (const auto& site : sites) {
    SiteRisk sr;
    sr.site_id = site.site_id;
    sr.observed_hours = options.observed_hours.value_or(static_cast<double>(site.n_cycles()) * site.cycle_length / 3600.0);
    const std::size_t n = site.n_cycles();
    sr.rows.resize(n);
    for (std::size_t c = 0; c < n; ++c) {
      sr.rows[c] = {site.site_id, c, std::nan(""), std::nan(""), std::nan(""), 0.0, 0.0, false};
    }
    std::vector<std::size_t> with_block;
    for (const auto& b : blocks) {
      if (b.site_id != site.site_id) continue;
      if (b.cycle_index >= n) throw DataError("block cycle " + std::to_string(b.cycle_index) + " beyond site '" +
                                              site.site_id + "' observation window");
      CycleBlock scaled = b;
      scaled.covariates = scaling.apply(b.covariates);
      const GevParams p = params_for_cycle(model, scaled);
      auto& row = sr.rows[b.cycle_index];
      row.mu = p.mu;
      row.sigma = p.sigma();
      row.xi = p.xi;
      row.rc = crash_risk(p);
      row.has_block = true;
      with_block.push_back(b.cycle_index);
    }
    std::sort(with_block.begin(), with_block.end());
    std::vector<double> rcs;
    for (const auto c : with_block) rcs.push_back(sr.rows[c].rc);
    const auto mrc = modified_crash_risk(rcs, options.z_cr, options.baseline_eps);
    sr.rc_mean = mrc.rc_mean;
    sr.rc_sd = mrc.rc_sd;
    sr.baseline_applied = mrc.baseline_applied;
    sr.diagnostic = mrc.diagnostic;
    for (std::size_t i = 0; i < with_block.size(); ++i) sr.rows[with_block[i]].mrc = mrc.mrc[i];
    if (sr.observed_hours > 0.0) {
      sr.n_expected = expected_crashes(mrc.mrc, options.total_hours, sr.observed_hours);
      sr.n_expected_raw = expected_crashes(rcs, options.total_hours, sr.observed_hours);
    }
    report.n_expected += sr.n_expected;
    report.n_expected_raw += sr.n_expected_raw;
    report.sites.push_back(std::move(sr));
  }
  return report;
}

std::vector<BenchmarkRow> benchmark_against_observed(std::span<const RiskReport> reports, double observed_crashes) {
  std::vector<BenchmarkRow> rows;
  for (const auto& r : reports) rows.push_back({r.model, r.n_expected, r.n_expected_raw, observed_crashes});
  return rows;
}

void write_risk_csv(std::ostream& out, const RiskReport& report) {
  out << kRiskCsvHeader << '\n';
  for (const auto& site : report.sites) {
    for (const auto& r : site.rows) {
      out << r.site_id << ',' << r.cycle << ',' << csv::format_double(r.mu) << ',' << csv::format_double(r.sigma) << ','
          << csv::format_double(r.xi) << ',' << csv::format_double(r.rc) << ',' << csv::format_double(r.mrc) << '\n';
    }
  }
}

void write_density_curves_csv(std::ostream& out, const RiskReport& report, std::size_t per_site, std::size_t points) {
  out << "site_id,cycle,z,density\n";
  if (points < 2) return;
  for (const auto& site : report.sites) {
    std::vector<const RiskRow*> rows;
    for (const auto& r : site.rows) {
      if (r.has_block) rows.push_back(&r);
    }
    if (rows.empty() || per_site == 0) continue;
    const std::size_t take = std::min(per_site, rows.size());
    for (std::size_t k = 0; k < take; ++k) {
      const RiskRow& r = *rows[take == 1 ? 0 : k * (rows.size() - 1) / (take - 1)];
      const GevParams p{r.mu, std::log(r.sigma), r.xi};
      const double lo = gev_quantile(0.001, p);
      const double hi = gev_quantile(0.999, p);
      for (std::size_t i = 0; i < points; ++i) {
        const double z = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
        out << r.site_id << ',' << r.cycle << ',' << csv::format_double(z) << ','
            << csv::format_double(std::exp(gev_logpdf(z, p))) << '\n';
      }
    }
  }
}

}  // namespace pedrisk
