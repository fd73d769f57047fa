#include "pedrisk/config.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <set>

#include <json.hpp>

#include "pedrisk/errors.hpp"

namespace pedrisk {

namespace {

using Json = nlohmann::ordered_json;

void reject_unknown(const Json& j, std::initializer_list<std::string_view> keys, std::string_view where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be a JSON object");
  for (const auto& item : j.items()) {
    if (std::find(keys.begin(), keys.end(), item.key()) == keys.end()) {
      throw ConfigError("unknown key '" + item.key() + "' in " + std::string(where));
    }
  }
}

template <class T>
void read(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

template <class T>
void read_optional(const Json& j, const char* key, std::optional<T>& out) {
  if (!j.contains(key)) return;
  if (j.at(key).is_null()) {
    out.reset();
  } else {
    out = j.at(key).get<T>();
  }
}

std::vector<Covariate> read_covariates(const Json& j) {
  std::vector<Covariate> out;
  for (const auto& name : j.get<std::vector<std::string>>()) {
    try {
      out.push_back(covariate_from_name(name));
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
  }
  return out;
}

Json write_covariates(const std::vector<Covariate>& covs) {
  Json out = Json::array();
  for (const auto c : covs) out.push_back(std::string(covariate_name(c)));
  return out;
}

template <class T>
Json nullable(const std::optional<T>& v) {
  return v ? Json(*v) : Json(nullptr);
}

// NaN and infinities have no JSON spelling; they become null.
Json number(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

double read_number(const Json& j) { return j.is_null() ? std::nan("") : j.get<double>(); }

Json site_to_json(const SiteConfig& s) {
  Json j;
  j["site_id"] = s.site_id;
  j["cycle_length"] = s.cycle_length;
  j["observation_start"] = s.observation_start;
  j["observation_duration"] = s.observation_duration;
  j["pcu_factors"] = s.pcu_factors;
  return j;
}

SiteConfig site_from_json(const Json& j, const std::map<std::string, double>& default_pcu) {
  reject_unknown(j, {"site_id", "cycle_length", "observation_start", "observation_duration", "pcu_factors"}, "site");
  SiteConfig s;
  s.site_id = j.at("site_id").get<std::string>();
  s.cycle_length = j.at("cycle_length").get<double>();
  read(j, "observation_start", s.observation_start);
  s.observation_duration = j.at("observation_duration").get<double>();
  s.pcu_factors = default_pcu;
  read(j, "pcu_factors", s.pcu_factors);
  return s;
}

Json perspective_to_json(const PerspectiveModel& m) {
  Json j;
  j["poly"] = m.poly;
  j["field_scale"] = m.field_scale;
  j["domain"] = {m.x_min, m.x_max};
  return j;
}

std::string_view kind_name(SimulateKind k) {
  switch (k) {
    case SimulateKind::Blocks:
      return "blocks";
    case SimulateKind::Crossing:
      return "crossing";
    case SimulateKind::Cycles:
      return "cycles";
  }
  return "blocks";
}

SimulateKind kind_from_name(const std::string& s) {
  if (s == "blocks") return SimulateKind::Blocks;
  if (s == "crossing") return SimulateKind::Crossing;
  if (s == "cycles") return SimulateKind::Cycles;
  throw ConfigError("unknown simulate kind '" + s + "' (blocks, crossing, cycles)");
}

Json simulate_to_json(const SimulateConfig& s) {
  Json j;
  j["kind"] = std::string(kind_name(s.kind));
  j["seed"] = s.seed;
  j["model"] = s.model;
  j["covariates"] = write_covariates(s.covariates);
  j["sites"] = s.sites;
  Json theta = Json::object();
  for (const auto& [name, v] : s.theta) theta[name] = v;
  j["theta"] = theta;
  Json ranges = Json::object();
  for (std::size_t k = 0; k < kNumCovariates; ++k) {
    ranges[std::string(covariate_name(kAllCovariates[k]))] = {s.ranges[k].lo, s.ranges[k].hi};
  }
  j["ranges"] = ranges;
  j["n_cycles"] = s.n_cycles;

  const auto& c = s.crossing;
  Json cj;
  cj["n_pedestrians"] = c.n_pedestrians;
  cj["n_vehicles"] = c.n_vehicles;
  cj["ped_speed"] = c.ped_speed;
  cj["veh_speed"] = c.veh_speed;
  cj["spacing"] = c.spacing;
  cj["approach"] = c.approach;
  cj["start_spread"] = c.start_spread;
  cj["ped_start"] = c.ped_start;
  cj["veh_start"] = c.veh_start;
  j["crossing"] = cj;

  const auto& y = s.cycles;
  Json yj;
  yj["site_id"] = y.site_id;
  yj["cycle_length"] = y.cycle_length;
  yj["n_cycles"] = y.n_cycles;
  yj["mu"] = y.mu;
  yj["sigma"] = y.sigma;
  yj["xi"] = y.xi;
  j["cycles"] = yj;
  return j;
}

SimulateConfig simulate_from_json(const Json& j) {
  reject_unknown(j, {"kind", "seed", "model", "covariates", "sites", "theta", "ranges", "n_cycles", "crossing", "cycles"},
                 "simulate");
  SimulateConfig s;
  if (j.contains("kind")) s.kind = kind_from_name(j.at("kind").get<std::string>());
  read(j, "seed", s.seed);
  read(j, "model", s.model);
  if (j.contains("covariates")) s.covariates = read_covariates(j.at("covariates"));
  read(j, "sites", s.sites);
  if (j.contains("theta")) {
    if (!j.at("theta").is_object()) throw ConfigError("simulate.theta must map parameter names to values");
    for (const auto& item : j.at("theta").items()) s.theta.emplace_back(item.key(), item.value().get<double>());
  }
  if (j.contains("ranges")) {
    for (const auto& item : j.at("ranges").items()) {
      Covariate c{};
      try {
        c = covariate_from_name(item.key());
      } catch (const Error& e) {
        throw ConfigError(e.what());
      }
      const auto r = item.value().get<std::vector<double>>();
      if (r.size() != 2) throw ConfigError("simulate range for " + item.key() + " must be [lo, hi]");
      s.ranges[static_cast<std::size_t>(c)] = {r[0], r[1]};
    }
  }
  read(j, "n_cycles", s.n_cycles);
  if (j.contains("crossing")) {
    const auto& cj = j.at("crossing");
    reject_unknown(cj, {"n_pedestrians", "n_vehicles", "ped_speed", "veh_speed", "spacing", "approach", "start_spread",
                        "ped_start", "veh_start"},
                   "simulate.crossing");
    auto& c = s.crossing;
    read(cj, "n_pedestrians", c.n_pedestrians);
    read(cj, "n_vehicles", c.n_vehicles);
    read(cj, "ped_speed", c.ped_speed);
    read(cj, "veh_speed", c.veh_speed);
    read(cj, "spacing", c.spacing);
    read(cj, "approach", c.approach);
    read(cj, "start_spread", c.start_spread);
    read(cj, "ped_start", c.ped_start);
    read(cj, "veh_start", c.veh_start);
  }
  if (j.contains("cycles")) {
    const auto& yj = j.at("cycles");
    reject_unknown(yj, {"site_id", "cycle_length", "n_cycles", "mu", "sigma", "xi"}, "simulate.cycles");
    auto& y = s.cycles;
    read(yj, "site_id", y.site_id);
    read(yj, "cycle_length", y.cycle_length);
    read(yj, "n_cycles", y.n_cycles);
    read(yj, "mu", y.mu);
    read(yj, "sigma", y.sigma);
    read(yj, "xi", y.xi);
    if (!(y.sigma > 0.0)) throw ConfigError("simulate.cycles.sigma must be positive");
  }
  return s;
}

Json summary_to_json(const ParamSummary& s) {
  Json j;
  j["name"] = s.name;
  j["mean"] = number(s.mean);
  j["sd"] = number(s.sd);
  j["q025"] = number(s.q025);
  j["q975"] = number(s.q975);
  j["rhat"] = number(s.rhat);
  return j;
}

}  // namespace

void RunConfig::validate() const {
  std::set<std::string> ids;
  for (const auto& s : sites) {
    s.validate();
    if (!ids.insert(s.site_id).second) throw ConfigError("duplicate site id '" + s.site_id + "'");
    for (const auto& [name, f] : s.pcu_factors) {
      if (!(f > 0.0)) throw ConfigError("PCU factor for '" + name + "' must be positive");
    }
  }
  for (const auto& [name, f] : pcu_factors) {
    if (!(f > 0.0)) throw ConfigError("PCU factor for '" + name + "' must be positive");
  }
  if (perspective) {
    try {
      perspective->validate();
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
  }
  if (!(pet_threshold > 0.0)) throw ConfigError("pet_threshold must be positive");
  if (!(correlation_threshold > 0.0 && correlation_threshold < 1.0)) {
    throw ConfigError("correlation_threshold must lie in (0, 1)");
  }
  if (models.empty()) throw ConfigError("models must not be empty");
  std::set<std::string> seen;
  for (const auto& m : models) {
    const auto& names = model_names();
    if (std::find(names.begin(), names.end(), m) == names.end()) throw ConfigError("unknown model '" + m + "'");
    if (!seen.insert(m).second) throw ConfigError("model '" + m + "' listed twice");
  }
  if (covariates) {
    std::set<Covariate> cs(covariates->begin(), covariates->end());
    if (cs.size() != covariates->size()) throw ConfigError("covariate listed twice");
  }
  if (chains < 2) throw ConfigError("chains must be at least 2");
  if (iterations <= burn_in) throw ConfigError("iterations must exceed burn_in");
  if (iterations - burn_in < 10) throw ConfigError("need at least 10 post burn-in iterations");
  if (!(z_cr >= 0.0)) throw ConfigError("z_cr must be non-negative");
  if (!(baseline_eps >= 0.0)) throw ConfigError("baseline_eps must be non-negative");
  if (!(total_hours > 0.0)) throw ConfigError("total_hours must be positive");
  if (observed_hours && !(*observed_hours > 0.0)) throw ConfigError("observed_hours must be positive");
  if (observed_crashes && !(*observed_crashes >= 0.0)) throw ConfigError("observed_crashes must be non-negative");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

std::vector<std::uint64_t> RunConfig::chain_seeds() const {
  std::vector<std::uint64_t> out;
  for (std::size_t k = 0; k < chains; ++k) out.push_back(seed + k);
  return out;
}

RunConfig parse_run_config(std::string_view json_text) {
  RunConfig c;
  try {
    const Json j = Json::parse(json_text);
    reject_unknown(j,
                   {"trajectories", "conflicts", "blocks", "fit_report", "perspective", "sites", "pet_threshold",
                    "pcu_factors", "correlation_threshold", "models", "covariates", "chains", "iterations", "burn_in",
                    "seed", "write_traces", "z_cr", "baseline_eps", "total_hours", "observed_hours", "observed_crashes",
                    "output_dir", "simulate"},
                   "config");
    read(j, "trajectories", c.trajectories);
    read(j, "conflicts", c.conflicts);
    read(j, "blocks", c.blocks);
    read(j, "fit_report", c.fit_report);
    if (j.contains("perspective") && !j.at("perspective").is_null()) {
      c.perspective = parse_perspective_json(j.at("perspective").dump());
    }
    read(j, "pcu_factors", c.pcu_factors);
    if (j.contains("sites")) {
      for (const auto& s : j.at("sites")) c.sites.push_back(site_from_json(s, c.pcu_factors));
    }
    read(j, "pet_threshold", c.pet_threshold);
    read(j, "correlation_threshold", c.correlation_threshold);
    read(j, "models", c.models);
    if (j.contains("covariates") && !j.at("covariates").is_null()) c.covariates = read_covariates(j.at("covariates"));
    read(j, "chains", c.chains);
    read(j, "iterations", c.iterations);
    read(j, "burn_in", c.burn_in);
    read(j, "seed", c.seed);
    read(j, "write_traces", c.write_traces);
    read(j, "z_cr", c.z_cr);
    read(j, "baseline_eps", c.baseline_eps);
    read(j, "total_hours", c.total_hours);
    read_optional(j, "observed_hours", c.observed_hours);
    read_optional(j, "observed_crashes", c.observed_crashes);
    read(j, "output_dir", c.output_dir);
    if (j.contains("simulate") && !j.at("simulate").is_null()) c.simulate = simulate_from_json(j.at("simulate"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  c.validate();
  return c;
}

std::string serialize_run_config(const RunConfig& c) {
  Json j;
  j["trajectories"] = c.trajectories;
  j["conflicts"] = c.conflicts;
  j["blocks"] = c.blocks;
  j["fit_report"] = c.fit_report;
  j["perspective"] = c.perspective ? perspective_to_json(*c.perspective) : Json(nullptr);
  j["pcu_factors"] = c.pcu_factors;
  Json sites = Json::array();
  for (const auto& s : c.sites) sites.push_back(site_to_json(s));
  j["sites"] = sites;
  j["pet_threshold"] = c.pet_threshold;
  j["correlation_threshold"] = c.correlation_threshold;
  j["models"] = c.models;
  j["covariates"] = c.covariates ? write_covariates(*c.covariates) : Json(nullptr);
  j["chains"] = c.chains;
  j["iterations"] = c.iterations;
  j["burn_in"] = c.burn_in;
  j["seed"] = c.seed;
  j["write_traces"] = c.write_traces;
  j["z_cr"] = c.z_cr;
  j["baseline_eps"] = c.baseline_eps;
  j["total_hours"] = c.total_hours;
  j["observed_hours"] = nullable(c.observed_hours);
  j["observed_crashes"] = nullable(c.observed_crashes);
  j["output_dir"] = c.output_dir;
  j["simulate"] = c.simulate ? simulate_to_json(*c.simulate) : Json(nullptr);
  return j.dump(2) + "\n";
}

synth::Scenario make_scenario(const SimulateConfig& sim) {
  synth::Scenario s;
  s.sites = sim.sites;
  s.truth = make_model_spec(sim.model, sim.covariates, sim.sites);
  const ParameterLayout layout(s.truth);
  s.theta.assign(layout.size(), std::nan(""));
  for (const auto& [name, v] : sim.theta) {
    const auto idx = layout.index_of(name);
    if (!idx) throw ConfigError("model " + sim.model + " has no parameter '" + name + "'");
    s.theta[*idx] = v;
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (std::isnan(s.theta[i])) throw ConfigError("simulate.theta is missing '" + layout.params()[i].name + "'");
  }
  s.ranges = sim.ranges;
  s.n_cycles = sim.n_cycles;
  s.seed = sim.seed;
  s.validate();
  return s;
}

std::string fit_report_json(const FitReport& report, const FitConfig& config) {
  Json j;
  j["format"] = "pedrisk-fit-report/1";
  Json settings;
  settings["models"] = config.models;
  settings["seeds"] = config.seeds;
  settings["iterations"] = config.n_iter;
  settings["burn_in"] = config.burn_in;
  settings["rhat_threshold"] = kRhatThreshold;
  settings["min_acceptance"] = kMinAcceptance;
  j["settings"] = settings;
  j["sites"] = report.sites;
  j["covariates"] = write_covariates(report.covariates);
  Json scaling = Json::object();
  for (std::size_t k = 0; k < kNumCovariates; ++k) {
    scaling[std::string(covariate_name(kAllCovariates[k]))] = report.scaling.divisor[k];
  }
  j["scaling"] = scaling;
  j["scale_parameterisation"] = "phi = log(sigma)";
  j["diagnostics"] = report.diagnostics;
  j["selected"] = nullable(report.selected);
  Json models = Json::array();
  for (const auto& fit : report.models) {
    Json m;
    m["name"] = fit.name;
    if (!fit.posterior) {
      m["status"] = "failed";
      m["failure"] = fit.failure;
      models.push_back(m);
      continue;
    }
    const Posterior& p = *fit.posterior;
    m["status"] = "fitted";
    m["mu_link"] = std::string(link_kind_name(p.spec.mu_link));
    m["phi_link"] = std::string(link_kind_name(p.spec.phi_link));
    m["random_effects"] = p.spec.random_effects();
    m["converged"] = p.converged;
    m["max_rhat"] = number(p.max_rhat);
    m["min_acceptance"] = number(p.min_acceptance);
    Json dic;
    dic["dic"] = number(p.dic.dic);
    dic["d_bar"] = number(p.dic.d_bar);
    dic["p_d"] = number(p.dic.p_d);
    if (!p.dic.diagnostic.empty()) dic["diagnostic"] = p.dic.diagnostic;
    m["dic"] = dic;
    Json params = Json::array();
    for (const auto& s : p.params) params.push_back(summary_to_json(s));
    m["parameters"] = params;

    // sigma_0 = exp(phi_0), summarised draw by draw.
    const ParameterLayout layout(p.spec);
    std::vector<std::vector<double>> sig(p.chains.size());
    for (std::size_t c = 0; c < p.chains.size(); ++c) {
      sig[c] = p.chains[c].column(layout.phi0());
      for (auto& v : sig[c]) v = std::exp(v);
    }
    m["sigma_0"] = summary_to_json(summarize("sigma_0", sig));

    Json orig = Json::array();
    for (const auto& s : p.original_units) orig.push_back(summary_to_json(s));
    m["original_units"] = orig;
    Json mean = Json::object();
    for (std::size_t i = 0; i < p.params.size(); ++i) mean[p.params[i].name] = p.posterior_mean[i];
    m["posterior_mean"] = mean;
    Json acc = Json::object();
    for (std::size_t i = 0; i < p.params.size(); ++i) {
      Json per_chain = Json::array();
      for (const auto& ch : p.chains) per_chain.push_back(number(ch.acceptance[i]));
      acc[p.params[i].name] = per_chain;
    }
    m["acceptance"] = acc;
    models.push_back(m);
  }
  j["models"] = models;
  return j.dump(2) + "\n";
}

LoadedFit parse_fit_report(std::string_view json_text) {
  LoadedFit out;
  try {
    const Json j = Json::parse(json_text);
    const auto sites = j.at("sites").get<std::vector<std::string>>();
    std::vector<Covariate> covs;
    for (const auto& name : j.at("covariates").get<std::vector<std::string>>()) covs.push_back(covariate_from_name(name));
    for (const auto& item : j.at("scaling").items()) {
      out.scaling.divisor[static_cast<std::size_t>(covariate_from_name(item.key()))] = item.value().get<double>();
    }
    if (!j.at("selected").is_null()) out.selected = j.at("selected").get<std::string>();
    for (const auto& m : j.at("models")) {
      if (m.at("status").get<std::string>() != "fitted") continue;
      FittedModel f;
      f.spec = make_model_spec(m.at("name").get<std::string>(), covs, sites);
      const ParameterLayout layout(f.spec);
      const auto& mean = m.at("posterior_mean");
      for (const auto& info : layout.params()) f.posterior_mean.push_back(read_number(mean.at(info.name)));
      f.converged = m.at("converged").get<bool>();
      f.dic = read_number(m.at("dic").at("dic"));
      out.models.push_back(std::move(f));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed fit report: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("malformed fit report: ") + e.what());
  }
  return out;
}

std::string risk_summary_json(std::span<const RiskReport> reports, const std::optional<std::string>& selected,
                              std::optional<double> observed_crashes) {
  Json j;
  j["selected"] = nullable(selected);
  if (!reports.empty()) {
    j["z_cr"] = reports.front().z_cr;
    j["baseline_eps"] = reports.front().baseline_eps;
    j["total_hours"] = reports.front().total_hours;
  }
  Json models = Json::array();
  for (const auto& r : reports) {
    Json m;
    m["model"] = r.model;
    m["n_expected"] = number(r.n_expected);
    m["n_expected_raw"] = number(r.n_expected_raw);
    Json sites = Json::array();
    for (const auto& s : r.sites) {
      Json sj;
      sj["site_id"] = s.site_id;
      sj["observed_hours"] = s.observed_hours;
      sj["rc_mean"] = number(s.rc_mean);
      sj["rc_sd"] = number(s.rc_sd);
      sj["baseline_applied"] = s.baseline_applied;
      sj["n_expected"] = number(s.n_expected);
      sj["n_expected_raw"] = number(s.n_expected_raw);
      if (!s.diagnostic.empty()) sj["diagnostic"] = s.diagnostic;
      sites.push_back(sj);
    }
    m["sites"] = sites;
    models.push_back(m);
  }
  j["models"] = models;
  if (observed_crashes) {
    Json table = Json::array();
    for (const auto& row : benchmark_against_observed(reports, *observed_crashes)) {
      Json t;
      t["model"] = row.model;
      t["n_expected"] = number(row.n_expected);
      t["n_expected_raw"] = number(row.n_expected_raw);
      t["observed"] = row.observed;
      table.push_back(t);
    }
    j["benchmark"] = table;
  }
  return j.dump(2) + "\n";
}

}  // namespace pedrisk
