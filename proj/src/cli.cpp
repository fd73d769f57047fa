#include "pedrisk/cli.hpp"

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "pedrisk/blocks.hpp"
#include "pedrisk/config.hpp"
#include "pedrisk/conflict.hpp"
#include "pedrisk/csv.hpp"
#include "pedrisk/errors.hpp"
#include "pedrisk/inference.hpp"
#include "pedrisk/risk.hpp"
#include "pedrisk/synth.hpp"
#include "pedrisk/trajectory.hpp"

namespace pedrisk::cli {

namespace {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

struct Options {
  std::string config;
  unsigned jobs = 1;
  std::optional<std::uint64_t> seed;
  std::string models;
  std::string out;
  bool dry_run = false;
  std::optional<double> years;
};

std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (const unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Unreadable config files are usage errors, unlike data inputs.
std::string read_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << content;
  out.close();
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
}

template <class Fn>
std::string render(Fn&& fn) {
  std::ostringstream ss;
  fn(ss);
  return ss.str();
}

std::string replace_site(std::string pattern, const std::string& site) {
  const std::string token = "{site}";
  for (auto pos = pattern.find(token); pos != std::string::npos; pos = pattern.find(token, pos + site.size())) {
    pattern.replace(pos, token.size(), site);
  }
  return pattern;
}

class Manifest {
 public:
  explicit Manifest(fs::path path) : path_(std::move(path)) {
    if (!fs::exists(path_)) return;
    try {
      doc_ = Json::parse(read_file(path_));
    } catch (const nlohmann::json::exception&) {
      doc_ = Json::object();
    }
    if (!doc_.is_object() || !doc_.contains("stages") || !doc_["stages"].is_object()) doc_ = Json::object();
  }

  [[nodiscard]] bool up_to_date(const std::string& stage, const std::string& key, const fs::path& base) const {
    if (!doc_.contains("stages") || !doc_["stages"].contains(stage)) return false;
    const auto& entry = doc_["stages"][stage];
    if (!entry.contains("key") || entry["key"] != key || !entry.contains("outputs")) return false;
    for (const auto& item : entry["outputs"].items()) {
      const fs::path p = base / item.key();
      if (!fs::exists(p) || hex(fnv1a(read_file(p))) != item.value()) return false;
    }
    return true;
  }

  void record(const std::string& stage, const std::string& key, const std::vector<fs::path>& outputs,
              const fs::path& base) {
    Json entry;
    entry["key"] = key;
    Json outs = Json::object();
    for (const auto& p : outputs) outs[fs::relative(p, base).generic_string()] = hex(fnv1a(read_file(p)));
    entry["outputs"] = outs;
    doc_["stages"][stage] = entry;
    static const std::array<const char*, 4> order{"conflicts", "blocks", "fit", "risk"};
    Json sorted = Json::object();
    for (const char* s : order) {
      if (doc_["stages"].contains(s)) sorted[s] = doc_["stages"][s];
    }
    doc_["stages"] = sorted;
    write_file(path_, doc_.dump(2) + "\n");
  }

 private:
  fs::path path_;
  Json doc_ = Json::object();
};

class Runner {
 public:
  Runner(RunConfig cfg, fs::path config_dir, fs::path out_dir, unsigned jobs, std::ostream& log)
      : cfg_(std::move(cfg)),
        config_dir_(std::move(config_dir)),
        out_dir_(std::move(out_dir)),
        jobs_(jobs),
        log_(log),
        config_text_(serialize_run_config(cfg_)) {}

  [[nodiscard]] const RunConfig& config() const { return cfg_; }

  void require_sites() const {
    if (cfg_.sites.empty()) throw ConfigError("config lists no sites");
  }

  fs::path trajectories_for(const std::string& site) const {
    if (cfg_.trajectories.empty()) return out_dir_ / "trajectories.csv";
    if (cfg_.sites.size() > 1 && cfg_.trajectories.find("{site}") == std::string::npos) {
      throw ConfigError("with several sites 'trajectories' must contain the {site} placeholder");
    }
    return resolve(replace_site(cfg_.trajectories, site));
  }

  fs::path conflicts_for(const std::string& site) const {
    if (cfg_.conflicts.empty()) return out_dir_ / site / "conflicts.csv";
    if (cfg_.sites.size() > 1 && cfg_.conflicts.find("{site}") == std::string::npos) {
      throw ConfigError("with several sites 'conflicts' must contain the {site} placeholder");
    }
    return resolve(replace_site(cfg_.conflicts, site));
  }

  fs::path blocks_path() const { return cfg_.blocks.empty() ? out_dir_ / "blocks.csv" : resolve(cfg_.blocks); }
  fs::path blocks_report_path() const { return out_dir_ / "blocks_report.json"; }
  fs::path fit_path() const { return cfg_.fit_report.empty() ? out_dir_ / "fit_report.json" : resolve(cfg_.fit_report); }
  fs::path risk_summary_path() const { return out_dir_ / "risk_summary.json"; }

  void conflicts(bool resume) {
    require_sites();
    std::vector<fs::path> inputs;
    for (const auto& s : cfg_.sites) inputs.push_back(trajectories_for(s.site_id));
    stage("conflicts", inputs, resume, [&] {
      std::vector<fs::path> outputs;
      for (const auto& s : cfg_.sites) {
        const auto tracks = load_tracks(s.site_id);
        const auto all = sweep_conflicts(tracks, jobs_);
        const auto kept = filter_conflicts(all, cfg_.pet_threshold);
        const auto path = conflicts_for(s.site_id);
        write_file(path, render([&](std::ostream& o) { write_conflicts_csv(o, kept); }));
        log_ << "conflicts[" << s.site_id << "]: " << tracks.size() << " tracks, " << all.size()
             << " crossings, " << kept.size() << " with PET < " << csv::format_double(cfg_.pet_threshold) << " s\n";
        outputs.push_back(path);
      }
      return outputs;
    });
  }

  void blocks(bool resume) {
    require_sites();
    std::vector<fs::path> inputs;
    for (const auto& s : cfg_.sites) {
      inputs.push_back(trajectories_for(s.site_id));
      inputs.push_back(conflicts_for(s.site_id));
    }
    stage("blocks", inputs, resume, [&] {
      std::vector<CycleBlock> all_blocks;
      std::vector<CycleSummary> summaries;
      std::vector<std::vector<double>> columns(kNumCandidates);
      Json sites = Json::array();
      std::vector<std::string> diagnostics;
      for (const auto& s : cfg_.sites) {
        const auto tracks = load_tracks(s.site_id);
        std::istringstream in(read_file(conflicts_for(s.site_id)));
        const auto events = filter_conflicts(read_conflicts_csv(in), cfg_.pet_threshold);
        auto sb = build_site_blocks(events, tracks, s);
        for (std::size_t i = 0; i < sb.blocks.size(); ++i) {
          for (std::size_t k = 0; k < kNumCandidates; ++k) columns[k].push_back(sb.candidates[i].values[k]);
        }
        for (auto& d : sb.diagnostics) diagnostics.push_back(s.site_id + ": " + d);
        Json sj;
        sj["site_id"] = s.site_id;
        sj["n_cycles"] = s.n_cycles();
        sj["n_blocks"] = sb.blocks.size();
        sj["n_conflicts"] = events.size();
        sites.push_back(sj);
        log_ << "blocks[" << s.site_id << "]: " << s.n_cycles() << " cycles, " << sb.blocks.size()
             << " with conflicts\n";
        all_blocks.insert(all_blocks.end(), sb.blocks.begin(), sb.blocks.end());
        summaries.insert(summaries.end(), sb.cycles.begin(), sb.cycles.end());
      }

      Json correlation(nullptr);
      std::optional<CorrelationReport> corr;
      try {
        const auto& names = candidate_names();
        const std::vector<std::string> name_list(names.begin(), names.end());
        corr = correlation_filter(columns, name_list, cfg_.correlation_threshold);
      } catch (const Error& e) {
        diagnostics.push_back(std::string("correlation filter skipped: ") + e.what());
      }
      std::vector<fs::path> outputs{blocks_path(), out_dir_ / "cycle_pet_summary.csv", blocks_report_path()};
      if (corr) {
        correlation = Json::object();
        correlation["threshold"] = cfg_.correlation_threshold;
        correlation["retained"] = corr->retained;
        correlation["dropped"] = corr->dropped;
        correlation["diagnostics"] = corr->diagnostics;
        const auto path = out_dir_ / "correlation.csv";
        write_file(path, render([&](std::ostream& o) { write_correlation_csv(o, *corr); }));
        outputs.push_back(path);
      }
      write_file(blocks_path(), render([&](std::ostream& o) { write_blocks_csv(o, all_blocks); }));
      write_file(outputs[1], render([&](std::ostream& o) { write_cycle_summary_csv(o, summaries); }));
      Json report;
      report["sites"] = sites;
      report["correlation"] = correlation;
      report["diagnostics"] = diagnostics;
      write_file(blocks_report_path(), report.dump(2) + "\n");
      return outputs;
    });
  }

  void fit(bool resume) {
    std::vector<fs::path> inputs{blocks_path()};
    if (!cfg_.covariates && fs::exists(blocks_report_path())) inputs.push_back(blocks_report_path());
    stage("fit", inputs, resume, [&] {
      std::istringstream in(read_file(blocks_path()));
      const auto blocks = read_blocks_csv(in);
      FitConfig fc;
      fc.models = cfg_.models;
      fc.covariates = fit_covariates();
      fc.seeds = cfg_.chain_seeds();
      fc.n_iter = cfg_.iterations;
      fc.burn_in = cfg_.burn_in;
      fc.jobs = jobs_;
      const auto report = fit_all(blocks, fc);
      write_file(fit_path(), fit_report_json(report, fc));
      std::vector<fs::path> outputs{fit_path()};
      for (const auto& d : report.diagnostics) log_ << "fit: " << d << '\n';
      for (const auto& m : report.models) {
        if (!m.posterior) {
          log_ << "fit[" << m.name << "]: failed: " << m.failure << '\n';
          continue;
        }
        log_ << "fit[" << m.name << "]: DIC " << csv::format_double(m.posterior->dic.dic) << ", max R-hat "
             << csv::format_double(m.posterior->max_rhat) << (m.posterior->converged ? ", converged" : ", not converged")
             << '\n';
        if (cfg_.write_traces) {
          for (std::size_t c = 0; c < m.posterior->chains.size(); ++c) {
            const auto path = out_dir_ / "traces" / (m.name + "_chain" + std::to_string(c + 1) + ".csv");
            write_file(path, render([&](std::ostream& o) { write_trace_csv(o, m.posterior->chains[c]); }));
            outputs.push_back(path);
          }
        }
      }
      log_ << "fit: selected " << report.selected.value_or("none") << '\n';
      return outputs;
    });
  }

  void risk(bool resume) {
    require_sites();
    if (!fs::exists(fit_path())) throw DataError("fit report '" + fit_path().string() + "' not found; run fit first");
    std::vector<fs::path> inputs{blocks_path(), fit_path()};
    stage("risk", inputs, resume, [&] {
      std::istringstream in(read_file(blocks_path()));
      const auto blocks = read_blocks_csv(in);
      const auto fit = parse_fit_report(read_file(fit_path()));
      if (fit.models.empty()) throw DataError("fit report holds no fitted model");
      RiskOptions opts;
      opts.z_cr = cfg_.z_cr;
      opts.baseline_eps = cfg_.baseline_eps;
      opts.total_hours = cfg_.total_hours;
      opts.observed_hours = cfg_.observed_hours;
      std::vector<RiskReport> reports;
      std::vector<fs::path> outputs;
      for (const auto& m : fit.models) {
        const GevModel model = to_gev_model(m.spec, m.posterior_mean);
        auto report = compute_risk(m.spec.name, model, fit.scaling, blocks, cfg_.sites, opts);
        const auto csv_path = out_dir_ / "risk" / (m.spec.name + ".csv");
        const auto density_path = out_dir_ / "risk" / (m.spec.name + "_density.csv");
        write_file(csv_path, render([&](std::ostream& o) { write_risk_csv(o, report); }));
        write_file(density_path, render([&](std::ostream& o) { write_density_curves_csv(o, report); }));
        outputs.push_back(csv_path);
        outputs.push_back(density_path);
        log_ << "risk[" << m.spec.name << "]: N = " << csv::format_double(report.n_expected) << " (raw RC "
             << csv::format_double(report.n_expected_raw) << ")\n";
        reports.push_back(std::move(report));
      }
      write_file(risk_summary_path(), risk_summary_json(reports, fit.selected, cfg_.observed_crashes));
      outputs.push_back(risk_summary_path());
      return outputs;
    });
  }

  void simulate() {
    if (!cfg_.simulate) throw ConfigError("config has no 'simulate' section");
    const auto& sim = *cfg_.simulate;
    switch (sim.kind) {
      case SimulateKind::Blocks: {
        const auto blocks = synth::generate_blocks(make_scenario(sim));
        const auto path = out_dir_ / "blocks.csv";
        write_file(path, render([&](std::ostream& o) { write_blocks_csv(o, blocks); }));
        log_ << "simulate: " << blocks.size() << " blocks -> " << path.string() << '\n';
        break;
      }
      case SimulateKind::Crossing: {
        auto opts = sim.crossing;
        opts.seed = sim.seed;
        const auto scen = synth::generate_crossing_scenario(opts);
        write_scenario(scen.tracks, scen.expected);
        break;
      }
      case SimulateKind::Cycles: {
        auto opts = sim.cycles;
        opts.seed = sim.seed;
        const auto scen = synth::generate_cycle_scenario(opts);
        write_scenario(scen.tracks, scen.expected);
        Json site;
        site["site_id"] = scen.site.site_id;
        site["cycle_length"] = scen.site.cycle_length;
        site["observation_start"] = scen.site.observation_start;
        site["observation_duration"] = scen.site.observation_duration;
        write_file(out_dir_ / "site.json", site.dump(2) + "\n");
        break;
      }
    }
  }

  void describe(std::ostream& o) const {
    o << "config ok\n";
    o << "output directory: " << out_dir_.string() << '\n';
    for (const auto& s : cfg_.sites) {
      o << "site " << s.site_id << ": " << s.n_cycles() << " full cycles of " << csv::format_double(s.cycle_length)
        << " s\n";
      o << "  trajectories: " << trajectories_for(s.site_id).string() << '\n';
      o << "  conflicts: " << conflicts_for(s.site_id).string() << '\n';
    }
    o << "blocks: " << blocks_path().string() << '\n';
    o << "fit report: " << fit_path().string() << '\n';
    o << "models:";
    for (const auto& m : cfg_.models) o << ' ' << m;
    o << "\nchains: " << cfg_.chains << " x " << cfg_.iterations << " iterations (" << cfg_.burn_in << " burn-in)\n";
  }

 private:
  fs::path resolve(const std::string& p) const {
    const fs::path path(p);
    return path.is_absolute() ? path : config_dir_ / path;
  }

  std::vector<Track> load_tracks(const std::string& site) const {
    const auto text = read_file(trajectories_for(site));
    if (csv::trim(text).empty()) return {};
    std::istringstream in(text);
    auto tracks = read_tracks_csv(in);
    if (cfg_.perspective) {
      for (auto& t : tracks) t = rectify_track(t, *cfg_.perspective);
    }
    return tracks;
  }

  std::vector<Covariate> fit_covariates() const {
    if (cfg_.covariates) return *cfg_.covariates;
    std::vector<Covariate> out(kAllCovariates.begin(), kAllCovariates.end());
    if (!fs::exists(blocks_report_path())) return out;
    Json report;
    try {
      report = Json::parse(read_file(blocks_report_path()));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("malformed blocks report: ") + e.what());
    }
    if (!report.contains("correlation") || report["correlation"].is_null()) return out;
    const auto retained = report["correlation"]["retained"].get<std::vector<std::string>>();
    std::erase_if(out, [&](Covariate c) {
      return std::find(retained.begin(), retained.end(), covariate_name(c)) == retained.end();
    });
    return out;
  }

  void write_scenario(const std::vector<Track>& tracks, const std::vector<ConflictEvent>& expected) {
    write_file(out_dir_ / "trajectories.csv", render([&](std::ostream& o) { write_tracks_csv(o, tracks); }));
    write_file(out_dir_ / "expected_conflicts.csv", render([&](std::ostream& o) { write_conflicts_csv(o, expected); }));
    log_ << "simulate: " << tracks.size() << " tracks, " << expected.size() << " expected conflicts -> "
         << out_dir_.string() << '\n';
  }

  void stage(const std::string& name, const std::vector<fs::path>& inputs, bool resume,
             const std::function<std::vector<fs::path>()>& body) {
    std::string material = name + '\n' + stage_settings(name);
    for (const auto& p : inputs) {
      material += hex(fnv1a(read_file(p))) + '\n';
    }
    const std::string key = hex(fnv1a(material));
    Manifest manifest(out_dir_ / "manifest.json");
    if (resume && manifest.up_to_date(name, key, out_dir_)) {
      log_ << name << ": up to date\n";
      return;
    }
    const auto outputs = body();
    manifest.record(name, key, outputs, out_dir_);
  }

  // Only the settings a stage reads enter its key; upstream data enters via
  // the input hashes.
  [[nodiscard]] std::string stage_settings(const std::string& name) const {
    static const std::map<std::string, std::vector<std::string>> keys{
        {"conflicts", {"perspective", "sites", "pet_threshold"}},
        {"blocks", {"sites", "pcu_factors", "correlation_threshold"}},
        {"fit", {"sites", "models", "covariates", "chains", "iterations", "burn_in", "seed", "write_traces"}},
        {"risk", {"sites", "models", "z_cr", "baseline_eps", "total_hours", "observed_hours", "observed_crashes"}},
    };
    const auto full = nlohmann::ordered_json::parse(config_text_);
    const auto it = keys.find(name);
    if (it == keys.end()) return config_text_;
    nlohmann::ordered_json subset = nlohmann::ordered_json::object();
    for (const auto& k : it->second) subset[k] = full.at(k);
    return subset.dump();
  }

  RunConfig cfg_;
  fs::path config_dir_;
  fs::path out_dir_;
  unsigned jobs_;
  std::ostream& log_;
  std::string config_text_;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  for (const auto part : csv::split(s, ',')) {
    const auto t = csv::trim(part);
    if (!t.empty()) out.emplace_back(t);
  }
  return out;
}

int execute(const std::string& command, const Options& o, std::ostream& out) {
  const fs::path config_path(o.config);
  RunConfig cfg = parse_run_config(read_config(config_path));
  if (o.seed) {
    cfg.seed = *o.seed;
    if (cfg.simulate) cfg.simulate->seed = *o.seed;
  }
  if (!o.models.empty()) cfg.models = split_list(o.models);
  if (o.years) cfg.total_hours = *o.years * kHoursPerYear;
  cfg.validate();

  const fs::path config_dir = config_path.has_parent_path() ? config_path.parent_path() : fs::path(".");
  const fs::path out_dir = o.out.empty() ? (fs::path(cfg.output_dir).is_absolute() ? fs::path(cfg.output_dir)
                                                                                    : config_dir / cfg.output_dir)
                                         : fs::path(o.out);
  Runner runner(std::move(cfg), config_dir, out_dir, o.jobs, out);
  if (o.dry_run) {
    runner.describe(out);
    return kOk;
  }
  if (command == "conflicts") {
    runner.conflicts(false);
  } else if (command == "blocks") {
    runner.blocks(false);
  } else if (command == "fit") {
    runner.fit(false);
  } else if (command == "risk") {
    runner.risk(false);
  } else if (command == "simulate") {
    runner.simulate();
  } else {
    runner.conflicts(true);
    runner.blocks(true);
    runner.fit(true);
    runner.risk(true);
  }
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Pedestrian crash risk from road-user trajectories", args.empty() ? "pedrisk" : args[0]};
  app.require_subcommand(1);
  Options o;
  const std::vector<std::pair<const char*, const char*>> commands{
      {"conflicts", "Extract pedestrian-vehicle conflicts from trajectories"},
      {"blocks", "Build per-cycle block extremes and covariates"},
      {"fit", "Fit the GEV model variants by MCMC"},
      {"risk", "Per-cycle crash risk and expected crash counts"},
      {"simulate", "Generate synthetic blocks or trajectories"},
      {"pipeline", "Run conflicts, blocks, fit and risk, resuming finished stages"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", o.config, "JSON run configuration")->required();
    sub->add_option("--jobs", o.jobs, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--seed", o.seed, "Base seed for chains and simulation");
    sub->add_option("--models", o.models, "Comma-separated model list, e.g. M1,M3a");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_flag("--dry-run", o.dry_run, "Validate the configuration and print the plan");
    sub->add_option("--years", o.years, "Horizon T in years of 8766 h")->check(CLI::PositiveNumber);
  }

  std::vector<std::string> storage = args.empty() ? std::vector<std::string>{"pedrisk"} : args;
  std::vector<char*> argv;
  for (auto& s : storage) argv.push_back(s.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsageError;
  }

  std::string command;
  for (const auto& [name, help] : commands) {
    if (app.got_subcommand(name)) command = name;
  }
  try {
    return execute(command, o, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kUsageError;
  } catch (const Error& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kInternalError;
  }
}

}  // namespace pedrisk::cli
