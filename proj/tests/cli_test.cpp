#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include <json.hpp>

#include "pedrisk/cli.hpp"
#include "pedrisk/risk.hpp"

namespace fs = std::filesystem;
using pedrisk::cli::run;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("pedrisk_cli_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

struct Result {
  int code;
  std::string out, err;
};

Result cli(std::vector<std::string> args) {
  args.insert(args.begin(), "pedrisk");
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

const char* kCyclesConfig = R"({
  "sites": [{"site_id": "S1", "cycle_length": 100, "observation_duration": 15000}],
  "iterations": 4000, "burn_in": 1000,
  "output_dir": "out",
  "simulate": {"kind": "cycles", "cycles": {"site_id": "S1", "cycle_length": 100, "n_cycles": 150}}
})";

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).generic_string()] = slurp(e.path());
  }
  return files;
}

}  // namespace

TEST_CASE("conflicts on empty input writes a header-only table") {
  TempDir d("empty");
  write(d.path / "tracks.csv", "");
  write(d.path / "cfg.json", R"({"trajectories": "tracks.csv",
    "sites": [{"site_id": "S1", "cycle_length": 100, "observation_duration": 1000}]})");
  const auto r = cli({"conflicts", "--config", (d.path / "cfg.json").string()});
  INFO(r.err);
  CHECK(r.code == 0);
  const auto out = d.path / "out" / "S1";
  REQUIRE(fs::exists(out / "conflicts.csv"));
  CHECK(slurp(out / "conflicts.csv").find('\n') == slurp(out / "conflicts.csv").size() - 1);
}

TEST_CASE("malformed trajectories are data errors") {
  TempDir d("bad");
  write(d.path / "cfg.json", R"({"trajectories": "tracks.csv",
    "sites": [{"site_id": "S1", "cycle_length": 100, "observation_duration": 1000}]})");
  write(d.path / "tracks.csv",
        "track_id,class,t,x,y\nP1,PED,0,0,0\nP1,PED,1,1,0\nV1,MV,0,0,1\nV1,MV,1,1,1\nP1,PED,2,2,0\n");
  auto r = cli({"conflicts", "--config", (d.path / "cfg.json").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("duplicate track id") != std::string::npos);
  CHECK(r.err.find("line 6") != std::string::npos);

  write(d.path / "tracks.csv", "track_id,class,t,x,y\nP1,PED,0,0,0\nP1,PED,zero,1,0\n");
  r = cli({"conflicts", "--config", (d.path / "cfg.json").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("line 3") != std::string::npos);
}

TEST_CASE("exit codes") {
  TempDir d("codes");
  CHECK(cli({}).code == 1);
  CHECK(cli({"frobnicate"}).code == 1);
  CHECK(cli({"fit"}).code == 1);
  CHECK(cli({"fit", "--config", (d.path / "missing.json").string()}).code == 1);
  write(d.path / "cfg.json", R"({"iterations": 10})");
  CHECK(cli({"fit", "--config", (d.path / "cfg.json").string()}).code == 1);
  write(d.path / "cfg.json", R"({"sites": [{"site_id": "S1", "cycle_length": 100, "observation_duration": 1000}]})");
  CHECK(cli({"fit", "--config", (d.path / "cfg.json").string(), "--models", "M1,M9"}).code == 1);
  const auto missing_fit = cli({"risk", "--config", (d.path / "cfg.json").string()});
  CHECK(missing_fit.code == 2);
  CHECK(cli({"--help"}).code == 0);
}

TEST_CASE("dry run validates without writing") {
  TempDir d("dry");
  write(d.path / "cfg.json", kCyclesConfig);
  const auto r = cli({"pipeline", "--config", (d.path / "cfg.json").string(), "--dry-run"});
  CHECK(r.code == 0);
  CHECK_FALSE(fs::exists(d.path / "out"));
  write(d.path / "bad.json", R"({"chains": 1})");
  CHECK(cli({"pipeline", "--config", (d.path / "bad.json").string(), "--dry-run"}).code == 1);
}

TEST_CASE("pipeline on a simulated scenario") {
  TempDir d("pipeline");
  write(d.path / "cfg.json", kCyclesConfig);
  const auto cfg = (d.path / "cfg.json").string();
  REQUIRE(cli({"simulate", "--config", cfg}).code == 0);
  const auto r = cli({"pipeline", "--config", cfg, "--models", "M1", "--jobs", "2"});
  INFO(r.err);
  REQUIRE(r.code == 0);
  const auto out = d.path / "out";

  const auto fit = nlohmann::json::parse(slurp(out / "fit_report.json"));
  REQUIRE(fit["models"].size() == 1);
  CHECK(fit["models"][0]["name"] == "M1");
  CHECK(fit["selected"] == "M1");

  const auto risk = nlohmann::json::parse(slurp(out / "risk_summary.json"));
  CHECK(risk["models"][0]["n_expected"].get<double>() == 0.0);
  CHECK(slurp(out / "S1" / "conflicts.csv") == slurp(out / "S1" / "conflicts.csv"));

  const auto before = tree(out);
  const auto again = cli({"pipeline", "--config", cfg, "--models", "M1"});
  CHECK(again.code == 0);
  CHECK(again.out.find("fit: up to date") != std::string::npos);
  CHECK(tree(out) == before);

  // a fresh directory reproduces every byte
  TempDir e("pipeline_copy");
  write(e.path / "cfg.json", kCyclesConfig);
  const auto cfg2 = (e.path / "cfg.json").string();
  REQUIRE(cli({"simulate", "--config", cfg2}).code == 0);
  REQUIRE(cli({"pipeline", "--config", cfg2, "--models", "M1", "--jobs", "1"}).code == 0);
  CHECK(tree(e.path / "out") == before);

  // changing the seed invalidates the fit stage only
  const auto reseeded = cli({"pipeline", "--config", cfg, "--models", "M1", "--seed", "7"});
  CHECK(reseeded.code == 0);
  CHECK(reseeded.out.find("conflicts: up to date") != std::string::npos);
  CHECK(reseeded.out.find("fit: up to date") == std::string::npos);
}

TEST_CASE("risk with z_cr = 0 subtracts the mean only") {
  TempDir d("zcr");
  write(d.path / "cfg.json", R"({
    "sites": [{"site_id": "S1", "cycle_length": 100, "observation_duration": 30000}],
    "models": ["M2a"], "covariates": ["f_mv"],
    "iterations": 4000, "burn_in": 1000,
    "z_cr": 0, "baseline_eps": 0,
    "simulate": {"kind": "blocks", "model": "M2a", "covariates": ["f_mv"], "n_cycles": 300,
                 "theta": {"mu_0": -1.5, "mu_f_mv": -0.002, "phi_0": -0.5, "xi_0": -0.3}}
  })");
  const auto cfg = (d.path / "cfg.json").string();
  REQUIRE(cli({"simulate", "--config", cfg}).code == 0);
  auto r = cli({"fit", "--config", cfg});
  INFO(r.err);
  REQUIRE(r.code == 0);
  r = cli({"risk", "--config", cfg, "--years", "2"});
  REQUIRE(r.code == 0);

  std::istringstream csv(slurp(d.path / "out" / "risk" / "M2a.csv"));
  std::string line;
  std::getline(csv, line);
  CHECK(line == pedrisk::kRiskCsvHeader);
  std::vector<double> rc, mrc;
  while (std::getline(csv, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    REQUIRE(f.size() == 7);
    rc.push_back(std::stod(f[5]));
    mrc.push_back(std::stod(f[6]));
  }
  REQUIRE(rc.size() == 300);
  double mean = 0.0;
  for (double v : rc) mean += v;
  mean /= rc.size();
  double sum = 0.0;
  for (std::size_t i = 0; i < rc.size(); ++i) {
    CHECK(mrc[i] == doctest::Approx(std::max(0.0, rc[i] - mean)).epsilon(1e-12).scale(1e-12));
    sum += mrc[i];
  }
  const auto summary = nlohmann::json::parse(slurp(d.path / "out" / "risk_summary.json"));
  CHECK(summary["total_hours"].get<double>() == 2 * 8766.0);
  const double t = 300 * 100 / 3600.0;
  CHECK(summary["models"][0]["n_expected"].get<double>() == doctest::Approx(2 * 8766.0 / t * sum).epsilon(1e-9));
}

TEST_CASE("stationary data selects M1 in most replications") {
  TempDir d("select");
  write(d.path / "cfg.json", R"({
    "sites": [{"site_id": "S1", "cycle_length": 100, "observation_duration": 50000}],
    "covariates": ["f_mv", "s_p"], "iterations": 5000, "burn_in": 1500,
    "simulate": {"kind": "blocks", "model": "M1", "n_cycles": 500,
                 "theta": {"mu_0": -2.3, "phi_0": 0.3075, "xi_0": -0.41}}
  })");
  const auto cfg = (d.path / "cfg.json").string();
  int m1 = 0;
  for (const std::string seed : {"1", "2", "3"}) {
    REQUIRE(cli({"simulate", "--config", cfg, "--seed", seed}).code == 0);
    REQUIRE(cli({"fit", "--config", cfg, "--seed", seed}).code == 0);
    const auto fit = nlohmann::json::parse(slurp(d.path / "out" / "fit_report.json"));
    CHECK(fit["models"].size() == 7);
    MESSAGE("seed " << seed << " selected " << fit["selected"]);
    m1 += fit["selected"] == "M1";
  }
  CHECK(m1 >= 2);
}
