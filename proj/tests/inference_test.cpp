#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "oracles.hpp"
#include "pedrisk/errors.hpp"
#include "pedrisk/inference.hpp"
#include "pedrisk/synth.hpp"

using namespace pedrisk;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

CycleBlock block(double z, CovariateVector x = {1, 1, 1, 1, 1, 1, 1}) {
  CycleBlock b;
  b.site_id = "S1";
  b.z = z;
  b.n_conflicts = 1;
  b.covariates = x;
  return b;
}

std::vector<CycleBlock> stationary_blocks(std::size_t n, std::uint64_t seed) {
  synth::Scenario sc;
  sc.truth = make_model_spec("M1", {});
  sc.theta = {-2.3, std::log(1.36), -0.41};
  sc.n_cycles = n;
  sc.seed = seed;
  return synth::generate_blocks(sc);
}

}  // namespace

TEST_CASE("model specs and layout") {
  CHECK(model_names().size() == 7);
  const auto m3a = make_model_spec("M3a", {Covariate::FMv, Covariate::SP});
  const ParameterLayout layout(m3a);
  CHECK(layout.names() ==
        std::vector<std::string>{"mu_0", "mu_f_mv", "mu_s_p", "theta_mu_f_mv", "theta_mu_s_p", "phi_0", "xi_0"});
  CHECK(layout.index_of("theta_mu_s_p") == 4u);
  CHECK_FALSE(layout.index_of("nope").has_value());
  CHECK_THROWS_AS((void)make_model_spec("M9", {}), ConfigError);
  const auto re = make_model_spec("M1", {}, {"A", "B"});
  CHECK(re.random_effects());
  CHECK(ParameterLayout(re).size() == 3 + 6 + 3);
}

TEST_CASE("log-posterior of a single Gumbel block by hand") {
  const auto spec = make_model_spec("M1", {});
  const std::vector<double> theta{-2.0, 0.3, 0.0};
  const std::vector<CycleBlock> blocks{block(-1.5)};
  const double sigma = std::exp(0.3);
  const double u = (-1.5 + 2.0) / sigma;
  const double loglik = -0.3 - u - std::exp(-u);
  const double normal = [](double v) { return -0.5 * std::log(2 * std::numbers::pi * 1e6) - v * v / 2e6; }(0);
  const double prior = normal - 4.0 / 2e6 + normal - 0.09 / 2e6 - std::log(10.0);
  CHECK(std::abs(log_likelihood(spec, theta, blocks) - loglik) < 1e-10);
  CHECK(std::abs(log_posterior(theta, spec, blocks) - (loglik + prior)) < 1e-10);
  CHECK(std::abs(log_posterior(theta, spec, {}) - prior) < 1e-10);
}

TEST_CASE("prior supports") {
  const auto spec = make_model_spec("M3a", {Covariate::SP});
  std::vector<double> theta{-2.0, -0.1, 1.0, 0.3, -0.4};
  const std::vector<CycleBlock> blocks{block(-1.5)};
  CHECK(std::isfinite(log_posterior(theta, spec, blocks)));
  theta[2] = 2.5;
  CHECK(log_prior(spec, theta) == kNegInf);
  CHECK(log_posterior(theta, spec, blocks) == kNegInf);
  theta[2] = 1.0;
  theta[4] = -5.5;
  CHECK(log_posterior(theta, spec, blocks) == kNegInf);
  theta[4] = -0.4;
  auto bad = blocks;
  bad[0].covariates.s_p = 0.0;
  CHECK(log_likelihood(spec, theta, bad) == kNegInf);
  CHECK_THROWS_AS(check_covariates(spec, bad), EvaluationError);
  // GEV support: z above the upper endpoint of a negative-shape fit
  const std::vector<CycleBlock> far{block(10.0)};
  CHECK(log_likelihood(make_model_spec("M1", {}), std::vector<double>{-2.0, 0.0, -0.5}, far) == kNegInf);
  const auto re = make_model_spec("M1", {}, {"A", "B"});
  std::vector<double> t(ParameterLayout(re).size(), 0.1);
  t[ParameterLayout(re).site_sd(0)] = -1;
  CHECK(log_prior(re, t) == kNegInf);
}

TEST_CASE("log-posterior is invariant under block order") {
  auto blocks = stationary_blocks(300, 3);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.5, 2.0);
  for (auto& b : blocks) {
    for (const auto c : kAllCovariates) b.covariates.set(c, u(rng));
  }
  const auto spec = make_model_spec("M3b", {Covariate::FMv, Covariate::CSNmv});
  const ParameterLayout layout(spec);
  std::vector<double> theta(layout.size(), 0.0);
  theta[layout.mu0()] = -2.3;
  theta[layout.mu_coeff(0)] = 0.05;
  theta[layout.mu_exponent(0)] = 0.7;
  theta[layout.mu_exponent(1)] = -0.3;
  theta[layout.phi0()] = 0.3;
  theta[layout.xi0()] = -0.3;
  const double a = log_posterior(theta, spec, blocks);
  REQUIRE(std::isfinite(a));
  for (int k = 0; k < 5; ++k) {
    std::shuffle(blocks.begin(), blocks.end(), rng);
    CHECK(log_posterior(theta, spec, blocks) == doctest::Approx(a).epsilon(1e-12));
  }
}

TEST_CASE("chains are deterministic per seed and freeze adaptation") {
  const auto blocks = stationary_blocks(200, 4);
  const auto spec = make_model_spec("M1", {});
  ChainOptions opt;
  opt.n_iter = 3000;
  opt.burn_in = 1000;
  opt.seed = 17;
  const auto a = run_chain(spec, blocks, opt);
  const auto b = run_chain(spec, blocks, opt);
  CHECK(a.draws == b.draws);
  CHECK(a.log_posterior == b.log_posterior);
  CHECK(a.n_draws() == 2000);
  CHECK(a.scales_at_burn_in == a.final_scales);
  for (const double lp : a.log_posterior) CHECK(std::isfinite(lp));
  opt.seed = 18;
  CHECK(run_chain(spec, blocks, opt).draws != a.draws);

  opt.n_iter = 1000;
  CHECK_THROWS_AS((void)run_chain(spec, blocks, opt), DomainError);
  opt.n_iter = 3000;
  opt.init = {-2.0, 0.0, 7.0};
  CHECK_THROWS_AS((void)run_chain(spec, blocks, opt), InitializationError);
}

TEST_CASE("stationary recovery and acceptance rates") {
  const auto blocks = stationary_blocks(2000, 11);
  const auto spec = make_model_spec("M1", {});
  std::vector<Chain> chains;
  for (std::uint64_t seed : {1u, 2u}) {
    ChainOptions opt;
    opt.n_iter = 20000;
    opt.burn_in = 5000;
    opt.seed = seed;
    opt.init = default_init(spec, blocks, seed - 1, 2);
    chains.push_back(run_chain(spec, blocks, opt));
    for (const double a : chains.back().acceptance) {
      CHECK(a >= 0.2);
      CHECK(a <= 0.6);
    }
  }
  const std::vector<double> truth{-2.3, std::log(1.36), -0.41};
  const auto post = make_posterior(spec, chains, blocks, CovariateScaling{});
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(std::abs(post.params[i].mean - truth[i]) < 3 * post.params[i].sd);
    CHECK(post.params[i].rhat < 1.1);
  }
  CHECK(post.converged);
}

TEST_CASE("sampler reproduces a one-parameter posterior") {
  // mu alone, with a single observation; phi and xi held fixed
  const auto spec = make_model_spec("M1", {});
  const std::vector<CycleBlock> blocks{block(-1.0)};
  ChainOptions opt;
  opt.n_iter = 110000;
  opt.burn_in = 10000;
  opt.seed = 5;
  opt.init = {-1.5, 0.0, -0.2};
  opt.update = {true, false, false};
  const auto chain = run_chain(spec, blocks, opt);
  for (std::size_t d = 0; d < chain.n_draws(); d += 997) {
    CHECK(chain.at(d, 1) == 0.0);
    CHECK(chain.at(d, 2) == -0.2);
  }

  auto density = [](double mu) { return oracle::gev_pdf(-1.0, mu, 1.0, -0.2); };
  const double lo = -8.0, hi = 8.0;
  const int bins = 40, sub = 200;
  std::vector<double> target(bins, 0.0);
  const double w = (hi - lo) / bins;
  double total = 0.0;
  for (int b = 0; b < bins; ++b) {
    for (int s = 0; s < sub; ++s) target[b] += density(lo + w * (b + (s + 0.5) / sub));
    total += target[b];
  }
  std::vector<double> hist(bins, 0.0);
  const auto mu = chain.column(0);
  for (const double m : mu) {
    REQUIRE(m > lo);
    REQUIRE(m < hi);
    hist[static_cast<std::size_t>((m - lo) / w)] += 1.0;
  }
  double tv = 0.0;
  for (int b = 0; b < bins; ++b) tv += std::abs(hist[b] / mu.size() - target[b] / total);
  tv *= 0.5;
  MESSAGE("total variation " << tv);
  CHECK(tv <= 0.05);
}

TEST_CASE("Gelman-Rubin") {
  const std::vector<std::vector<double>> same{{1, 2, 3}, {1, 2, 3}};
  CHECK(gelman_rubin(same) == doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-15));

  std::mt19937_64 rng(3);
  std::normal_distribution<double> n01;
  std::vector<double> c(400);
  for (auto& x : c) x = n01(rng);
  const std::vector<std::vector<double>> twins{c, c};
  CHECK(gelman_rubin(twins) == doctest::Approx(std::sqrt(399.0 / 400.0)).epsilon(1e-14));

  std::vector<std::vector<double>> iid(2, std::vector<double>(5000));
  for (auto& ch : iid) {
    for (auto& x : ch) x = n01(rng);
  }
  const double r = gelman_rubin(iid);
  CHECK(r < 1.1);
  auto affine = iid;
  for (auto& ch : affine) {
    for (auto& x : ch) x = 3.0 * x - 7.0;
  }
  CHECK(gelman_rubin(affine) == doctest::Approx(r).epsilon(1e-10));

  auto shifted = iid;
  for (auto& x : shifted[1]) x += 5.0;
  CHECK(gelman_rubin(shifted) > 1.1);

  const std::vector<std::vector<double>> flat{std::vector<double>(20, 1.0), std::vector<double>(20, 1.0)};
  CHECK_THROWS_AS((void)gelman_rubin(flat), DegenerateChainError);
  const std::vector<std::vector<double>> one{c};
  CHECK_THROWS_AS((void)gelman_rubin(one), DomainError);
  const std::vector<std::vector<double>> uneven{c, std::vector<double>(c.begin(), c.end() - 1)};
  CHECK_THROWS_AS((void)gelman_rubin(uneven), DomainError);
}

TEST_CASE("DIC of a degenerate chain") {
  const auto blocks = stationary_blocks(100, 8);
  const auto spec = make_model_spec("M1", {});
  const std::vector<double> theta{-2.2, 0.31, -0.37};
  const double ll = log_likelihood(spec, theta, blocks);
  Chain c;
  c.names = ParameterLayout(spec).names();
  for (int i = 0; i < 50; ++i) {
    c.draws.insert(c.draws.end(), theta.begin(), theta.end());
    c.log_likelihood.push_back(ll);
    c.log_posterior.push_back(log_posterior(theta, spec, blocks));
  }
  const std::vector<Chain> chains{c, c};
  const auto d = dic(chains, spec, blocks);
  CHECK(d.p_d == 0.0);
  CHECK(d.dic == -2.0 * ll);
  CHECK(d.d_bar == -2.0 * ll);
  CHECK(d.diagnostic.empty());
}

TEST_CASE("DIC reports an undefined p_d outside the support") {
  const auto spec = make_model_spec("M1", {});
  const std::vector<CycleBlock> blocks{block(-1.0), block(-3.0)};
  // each draw covers the data, their mean does not
  const std::vector<double> t1{0.0, 0.0, -4.0}, t2{-10.0, 0.0, 2.0};
  Chain c;
  c.names = ParameterLayout(spec).names();
  for (const auto* t : {&t1, &t2}) {
    c.draws.insert(c.draws.end(), t->begin(), t->end());
    c.log_likelihood.push_back(log_likelihood(spec, *t, blocks));
  }
  REQUIRE(std::isfinite(c.log_likelihood[0]));
  REQUIRE(std::isfinite(c.log_likelihood[1]));
  REQUIRE(log_likelihood(spec, std::vector<double>{-5.0, 0.0, -1.0}, blocks) == kNegInf);
  const std::vector<Chain> chains{c};
  const auto d = dic(chains, spec, blocks);
  CHECK(std::isnan(d.p_d));
  CHECK_FALSE(d.diagnostic.empty());
}

TEST_CASE("chain seeds") {
  CHECK(chain_seed(1, "M1") == chain_seed(1, "M1"));
  CHECK(chain_seed(1, "M1") != chain_seed(1, "M2a"));
  CHECK(chain_seed(1, "M1") != chain_seed(2, "M1"));
}

TEST_CASE("fit_all on a 200-block fixture") {
  synth::Scenario sc;
  sc.truth = make_model_spec("M1", {});
  sc.theta = {-2.3, std::log(1.36), -0.41};
  sc.n_cycles = 200;
  sc.seed = 21;
  const auto blocks = synth::generate_blocks(sc);
  FitConfig cfg;
  cfg.n_iter = 6000;
  cfg.burn_in = 2000;
  cfg.jobs = 2;
  cfg.covariates = {Covariate::FMv, Covariate::SP};
  const auto report = fit_all(blocks, cfg);
  REQUIRE(report.models.size() == 7);
  std::optional<std::string> best;
  double best_dic = std::numeric_limits<double>::infinity();
  for (const auto& m : report.models) {
    INFO(m.name << " " << m.failure);
    REQUIRE(m.posterior.has_value());
    const auto& p = *m.posterior;
    CHECK(p.chains.size() == 2);
    if (p.converged && std::isfinite(p.dic.dic) && p.dic.dic < best_dic) {
      best_dic = p.dic.dic;
      best = m.name;
    }
  }
  CHECK(report.selected == best);
  const auto& m1 = *report.models[0].posterior;
  CHECK(report.models[0].name == "M1");
  CHECK(m1.converged);
  CHECK(m1.max_rhat < 1.1);

  cfg.jobs = 1;
  cfg.models = {"M1", "M3a"};
  const auto again = fit_all(blocks, cfg);
  CHECK(again.models[0].posterior->chains[0].draws == m1.chains[0].draws);
  CHECK(again.models[1].posterior->chains[1].draws == report.models[4].posterior->chains[1].draws);
}
