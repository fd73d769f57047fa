#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pedrisk/blocks.hpp"
#include "pedrisk/gev.hpp"

namespace pedrisk {

// Variance of the Normal(0, .) prior on regression intercepts and coefficients.
inline constexpr double kRegressionPriorVariance = 1e6;
inline constexpr double kExponentBound = 2.0;  // Uniform(-2, 2)
inline constexpr double kShapeBound = 5.0;     // Uniform(-5, 5)
inline constexpr double kRhatThreshold = 1.1;
inline constexpr double kMinAcceptance = 0.05;
inline constexpr double kTargetAcceptance = 0.44;

// The seven model variants: M1, M2a, M2b, M2c, M3a, M3b, M4.
[[nodiscard]] const std::array<std::string_view, 7>& model_names();

struct ModelSpec {
  std::string name;
  LinkKind mu_link = LinkKind::Stationary;
  LinkKind phi_link = LinkKind::Stationary;
  std::vector<Covariate> covariates;  // shared by every non-stationary link
  std::vector<std::string> sites;     // more than one site adds random effects

  [[nodiscard]] bool random_effects() const { return sites.size() > 1; }
};

// Throws ConfigError for an unknown name.
[[nodiscard]] ModelSpec make_model_spec(std::string_view name, std::vector<Covariate> covariates,
                                        std::vector<std::string> sites = {});

enum class PriorKind { Normal, Exponent, Shape, SiteEffect, SiteSd };

struct ParameterInfo {
  std::string name;
  PriorKind prior = PriorKind::Normal;
  std::size_t group = 0;  // for SiteEffect: index of the SiteSd parameter
};

// Parameter vector layout:
//   mu_0, mu_<cov>..., theta_mu_<cov>..., phi_0, phi_<cov>..., theta_phi_<cov>...,
//   xi_0, then with random effects eps_mu[site]..., eps_phi[site]...,
//   eps_xi[site]..., tau_mu, tau_phi, tau_xi.
class ParameterLayout {
 public:
  explicit ParameterLayout(const ModelSpec& spec);

  [[nodiscard]] std::size_t size() const { return params_.size(); }
  [[nodiscard]] const std::vector<ParameterInfo>& params() const { return params_; }
  [[nodiscard]] std::vector<std::string> names() const;
  [[nodiscard]] std::optional<std::size_t> index_of(std::string_view name) const;

  [[nodiscard]] std::size_t mu0() const { return mu0_; }
  [[nodiscard]] std::size_t mu_coeff(std::size_t k) const { return mu_coeff_ + k; }
  [[nodiscard]] std::size_t mu_exponent(std::size_t k) const { return mu_exp_ + k; }
  [[nodiscard]] std::size_t phi0() const { return phi0_; }
  [[nodiscard]] std::size_t phi_coeff(std::size_t k) const { return phi_coeff_ + k; }
  [[nodiscard]] std::size_t phi_exponent(std::size_t k) const { return phi_exp_ + k; }
  [[nodiscard]] std::size_t xi0() const { return xi0_; }
  // Component 0 = mu, 1 = phi, 2 = xi.
  [[nodiscard]] std::size_t site_effect(std::size_t component, std::size_t site) const {
    return eps_ + component * n_sites_ + site;
  }
  [[nodiscard]] std::size_t site_sd(std::size_t component) const { return tau_ + component; }

 private:
  std::vector<ParameterInfo> params_;
  std::size_t mu0_ = 0, mu_coeff_ = 0, mu_exp_ = 0, phi0_ = 0, phi_coeff_ = 0, phi_exp_ = 0, xi0_ = 0;
  std::size_t eps_ = 0, tau_ = 0, n_sites_ = 0;
};

// Assembles the link specs the parameter vector describes.
[[nodiscard]] GevModel to_gev_model(const ModelSpec& spec, std::span<const double> theta);

[[nodiscard]] double log_prior(const ModelSpec& spec, std::span<const double> theta);
// Sum of GEV log-densities; -inf on any support violation or a non-positive
// base under a non-linear link.
[[nodiscard]] double log_likelihood(const ModelSpec& spec, std::span<const double> theta,
                                    std::span<const CycleBlock> blocks);
[[nodiscard]] double log_posterior(std::span<const double> theta, const ModelSpec& spec,
                                   std::span<const CycleBlock> blocks);

// Throws EvaluationError naming the first covariate that a non-linear link
// cannot raise to a power (non-positive value in some block).
void check_covariates(const ModelSpec& spec, std::span<const CycleBlock> blocks);

struct Chain {
  std::vector<std::string> names;
  std::size_t n_iter = 0;
  std::size_t burn_in = 0;
  std::uint64_t seed = 0;
  std::vector<double> draws;           // row-major, (n_iter - burn_in) x names.size()
  std::vector<double> log_posterior;   // per kept draw
  std::vector<double> log_likelihood;  // per kept draw
  std::vector<double> acceptance;      // per parameter, post burn-in
  std::vector<double> scales_at_burn_in;
  std::vector<double> final_scales;

  [[nodiscard]] std::size_t n_params() const { return names.size(); }
  [[nodiscard]] std::size_t n_draws() const { return names.empty() ? 0 : draws.size() / names.size(); }
  [[nodiscard]] double at(std::size_t draw, std::size_t param) const { return draws[draw * names.size() + param]; }
  [[nodiscard]] std::vector<double> column(std::size_t param) const;
};

struct ChainOptions {
  std::size_t n_iter = 76000;
  std::size_t burn_in = 26000;
  std::uint64_t seed = 1;
  std::vector<double> init;    // empty: default_init(spec, blocks, 0, 1)
  std::vector<bool> update;    // empty: update every parameter
};

// Gumbel moment fit for the intercepts, coefficients near 0, exponents near
// 1, xi near -0.1. Chain `chain` of `n_chains` is jittered by up to +-20%.
[[nodiscard]] std::vector<double> default_init(const ModelSpec& spec, std::span<const CycleBlock> blocks,
                                               std::size_t chain, std::size_t n_chains);

// Component-wise adaptive random-walk Metropolis. Proposal scales adapt
// toward 0.44 acceptance during burn-in and stay fixed afterwards.
// Throws InitializationError when the initial point has zero posterior
// density, DomainError when n_iter <= burn_in.
[[nodiscard]] Chain run_chain(const ModelSpec& spec, std::span<const CycleBlock> blocks, const ChainOptions& options);

// Potential scale reduction sqrt(((n-1)/n W + B/n) / W). Throws DomainError
// for fewer than two chains, unequal lengths or n < 2 (n < 10 for Chain
// input); DegenerateChainError when W = 0.
[[nodiscard]] double gelman_rubin(std::span<const std::vector<double>> chains);
[[nodiscard]] double gelman_rubin(std::span<const Chain> chains, std::size_t param);

struct DicResult {
  double dic = 0.0;
  double d_bar = 0.0;
  double p_d = 0.0;
  std::string diagnostic;  // non-empty when p_d is undefined (NaN)
};

[[nodiscard]] DicResult dic(std::span<const Chain> chains, const ModelSpec& spec, std::span<const CycleBlock> blocks);

struct ParamSummary {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double q025 = 0.0;
  double q975 = 0.0;
  double rhat = 0.0;  // NaN when undefined
};

[[nodiscard]] ParamSummary summarize(std::string name, std::span<const std::vector<double>> per_chain);

struct Posterior {
  ModelSpec spec;
  std::vector<Chain> chains;
  std::vector<ParamSummary> params;
  // Coefficients expressed per unit of the unscaled covariate.
  std::vector<ParamSummary> original_units;
  std::vector<double> posterior_mean;
  DicResult dic;
  double min_acceptance = 0.0;
  double max_rhat = 0.0;
  bool converged = false;
};

struct FitConfig {
  std::vector<std::string> models{"M1", "M2a", "M2b", "M2c", "M3a", "M3b", "M4"};
  std::vector<Covariate> covariates{kAllCovariates.begin(), kAllCovariates.end()};
  std::vector<std::uint64_t> seeds{1, 2};  // one per chain
  std::size_t n_iter = 76000;
  std::size_t burn_in = 26000;
  unsigned jobs = 1;
};

struct ModelFit {
  std::string name;
  std::optional<Posterior> posterior;
  std::string failure;  // set when the model could not be fitted
};

struct FitReport {
  std::vector<ModelFit> models;
  CovariateScaling scaling;
  std::vector<Covariate> covariates;  // after dropping unusable columns
  std::vector<std::string> sites;
  std::vector<std::string> diagnostics;
  std::optional<std::string> selected;  // argmin DIC over converged models
};

[[nodiscard]] std::uint64_t chain_seed(std::uint64_t base, std::string_view model);

// Builds a Posterior from completed chains: summaries, R-hat, DIC and the
// convergence flag. `scaling` converts coefficients back to original units.
[[nodiscard]] Posterior make_posterior(const ModelSpec& spec, std::vector<Chain> chains,
                                       std::span<const CycleBlock> scaled_blocks, const CovariateScaling& scaling);

// Fits each configured model with one chain per seed on mean-scaled
// covariates. Per-model failures are recorded, never thrown.
[[nodiscard]] FitReport fit_all(std::span<const CycleBlock> blocks, const FitConfig& config);

void write_trace_csv(std::ostream& out, const Chain& chain);

}  // namespace pedrisk
