#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "pedrisk/blocks.hpp"

namespace pedrisk {

// Below this |xi| the Gumbel limit is used.
inline constexpr double kXiEps = 1e-8;

// GEV(mu, phi, xi) with scale sigma = exp(phi).
struct GevParams {
  double mu = 0.0;
  double phi = 0.0;
  double xi = 0.0;

  [[nodiscard]] double sigma() const { return std::exp(phi); }
  // Finite values and xi inside (-5, 5).
  [[nodiscard]] bool is_valid() const;

  bool operator==(const GevParams&) const = default;
};

// Outside the support the CDF is exactly 0 or 1 and the log-density is -inf.
[[nodiscard]] double gev_cdf(double z, const GevParams& p);

namespace detail {

// gev_logpdf with sigma = exp(phi) supplied by the caller.
[[nodiscard]] inline double gev_logpdf(double z, double mu, double phi, double sigma, double xi) {
  const double u = (z - mu) / sigma;
  if (std::abs(xi) < kXiEps) return -phi - u - std::exp(-u);
  const double xu = xi * u;
  if (!(xu > -1.0)) return -HUGE_VAL;
  const double log_t = std::log1p(xu);
  return -phi - (1.0 + 1.0 / xi) * log_t - std::exp(-log_t / xi);
}

}  // namespace detail

[[nodiscard]] double gev_logpdf(double z, const GevParams& p);
// Throws DomainError unless 0 < prob < 1.
[[nodiscard]] double gev_quantile(double prob, const GevParams& p);

using Rng = std::mt19937_64;

// Uniform on the open interval (0, 1) from the top 53 bits of one draw.
[[nodiscard]] inline double uniform01(Rng& rng) {
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

[[nodiscard]] double gev_sample(const GevParams& p, Rng& rng);
[[nodiscard]] double gev_sample(const GevParams& p, std::uint64_t seed);

enum class LinkKind { Stationary, Linear, NonLinear };

[[nodiscard]] std::string_view link_kind_name(LinkKind kind);
[[nodiscard]] LinkKind link_kind_from_name(std::string_view name);

// intercept + sum_k coeffs[k] * x_k^exponents[k] + site_effects[site]
//
// `covariates[k]` names the covariate multiplied by `coeffs[k]`. Linear links
// use exponent 1 whatever `exponents` holds; Stationary links ignore both.
struct LinkSpec {
  LinkKind kind = LinkKind::Stationary;
  double intercept = 0.0;
  std::vector<Covariate> covariates;
  std::vector<double> coeffs;
  std::vector<double> exponents;
  std::vector<double> site_effects;  // empty: no site term

  // Throws InvalidModelError on inconsistent sizes, a Stationary link with
  // covariates, or a NonLinear exponent outside (-2, 2).
  void validate() const;
};

// Throws EvaluationError naming the covariate when a NonLinear base is not
// positive, and OutOfRangeError for a site index without an effect.
[[nodiscard]] double link_eval(const LinkSpec& spec, const CovariateVector& x,
                               std::optional<std::size_t> site = std::nullopt);

struct GevModel {
  LinkSpec mu;
  LinkSpec phi;
  LinkSpec xi;  // always Stationary
  std::vector<std::string> sites;  // index space of the site effects
};

[[nodiscard]] GevParams params_for_cycle(const GevModel& model, const CycleBlock& block);

}  // namespace pedrisk
