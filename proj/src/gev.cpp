#include "pedrisk/gev.hpp"

#include <algorithm>
#include <limits>

#include "pedrisk/errors.hpp"

namespace pedrisk {

bool GevParams::is_valid() const {
  return std::isfinite(mu) && std::isfinite(phi) && std::isfinite(xi) && xi > -5.0 && xi < 5.0;
}

double gev_cdf(double z, const GevParams& p) {
  const double u = (z - p.mu) / p.sigma();
  if (std::abs(p.xi) < kXiEps) return std::exp(-std::exp(-u));
  const double xu = p.xi * u;
  if (!(xu > -1.0)) return p.xi > 0.0 ? 0.0 : 1.0;
  return std::exp(-std::exp(-std::log1p(xu) / p.xi));
}

double gev_logpdf(double z, const GevParams& p) { return detail::gev_logpdf(z, p.mu, p.phi, p.sigma(), p.xi); }

double gev_quantile(double prob, const GevParams& p) {
  if (!(prob > 0.0 && prob < 1.0)) throw DomainError("GEV quantile needs 0 < p < 1");
  const double log_y = std::log(-std::log(prob));
  if (std::abs(p.xi) < kXiEps) return p.mu - p.sigma() * log_y;
  return p.mu + p.sigma() * std::expm1(-p.xi * log_y) / p.xi;
}

double gev_sample(const GevParams& p, Rng& rng) { return gev_quantile(uniform01(rng), p); }

double gev_sample(const GevParams& p, std::uint64_t seed) {
  Rng rng(seed);
  return gev_sample(p, rng);
}

std::string_view link_kind_name(LinkKind kind) {
  switch (kind) {
    case LinkKind::Stationary:
      return "stationary";
    case LinkKind::Linear:
      return "linear";
    case LinkKind::NonLinear:
      return "nonlinear";
  }
  return "?";
}

LinkKind link_kind_from_name(std::string_view name) {
  if (name == "stationary") return LinkKind::Stationary;
  if (name == "linear") return LinkKind::Linear;
  if (name == "nonlinear") return LinkKind::NonLinear;
  throw ConfigError("unknown link kind '" + std::string(name) + "'");
}

void LinkSpec::validate() const {
  if (kind == LinkKind::Stationary) {
    if (!covariates.empty() || !coeffs.empty()) throw InvalidModelError("stationary link cannot carry covariates");
    return;
  }
  if (coeffs.size() != covariates.size()) throw InvalidModelError("link coefficient count differs from covariates");
  if (kind == LinkKind::NonLinear) {
    if (exponents.size() != covariates.size()) throw InvalidModelError("link exponent count differs from covariates");
    for (const double e : exponents) {
      if (!(e > -2.0 && e < 2.0)) throw InvalidModelError("link exponent outside (-2, 2)");
    }
  }
}

double link_eval(const LinkSpec& spec, const CovariateVector& x, std::optional<std::size_t> site) {
  double value = spec.intercept;
  if (spec.kind != LinkKind::Stationary) {
    for (std::size_t k = 0; k < spec.covariates.size(); ++k) {
      const double base = x.get(spec.covariates[k]);
      if (spec.kind == LinkKind::Linear) {
        value += spec.coeffs[k] * base;
        continue;
      }
      if (!(base > 0.0)) {
        throw EvaluationError("non-linear link needs a positive value for covariate '" +
                              std::string(covariate_name(spec.covariates[k])) + "'");
      }
      value += spec.coeffs[k] * std::pow(base, spec.exponents[k]);
    }
  }
  if (site && !spec.site_effects.empty()) {
    if (*site >= spec.site_effects.size()) throw OutOfRangeError("site index without a site effect");
    value += spec.site_effects[*site];
  }
  return value;
}

GevParams params_for_cycle(const GevModel& model, const CycleBlock& block) {
  std::optional<std::size_t> site;
  const bool has_effects =
      !model.mu.site_effects.empty() || !model.phi.site_effects.empty() || !model.xi.site_effects.empty();
  if (has_effects) {
    const auto it = std::find(model.sites.begin(), model.sites.end(), block.site_id);
    if (it == model.sites.end()) throw EvaluationError("block site '" + block.site_id + "' is not part of the model");
    site = static_cast<std::size_t>(it - model.sites.begin());
  }
  return {link_eval(model.mu, block.covariates, site), link_eval(model.phi, block.covariates, site),
          link_eval(model.xi, block.covariates, site)};
}

}  // namespace pedrisk
