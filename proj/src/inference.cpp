#include "pedrisk/inference.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>
#include <thread>

#include <Eigen/Dense>

#include "pedrisk/csv.hpp"
#include "pedrisk/errors.hpp"

namespace pedrisk {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double layout_log_prior(const ParameterLayout& layout, std::span<const double> theta);

// Mean that is exact for constant input: x0 + sum(x - x0) / n.
double exact_mean(std::span<const double> xs) {
  if (xs.empty()) return std::nan("");
  const double x0 = xs[0];
  double acc = 0.0;
  for (const double x : xs) acc += x - x0;
  return x0 + acc / static_cast<double>(xs.size());
}

double sample_variance(std::span<const double> xs, double mean) {
  if (xs.size() < 2) return 0.0;
  double ss = 0.0;
  for (const double x : xs) ss += (x - mean) * (x - mean);
  return ss / static_cast<double>(xs.size() - 1);
}

// Linear-interpolation quantile of sorted data.
double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) return std::nan("");
  const double h = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

double standard_normal(Rng& rng) {
  // Box-Muller on two open-interval uniforms; one variate per call keeps the
  // stream layout trivial to reason about.
  const double u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

enum class Role { Intercept, Coeff, Exponent, SiteEffect, SiteSd };

struct ParamRole {
  std::size_t component = 0;  // 0 mu, 1 phi, 2 xi
  Role role = Role::Intercept;
  std::size_t index = 0;  // covariate or site index
};

// One linear predictor (mu, phi or xi) evaluated over all blocks.
struct Predictor {
  LinkKind kind = LinkKind::Stationary;
  std::size_t n_cov = 0;
  const std::vector<double>* x = nullptr;     // column-major n_blocks x n_cov
  const std::vector<double>* logx = nullptr;  // same layout, NonLinear only
  std::vector<double> pow;                    // x^theta per covariate, NonLinear only
  std::vector<double> terms;                  // coeff * x^theta per covariate
  std::vector<double> value;                  // per block
};

// Canonical evaluation of the likelihood. Every value it reports, whether
// from a full reset or an accepted single-parameter update, is computed by
// the same arithmetic so the two routes agree bit for bit.
class Evaluator {
 public:
  Evaluator(const ModelSpec& spec, std::span<const CycleBlock> blocks)
      : spec_(spec), layout_(spec), n_(blocks.size()) {
    z_.reserve(n_);
    site_.assign(n_, 0);
    for (std::size_t i = 0; i < n_; ++i) {
      z_.push_back(blocks[i].z);
      if (spec.random_effects()) {
        const auto it = std::find(spec.sites.begin(), spec.sites.end(), blocks[i].site_id);
        site_[i] = it == spec.sites.end() ? spec.sites.size() : static_cast<std::size_t>(it - spec.sites.begin());
      }
    }
    const std::size_t k = spec.covariates.size();
    x_.resize(n_ * k);
    logx_.resize(n_ * k);
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t i = 0; i < n_; ++i) {
        const double v = blocks[i].covariates.get(spec.covariates[c]);
        x_[c * n_ + i] = v;
        logx_[c * n_ + i] = v > 0.0 ? std::log(v) : std::nan("");
        if (!(v > 0.0)) positive_ = false;
      }
    }
    init_predictor(pred_[0], spec.mu_link);
    init_predictor(pred_[1], spec.phi_link);
    init_predictor(pred_[2], LinkKind::Stationary);
    for (std::size_t p = 0; p < 3; ++p) staged_[p] = pred_[p];
    sigma_.assign(n_, 1.0);
    staged_sigma_ = sigma_;

    roles_.resize(layout_.size());
    roles_[layout_.mu0()] = {0, Role::Intercept, 0};
    roles_[layout_.phi0()] = {1, Role::Intercept, 0};
    roles_[layout_.xi0()] = {2, Role::Intercept, 0};
    for (std::size_t c = 0; c < k; ++c) {
      if (spec.mu_link != LinkKind::Stationary) roles_[layout_.mu_coeff(c)] = {0, Role::Coeff, c};
      if (spec.mu_link == LinkKind::NonLinear) roles_[layout_.mu_exponent(c)] = {0, Role::Exponent, c};
      if (spec.phi_link != LinkKind::Stationary) roles_[layout_.phi_coeff(c)] = {1, Role::Coeff, c};
      if (spec.phi_link == LinkKind::NonLinear) roles_[layout_.phi_exponent(c)] = {1, Role::Exponent, c};
    }
    if (spec.random_effects()) {
      for (std::size_t comp = 0; comp < 3; ++comp) {
        for (std::size_t j = 0; j < spec.sites.size(); ++j) {
          roles_[layout_.site_effect(comp, j)] = {comp, Role::SiteEffect, j};
        }
        roles_[layout_.site_sd(comp)] = {comp, Role::SiteSd, 0};
      }
    }
  }

  [[nodiscard]] const ParameterLayout& layout() const { return layout_; }
  [[nodiscard]] bool bases_positive() const { return positive_; }
  [[nodiscard]] double loglik() const { return ll_; }
  [[nodiscard]] double logprior() const { return lp_; }
  [[nodiscard]] double logpost() const { return ll_ + lp_; }
  [[nodiscard]] const std::vector<double>& theta() const { return theta_; }

  double reset(std::span<const double> theta) {
    theta_.assign(theta.begin(), theta.end());
    lp_ = layout_log_prior(layout_, theta_);
    for (std::size_t comp = 0; comp < 3; ++comp) {
      auto& pr = pred_[comp];
      for (std::size_t c = 0; c < pr.n_cov; ++c) {
        if (pr.kind == LinkKind::NonLinear) fill_pow(pr, c, theta_[exponent_index(comp, c)]);
        fill_term(pr, c, theta_[coeff_index(comp, c)]);
      }
      fill_value(pr, comp, theta_);
    }
    fill_sigma(pred_[1], sigma_);
    ll_ = compute_loglik(pred_[0].value, pred_[1].value, sigma_, pred_[2].value);
    return ll_;
  }

  // Log posterior with theta[p] = value; the change stays staged until commit().
  double propose(std::size_t p, double value) {
    staged_param_ = p;
    staged_value_ = value;
    const double old = theta_[p];
    theta_[p] = value;
    staged_lp_ = layout_log_prior(layout_, theta_);
    theta_[p] = old;
    staged_comp_ = 3;
    if (!std::isfinite(staged_lp_)) return kNegInf;

    const ParamRole role = roles_[p];
    if (role.role == Role::SiteSd) {
      staged_ll_ = ll_;
      return staged_ll_ + staged_lp_;
    }
    staged_comp_ = role.component;
    auto& st = staged_[role.component];
    const auto& cur = pred_[role.component];
    theta_[p] = value;
    switch (role.role) {
      case Role::Coeff:
        st.terms = cur.terms;
        fill_term_from(st, cur, role.index, value);
        fill_value(st, role.component, theta_);
        break;
      case Role::Exponent:
        st.pow = cur.pow;
        st.terms = cur.terms;
        fill_pow(st, role.index, value);
        fill_term(st, role.index, theta_[coeff_index(role.component, role.index)]);
        fill_value(st, role.component, theta_);
        break;
      default:
        // Intercepts and site effects leave the covariate terms untouched.
        fill_value(st.value, cur.terms, cur.n_cov, role.component, theta_);
        break;
    }
    theta_[p] = old;

    const auto& mu = role.component == 0 ? st.value : pred_[0].value;
    const auto& phi = role.component == 1 ? st.value : pred_[1].value;
    const auto& xi = role.component == 2 ? st.value : pred_[2].value;
    const std::vector<double>* sigma = &sigma_;
    if (role.component == 1) {
      fill_sigma(st, staged_sigma_);
      sigma = &staged_sigma_;
    }
    staged_ll_ = compute_loglik(mu, phi, *sigma, xi);
    return staged_ll_ + staged_lp_;
  }

  void commit() {
    theta_[staged_param_] = staged_value_;
    lp_ = staged_lp_;
    ll_ = staged_ll_;
    if (staged_comp_ < 3) {
      const Role role = roles_[staged_param_].role;
      if (role == Role::Coeff || role == Role::Exponent) {
        std::swap(pred_[staged_comp_].terms, staged_[staged_comp_].terms);
      }
      if (role == Role::Exponent) std::swap(pred_[staged_comp_].pow, staged_[staged_comp_].pow);
      std::swap(pred_[staged_comp_].value, staged_[staged_comp_].value);
      if (staged_comp_ == 1) std::swap(sigma_, staged_sigma_);
    }
  }

 private:
  void init_predictor(Predictor& pr, LinkKind kind) const {
    pr.kind = kind;
    pr.n_cov = kind == LinkKind::Stationary ? 0 : spec_.covariates.size();
    pr.x = &x_;
    pr.logx = &logx_;
    pr.terms.assign(pr.n_cov * n_, 0.0);
    if (kind == LinkKind::NonLinear) pr.pow.assign(pr.n_cov * n_, 0.0);
    pr.value.assign(n_, 0.0);
  }

  std::size_t coeff_index(std::size_t comp, std::size_t c) const {
    return comp == 0 ? layout_.mu_coeff(c) : layout_.phi_coeff(c);
  }
  std::size_t exponent_index(std::size_t comp, std::size_t c) const {
    return comp == 0 ? layout_.mu_exponent(c) : layout_.phi_exponent(c);
  }

  void fill_pow(Predictor& pr, std::size_t c, double exponent) const {
    const double* lx = pr.logx->data() + c * n_;
    double* out = pr.pow.data() + c * n_;
    for (std::size_t i = 0; i < n_; ++i) out[i] = std::exp(exponent * lx[i]);
  }

  void fill_term(Predictor& pr, std::size_t c, double coeff) const {
    const double* base = pr.kind == LinkKind::NonLinear ? pr.pow.data() + c * n_ : pr.x->data() + c * n_;
    double* out = pr.terms.data() + c * n_;
    for (std::size_t i = 0; i < n_; ++i) out[i] = coeff * base[i];
  }

  void fill_term_from(Predictor& st, const Predictor& cur, std::size_t c, double coeff) const {
    const double* base = cur.kind == LinkKind::NonLinear ? cur.pow.data() + c * n_ : cur.x->data() + c * n_;
    double* out = st.terms.data() + c * n_;
    for (std::size_t i = 0; i < n_; ++i) out[i] = coeff * base[i];
  }

  void fill_value(Predictor& pr, std::size_t comp, std::span<const double> theta) const {
    fill_value(pr.value, pr.terms, pr.n_cov, comp, theta);
  }

  // value = ((intercept + term_0) + term_1 + ...) + site effect, in this order.
  void fill_value(std::vector<double>& value, const std::vector<double>& terms, std::size_t n_cov, std::size_t comp,
                  std::span<const double> theta) const {
    const std::size_t intercept = comp == 0 ? layout_.mu0() : comp == 1 ? layout_.phi0() : layout_.xi0();
    const double a0 = theta[intercept];
    for (std::size_t i = 0; i < n_; ++i) value[i] = a0;
    for (std::size_t c = 0; c < n_cov; ++c) {
      const double* t = terms.data() + c * n_;
      for (std::size_t i = 0; i < n_; ++i) value[i] += t[i];
    }
    if (spec_.random_effects()) {
      const std::size_t n_sites = spec_.sites.size();
      for (std::size_t i = 0; i < n_; ++i) {
        value[i] += site_[i] < n_sites ? theta[layout_.site_effect(comp, site_[i])] : 0.0;
      }
    }
  }

  void fill_sigma(const Predictor& phi, std::vector<double>& sigma) const {
    for (std::size_t i = 0; i < n_; ++i) sigma[i] = std::exp(phi.value[i]);
  }

  double compute_loglik(const std::vector<double>& mu, const std::vector<double>& phi,
                        const std::vector<double>& sigma, const std::vector<double>& xi) const {
    double ll = 0.0;
    for (std::size_t i = 0; i < n_; ++i) {
      if (!(xi[i] > -kShapeBound && xi[i] < kShapeBound)) return kNegInf;
      const double term = detail::gev_logpdf(z_[i], mu[i], phi[i], sigma[i], xi[i]);
      if (!(term > kNegInf)) return kNegInf;
      ll += term;
    }
    return std::isnan(ll) ? kNegInf : ll;
  }

  const ModelSpec& spec_;
  ParameterLayout layout_;
  std::size_t n_;
  std::vector<double> z_;
  std::vector<std::size_t> site_;
  std::vector<double> x_, logx_;
  bool positive_ = true;
  std::vector<ParamRole> roles_;

  std::vector<double> theta_;
  Predictor pred_[3];
  Predictor staged_[3];
  std::vector<double> sigma_, staged_sigma_;
  double ll_ = 0.0, lp_ = 0.0;

  std::size_t staged_param_ = 0, staged_comp_ = 3;
  double staged_value_ = 0.0, staged_ll_ = 0.0, staged_lp_ = 0.0;
};

}  // namespace

const std::array<std::string_view, 7>& model_names() {
  static constexpr std::array<std::string_view, 7> names{"M1", "M2a", "M2b", "M2c", "M3a", "M3b", "M4"};
  return names;
}

ModelSpec make_model_spec(std::string_view name, std::vector<Covariate> covariates, std::vector<std::string> sites) {
  using enum LinkKind;
  ModelSpec spec;
  spec.name = std::string(name);
  if (name == "M1") {
    spec.mu_link = Stationary, spec.phi_link = Stationary;
  } else if (name == "M2a") {
    spec.mu_link = Linear, spec.phi_link = Stationary;
  } else if (name == "M2b") {
    spec.mu_link = Stationary, spec.phi_link = Linear;
  } else if (name == "M2c") {
    spec.mu_link = Linear, spec.phi_link = Linear;
  } else if (name == "M3a") {
    spec.mu_link = NonLinear, spec.phi_link = Stationary;
  } else if (name == "M3b") {
    spec.mu_link = NonLinear, spec.phi_link = Linear;
  } else if (name == "M4") {
    spec.mu_link = NonLinear, spec.phi_link = NonLinear;
  } else {
    throw ConfigError("unknown model '" + std::string(name) + "'");
  }
  spec.covariates = std::move(covariates);
  spec.sites = std::move(sites);
  return spec;
}

ParameterLayout::ParameterLayout(const ModelSpec& spec) {
  auto add = [&](std::string name, PriorKind prior, std::size_t group = 0) {
    params_.push_back({std::move(name), prior, group});
    return params_.size() - 1;
  };
  auto link_params = [&](std::string_view comp, LinkKind kind, std::size_t& coeff, std::size_t& exp) {
    const std::size_t intercept = add(std::string(comp) + "_0", PriorKind::Normal);
    coeff = params_.size();
    if (kind != LinkKind::Stationary) {
      for (const auto c : spec.covariates) add(std::string(comp) + "_" + std::string(covariate_name(c)), PriorKind::Normal);
    }
    exp = params_.size();
    if (kind == LinkKind::NonLinear) {
      for (const auto c : spec.covariates) {
        add("theta_" + std::string(comp) + "_" + std::string(covariate_name(c)), PriorKind::Exponent);
      }
    }
    return intercept;
  };
  mu0_ = link_params("mu", spec.mu_link, mu_coeff_, mu_exp_);
  phi0_ = link_params("phi", spec.phi_link, phi_coeff_, phi_exp_);
  xi0_ = add("xi_0", PriorKind::Shape);
  eps_ = params_.size();
  n_sites_ = spec.random_effects() ? spec.sites.size() : 0;
  tau_ = eps_ + 3 * n_sites_;
  if (n_sites_ > 0) {
    static constexpr std::array<std::string_view, 3> comps{"mu", "phi", "xi"};
    for (std::size_t comp = 0; comp < 3; ++comp) {
      for (const auto& site : spec.sites) {
        add("eps_" + std::string(comps[comp]) + "[" + site + "]", PriorKind::SiteEffect, tau_ + comp);
      }
    }
    for (std::size_t comp = 0; comp < 3; ++comp) add("tau_" + std::string(comps[comp]), PriorKind::SiteSd);
  }
}

std::vector<std::string> ParameterLayout::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.name);
  return out;
}

std::optional<std::size_t> ParameterLayout::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  return std::nullopt;
}

GevModel to_gev_model(const ModelSpec& spec, std::span<const double> theta) {
  const ParameterLayout layout(spec);
  if (theta.size() != layout.size()) throw DomainError("parameter vector has the wrong dimension");
  GevModel model;
  model.sites = spec.sites;
  auto fill = [&](LinkSpec& link, LinkKind kind, std::size_t intercept, std::size_t coeff, std::size_t exp,
                  std::size_t comp) {
    link.kind = kind;
    link.intercept = theta[intercept];
    if (kind != LinkKind::Stationary) {
      link.covariates = spec.covariates;
      for (std::size_t c = 0; c < spec.covariates.size(); ++c) {
        link.coeffs.push_back(theta[coeff + c]);
        link.exponents.push_back(kind == LinkKind::NonLinear ? theta[exp + c] : 1.0);
      }
    }
    if (spec.random_effects()) {
      for (std::size_t j = 0; j < spec.sites.size(); ++j) link.site_effects.push_back(theta[layout.site_effect(comp, j)]);
    }
  };
  fill(model.mu, spec.mu_link, layout.mu0(), layout.mu_coeff(0), layout.mu_exponent(0), 0);
  fill(model.phi, spec.phi_link, layout.phi0(), layout.phi_coeff(0), layout.phi_exponent(0), 1);
  fill(model.xi, LinkKind::Stationary, layout.xi0(), 0, 0, 2);
  return model;
}

double log_prior(const ModelSpec& spec, std::span<const double> theta) {
  const ParameterLayout layout(spec);
  if (theta.size() != layout.size()) throw DomainError("parameter vector has the wrong dimension");
  return layout_log_prior(layout, theta);
}

namespace {

double layout_log_prior(const ParameterLayout& layout, std::span<const double> theta) {
  static const double normal_const = -0.5 * std::log(2.0 * std::numbers::pi * kRegressionPriorVariance);
  static const double half_normal_const = std::log(2.0) - 0.5 * std::log(2.0 * std::numbers::pi);
  double lp = 0.0;
  const auto& params = layout.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double v = theta[i];
    if (!std::isfinite(v)) return kNegInf;
    switch (params[i].prior) {
      case PriorKind::Normal:
        lp += normal_const - v * v / (2.0 * kRegressionPriorVariance);
        break;
      case PriorKind::Exponent:
        if (!(v > -kExponentBound && v < kExponentBound)) return kNegInf;
        lp -= std::log(2.0 * kExponentBound);
        break;
      case PriorKind::Shape:
        if (!(v > -kShapeBound && v < kShapeBound)) return kNegInf;
        lp -= std::log(2.0 * kShapeBound);
        break;
      case PriorKind::SiteSd:
        if (!(v > 0.0)) return kNegInf;
        lp += half_normal_const - 0.5 * v * v;
        break;
      case PriorKind::SiteEffect: {
        const double tau = theta[params[i].group];
        if (!(tau > 0.0)) return kNegInf;
        lp += -0.5 * std::log(2.0 * std::numbers::pi) - std::log(tau) - v * v / (2.0 * tau * tau);
        break;
      }
    }
  }
  return lp;
}

}  // namespace

double log_likelihood(const ModelSpec& spec, std::span<const double> theta, std::span<const CycleBlock> blocks) {
  Evaluator eval(spec, blocks);
  if (theta.size() != eval.layout().size()) throw DomainError("parameter vector has the wrong dimension");
  if (!eval.bases_positive() && (spec.mu_link == LinkKind::NonLinear || spec.phi_link == LinkKind::NonLinear)) {
    return kNegInf;
  }
  return eval.reset(theta);
}

double log_posterior(std::span<const double> theta, const ModelSpec& spec, std::span<const CycleBlock> blocks) {
  const double lp = log_prior(spec, theta);
  if (!std::isfinite(lp)) return kNegInf;
  const double ll = log_likelihood(spec, theta, blocks);
  if (!std::isfinite(ll)) return kNegInf;
  return ll + lp;
}

void check_covariates(const ModelSpec& spec, std::span<const CycleBlock> blocks) {
  if (spec.mu_link != LinkKind::NonLinear && spec.phi_link != LinkKind::NonLinear) return;
  for (const auto c : spec.covariates) {
    for (const auto& b : blocks) {
      if (!(b.covariates.get(c) > 0.0)) {
        throw EvaluationError("non-linear link needs positive values for covariate '" +
                              std::string(covariate_name(c)) + "' (site " + b.site_id + ", cycle " +
                              std::to_string(b.cycle_index) + ")");
      }
    }
  }
}

std::vector<double> Chain::column(std::size_t param) const {
  std::vector<double> out(n_draws());
  for (std::size_t d = 0; d < out.size(); ++d) out[d] = at(d, param);
  return out;
}

namespace {

struct LocationFit {
  double intercept = 0.0;
  std::vector<double> coeffs;
  double rss = std::numeric_limits<double>::infinity();
};

// Least squares of z on [1, x_k^e_k].
LocationFit fit_location(std::span<const CycleBlock> blocks, const std::vector<Covariate>& covs,
                         const std::vector<double>& exps) {
  const auto n = static_cast<Eigen::Index>(blocks.size());
  const auto k = static_cast<Eigen::Index>(covs.size());
  Eigen::MatrixXd a(n, k + 1);
  Eigen::VectorXd z(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& b = blocks[static_cast<std::size_t>(r)];
    a(r, 0) = 1.0;
    for (Eigen::Index c = 0; c < k; ++c) {
      a(r, c + 1) = std::pow(b.covariates.get(covs[static_cast<std::size_t>(c)]), exps[static_cast<std::size_t>(c)]);
    }
    z(r) = b.z;
  }
  LocationFit out;
  if (!a.allFinite()) return out;
  const Eigen::VectorXd beta = a.colPivHouseholderQr().solve(z);
  if (!beta.allFinite()) return out;
  out.intercept = beta(0);
  for (Eigen::Index c = 0; c < k; ++c) out.coeffs.push_back(beta(c + 1));
  out.rss = (a * beta - z).squaredNorm();
  return out;
}

// Exponents by coordinate search over a grid on (-2, 2), skipping the
// neighbourhood of 0 where the coefficient and intercept are confounded.
std::vector<double> profile_exponents(std::span<const CycleBlock> blocks, const std::vector<Covariate>& covs) {
  std::vector<double> exps(covs.size(), 1.0);
  std::vector<double> grid;
  for (int g = -19; g <= 19; ++g) {
    if (g != 0) grid.push_back(0.1 * g);
  }
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t c = 0; c < covs.size(); ++c) {
      double best = fit_location(blocks, covs, exps).rss;
      double best_e = exps[c];
      for (const double e : grid) {
        exps[c] = e;
        const double rss = fit_location(blocks, covs, exps).rss;
        if (rss < best) {
          best = rss;
          best_e = e;
        }
      }
      exps[c] = best_e;
    }
  }
  return exps;
}

}  // namespace

std::vector<double> default_init(const ModelSpec& spec, std::span<const CycleBlock> blocks, std::size_t chain,
                                 std::size_t n_chains) {
  const ParameterLayout layout(spec);
  std::vector<double> z;
  z.reserve(blocks.size());
  for (const auto& b : blocks) z.push_back(b.z);
  double mean = z.empty() ? 0.0 : exact_mean(z);
  double sd = z.size() > 1 ? std::sqrt(sample_variance(z, mean)) : 0.0;
  if (!(sd > 0.0)) sd = 1.0;
  const double f = n_chains > 1 ? 0.8 + 0.4 * static_cast<double>(chain) / static_cast<double>(n_chains - 1) : 1.0;
  const std::size_t k = spec.covariates.size();

  // Location covariates start from a least-squares fit so that non-linear
  // chains begin on the correct side of exponent 0.
  std::vector<double> exps(k, 1.0);
  std::optional<LocationFit> loc;
  if (spec.mu_link != LinkKind::Stationary && k > 0 && blocks.size() > k + 1) {
    if (spec.mu_link == LinkKind::NonLinear) exps = profile_exponents(blocks, spec.covariates);
    auto fit = fit_location(blocks, spec.covariates, exps);
    if (std::isfinite(fit.rss)) {
      loc = fit;
      sd = std::sqrt(fit.rss / static_cast<double>(blocks.size() - k - 1));
      if (!(sd > 0.0)) sd = 1.0;
      mean = fit.intercept;
    }
  }
  const double sigma = sd * std::sqrt(6.0) / std::numbers::pi;
  const double mu = mean - std::numbers::egamma * sigma;

  std::vector<double> theta(layout.size(), 0.0);
  theta[layout.mu0()] = mu + (f - 1.0) * std::max(std::abs(mu), sigma);
  theta[layout.phi0()] = std::log(sigma * f);
  theta[layout.xi0()] = -0.1 * f;
  for (std::size_t c = 0; c < k; ++c) {
    if (spec.mu_link != LinkKind::Stationary) theta[layout.mu_coeff(c)] = loc ? loc->coeffs[c] * f : (f - 1.0) * 0.1;
    if (spec.mu_link == LinkKind::NonLinear) theta[layout.mu_exponent(c)] = exps[c] * f;
    if (spec.phi_link != LinkKind::Stationary) theta[layout.phi_coeff(c)] = (f - 1.0) * 0.1;
    if (spec.phi_link == LinkKind::NonLinear) theta[layout.phi_exponent(c)] = f;
  }
  for (std::size_t c = 0; spec.mu_link == LinkKind::NonLinear && c < k; ++c) {
    theta[layout.mu_exponent(c)] = std::clamp(theta[layout.mu_exponent(c)], -1.95, 1.95);
  }
  if (spec.random_effects()) {
    for (std::size_t comp = 0; comp < 3; ++comp) theta[layout.site_sd(comp)] = 0.5 * f;
  }
  if (!std::isfinite(log_posterior(theta, spec, blocks))) {
    // Fall back to the Gumbel limit, whose support is the whole real line.
    theta[layout.xi0()] = 0.0;
  }
  if (!std::isfinite(log_posterior(theta, spec, blocks))) {
    for (std::size_t c = 0; c < k; ++c) {
      if (spec.mu_link != LinkKind::Stationary) theta[layout.mu_coeff(c)] = 0.0;
      if (spec.phi_link != LinkKind::Stationary) theta[layout.phi_coeff(c)] = 0.0;
    }
    theta[layout.mu0()] = mu;
  }
  return theta;
}

Chain run_chain(const ModelSpec& spec, std::span<const CycleBlock> blocks, const ChainOptions& options) {
  if (options.n_iter <= options.burn_in) throw DomainError("n_iter must exceed burn_in");
  check_covariates(spec, blocks);
  Evaluator eval(spec, blocks);
  const std::size_t p = eval.layout().size();
  const std::vector<double> init = options.init.empty() ? default_init(spec, blocks, 0, 1) : options.init;
  if (init.size() != p) throw InitializationError("initial vector has the wrong dimension");
  if (!options.update.empty() && options.update.size() != p) {
    throw InitializationError("update mask has the wrong dimension");
  }
  eval.reset(init);
  if (!std::isfinite(eval.logpost())) throw InitializationError("initial values lie outside the posterior support");

  Chain chain;
  chain.names = eval.layout().names();
  chain.n_iter = options.n_iter;
  chain.burn_in = options.burn_in;
  chain.seed = options.seed;
  const std::size_t kept = options.n_iter - options.burn_in;
  chain.draws.reserve(kept * p);
  chain.log_posterior.reserve(kept);
  chain.log_likelihood.reserve(kept);

  Rng rng(options.seed);
  std::vector<double> log_scale(p);
  for (std::size_t i = 0; i < p; ++i) log_scale[i] = std::log(0.1);
  std::vector<std::size_t> accepted(p, 0);
  constexpr double kMinLogScale = -25.0;
  constexpr double kMaxLogScale = 4.0;

  for (std::size_t it = 0; it < options.n_iter; ++it) {
    if (it == options.burn_in) {
      chain.scales_at_burn_in.resize(p);
      for (std::size_t i = 0; i < p; ++i) chain.scales_at_burn_in[i] = std::exp(log_scale[i]);
    }
    const bool adapting = it < options.burn_in;
    const double gain = adapting ? std::pow(static_cast<double>(it + 1), -0.6) : 0.0;
    for (std::size_t i = 0; i < p; ++i) {
      if (!options.update.empty() && !options.update[i]) continue;
      const double current = eval.theta()[i];
      const double step = std::exp(log_scale[i]) * standard_normal(rng);
      const double proposed_lp = eval.propose(i, current + step);
      const double delta = proposed_lp - eval.logpost();
      const double log_u = std::log(uniform01(rng));
      const bool accept = std::isfinite(proposed_lp) && log_u < delta;
      if (accept) eval.commit();
      if (adapting) {
        const double prob = std::isfinite(proposed_lp) ? std::exp(std::min(0.0, delta)) : 0.0;
        log_scale[i] = std::clamp(log_scale[i] + gain * (prob - kTargetAcceptance), kMinLogScale, kMaxLogScale);
      } else if (accept) {
        ++accepted[i];
      }
    }
    if (!adapting) {
      const auto& theta = eval.theta();
      chain.draws.insert(chain.draws.end(), theta.begin(), theta.end());
      chain.log_posterior.push_back(eval.logpost());
      chain.log_likelihood.push_back(eval.loglik());
    }
  }
  chain.final_scales.resize(p);
  chain.acceptance.resize(p);
  for (std::size_t i = 0; i < p; ++i) {
    chain.final_scales[i] = std::exp(log_scale[i]);
    chain.acceptance[i] = static_cast<double>(accepted[i]) / static_cast<double>(kept);
  }
  return chain;
}

double gelman_rubin(std::span<const std::vector<double>> chains) {
  if (chains.size() < 2) throw DomainError("Gelman-Rubin needs at least two chains");
  const std::size_t n = chains[0].size();
  for (const auto& c : chains) {
    if (c.size() != n) throw DomainError("Gelman-Rubin chains must have equal length");
  }
  if (n < 2) throw DomainError("Gelman-Rubin needs at least two draws per chain");
  const auto m = static_cast<double>(chains.size());
  const auto nd = static_cast<double>(n);
  std::vector<double> means;
  double w = 0.0;
  for (const auto& c : chains) {
    const double mean = exact_mean(c);
    means.push_back(mean);
    w += sample_variance(c, mean);
  }
  w /= m;
  if (!(w > 0.0)) throw DegenerateChainError("within-chain variance is zero");
  const double grand = exact_mean(means);
  double between = 0.0;
  for (const double mean : means) between += (mean - grand) * (mean - grand);
  const double b = nd * between / (m - 1.0);
  return std::sqrt(((nd - 1.0) / nd * w + b / nd) / w);
}

double gelman_rubin(std::span<const Chain> chains, std::size_t param) {
  for (const auto& c : chains) {
    if (c.n_draws() < 10) throw DomainError("Gelman-Rubin needs at least 10 draws per chain");
  }
  std::vector<std::vector<double>> cols;
  cols.reserve(chains.size());
  for (const auto& c : chains) cols.push_back(c.column(param));
  return gelman_rubin(cols);
}

DicResult dic(std::span<const Chain> chains, const ModelSpec& spec, std::span<const CycleBlock> blocks) {
  if (chains.empty() || chains[0].n_draws() == 0) throw DomainError("DIC needs at least one non-empty chain");
  const std::size_t p = chains[0].n_params();
  std::vector<double> deviance;
  for (const auto& c : chains) {
    for (const double ll : c.log_likelihood) deviance.push_back(-2.0 * ll);
  }
  DicResult out;
  out.d_bar = exact_mean(deviance);
  std::vector<double> theta_bar(p);
  std::vector<double> pooled;
  for (std::size_t i = 0; i < p; ++i) {
    pooled.clear();
    for (const auto& c : chains) {
      const auto col = c.column(i);
      pooled.insert(pooled.end(), col.begin(), col.end());
    }
    theta_bar[i] = exact_mean(pooled);
  }
  const double d_hat = -2.0 * log_likelihood(spec, theta_bar, blocks);
  if (!std::isfinite(d_hat)) {
    out.p_d = std::nan("");
    out.dic = std::nan("");
    out.diagnostic = "posterior mean lies outside the likelihood support; p_d undefined";
    return out;
  }
  out.p_d = out.d_bar - d_hat;
  out.dic = out.d_bar + out.p_d;
  return out;
}

ParamSummary summarize(std::string name, std::span<const std::vector<double>> per_chain) {
  ParamSummary s;
  s.name = std::move(name);
  std::vector<double> pooled;
  for (const auto& c : per_chain) pooled.insert(pooled.end(), c.begin(), c.end());
  s.mean = exact_mean(pooled);
  s.sd = std::sqrt(sample_variance(pooled, s.mean));
  std::sort(pooled.begin(), pooled.end());
  s.q025 = quantile_sorted(pooled, 0.025);
  s.q975 = quantile_sorted(pooled, 0.975);
  try {
    if (per_chain.empty() || per_chain[0].size() < 10) throw DomainError("too few draws");
    s.rhat = gelman_rubin(per_chain);
  } catch (const Error&) {
    s.rhat = std::nan("");
  }
  return s;
}

std::uint64_t chain_seed(std::uint64_t base, std::string_view model) { return splitmix64(base ^ fnv1a(model)); }

Posterior make_posterior(const ModelSpec& spec, std::vector<Chain> chains, std::span<const CycleBlock> scaled_blocks,
                         const CovariateScaling& scaling) {
  Posterior post;
  post.spec = spec;
  const ParameterLayout layout(spec);
  const std::size_t p = layout.size();
  std::vector<std::vector<double>> cols(chains.size());
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t c = 0; c < chains.size(); ++c) cols[c] = chains[c].column(i);
    post.params.push_back(summarize(layout.params()[i].name, cols));
    post.posterior_mean.push_back(post.params.back().mean);
  }

  // coefficient' * (x / m)^theta == (coefficient' * m^-theta) * x^theta
  auto original = [&](LinkKind kind, std::size_t coeff0, std::size_t exp0) {
    if (kind == LinkKind::Stationary) return;
    for (std::size_t k = 0; k < spec.covariates.size(); ++k) {
      const double m = scaling.divisor[static_cast<std::size_t>(spec.covariates[k])];
      for (std::size_t c = 0; c < chains.size(); ++c) {
        auto& col = cols[c];
        col.resize(chains[c].n_draws());
        for (std::size_t d = 0; d < col.size(); ++d) {
          const double e = kind == LinkKind::NonLinear ? chains[c].at(d, exp0 + k) : 1.0;
          col[d] = chains[c].at(d, coeff0 + k) * std::pow(m, -e);
        }
      }
      post.original_units.push_back(summarize(layout.params()[coeff0 + k].name, cols));
    }
  };
  original(spec.mu_link, layout.mu_coeff(0), layout.mu_exponent(0));
  original(spec.phi_link, layout.phi_coeff(0), layout.phi_exponent(0));

  post.dic = dic(chains, spec, scaled_blocks);
  post.min_acceptance = 1.0;
  for (const auto& c : chains) {
    for (const double a : c.acceptance) post.min_acceptance = std::min(post.min_acceptance, a);
  }
  post.max_rhat = 0.0;
  bool rhat_ok = chains.size() >= 2;
  for (const auto& s : post.params) {
    if (std::isnan(s.rhat)) {
      rhat_ok = false;
      post.max_rhat = std::nan("");
    } else if (!std::isnan(post.max_rhat)) {
      post.max_rhat = std::max(post.max_rhat, s.rhat);
    }
  }
  post.converged = rhat_ok && post.max_rhat < kRhatThreshold && post.min_acceptance >= kMinAcceptance;
  post.chains = std::move(chains);
  return post;
}

FitReport fit_all(std::span<const CycleBlock> blocks, const FitConfig& config) {
  if (config.seeds.size() < 2) throw ConfigError("fitting needs at least two chain seeds");
  if (config.n_iter <= config.burn_in) throw ConfigError("iterations must exceed burn-in");
  FitReport report;
  for (const auto& b : blocks) {
    if (std::find(report.sites.begin(), report.sites.end(), b.site_id) == report.sites.end()) {
      report.sites.push_back(b.site_id);
    }
  }
  report.scaling = mean_scaling(blocks);
  for (const auto c : config.covariates) {
    const bool constant = std::all_of(blocks.begin(), blocks.end(), [&](const CycleBlock& b) {
      return b.covariates.get(c) == blocks.front().covariates.get(c);
    });
    if (constant && !blocks.empty()) {
      report.diagnostics.push_back("covariate '" + std::string(covariate_name(c)) +
                                   "' is constant across blocks and was dropped");
      continue;
    }
    report.covariates.push_back(c);
  }
  const auto scaled = apply_scaling(blocks, report.scaling);

  struct Task {
    std::size_t model = 0;
    std::size_t chain = 0;
  };
  const std::size_t n_chains = config.seeds.size();
  std::vector<ModelSpec> specs;
  std::vector<std::string> failures(config.models.size());
  for (std::size_t m = 0; m < config.models.size(); ++m) {
    specs.push_back(make_model_spec(config.models[m], report.covariates, report.sites));
    if (blocks.empty()) {
      failures[m] = "no blocks to fit";
      continue;
    }
    const bool uses_covariates = specs[m].mu_link != LinkKind::Stationary || specs[m].phi_link != LinkKind::Stationary;
    if (uses_covariates && report.covariates.empty()) {
      failures[m] = "no usable covariates";
      continue;
    }
    try {
      check_covariates(specs[m], scaled);
    } catch (const EvaluationError& e) {
      failures[m] = e.what();
    }
  }

  std::vector<Task> tasks;
  for (std::size_t m = 0; m < specs.size(); ++m) {
    if (!failures[m].empty()) continue;
    for (std::size_t c = 0; c < n_chains; ++c) tasks.push_back({m, c});
  }
  std::vector<std::optional<Chain>> results(tasks.size());
  std::vector<std::string> task_errors(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t t = next++; t < tasks.size(); t = next++) {
      const auto& task = tasks[t];
      const auto& spec = specs[task.model];
      try {
        ChainOptions opts;
        opts.n_iter = config.n_iter;
        opts.burn_in = config.burn_in;
        opts.seed = chain_seed(config.seeds[task.chain], spec.name);
        opts.init = default_init(spec, scaled, task.chain, n_chains);
        results[t] = run_chain(spec, scaled, opts);
      } catch (const std::exception& e) {
        task_errors[t] = e.what();
      }
    }
  };
  const unsigned jobs = std::max(1u, std::min<unsigned>(config.jobs, static_cast<unsigned>(std::max<std::size_t>(tasks.size(), 1))));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  for (std::size_t m = 0; m < specs.size(); ++m) {
    ModelFit fit;
    fit.name = specs[m].name;
    if (!failures[m].empty()) {
      fit.failure = failures[m];
      report.models.push_back(std::move(fit));
      continue;
    }
    std::vector<Chain> chains;
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      if (tasks[t].model != m) continue;
      if (!task_errors[t].empty() && fit.failure.empty()) fit.failure = task_errors[t];
      if (results[t]) chains.push_back(std::move(*results[t]));
    }
    if (fit.failure.empty()) {
      try {
        fit.posterior = make_posterior(specs[m], std::move(chains), scaled, report.scaling);
      } catch (const std::exception& e) {
        fit.failure = e.what();
      }
    }
    report.models.push_back(std::move(fit));
  }

  double best = std::numeric_limits<double>::infinity();
  for (const auto& fit : report.models) {
    if (!fit.posterior || !fit.posterior->converged || !std::isfinite(fit.posterior->dic.dic)) continue;
    if (fit.posterior->dic.dic < best) {
      best = fit.posterior->dic.dic;
      report.selected = fit.name;
    }
  }
  return report;
}

void write_trace_csv(std::ostream& out, const Chain& chain) {
  out << "iteration,log_posterior,log_likelihood";
  for (const auto& n : chain.names) out << ',' << n;
  out << '\n';
  for (std::size_t d = 0; d < chain.n_draws(); ++d) {
    out << (chain.burn_in + d + 1) << ',' << csv::format_double(chain.log_posterior[d]) << ','
        << csv::format_double(chain.log_likelihood[d]);
    for (std::size_t p = 0; p < chain.n_params(); ++p) out << ',' << csv::format_double(chain.at(d, p));
    out << '\n';
  }
}

}  // namespace pedrisk
