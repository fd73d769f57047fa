#pragma once

// Reference computations the tests compare the library against. Each one is
// written from the textbook definition and shares no code with src/.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/sinh_sinh.hpp>

namespace oracle {

// G(z) straight from the formula, in long double.
inline double gev_cdf(double z, double mu, double sigma, double xi) {
  const long double u = (static_cast<long double>(z) - mu) / sigma;
  if (xi == 0.0) return static_cast<double>(std::exp(-std::exp(-u)));
  const long double t = 1.0L + xi * u;
  if (t <= 0.0L) return xi > 0 ? 0.0 : 1.0;
  return static_cast<double>(std::exp(-std::pow(t, -1.0L / xi)));
}

inline double gev_pdf(double z, double mu, double sigma, double xi) {
  const long double u = (static_cast<long double>(z) - mu) / sigma;
  if (xi == 0.0) return static_cast<double>(std::exp(-u - std::exp(-u)) / sigma);
  const long double t = 1.0L + xi * u;
  if (t <= 0.0L) return 0.0;
  return static_cast<double>(std::pow(t, -1.0L - 1.0L / xi) * std::exp(-std::pow(t, -1.0L / xi)) / sigma);
}

// Integral of `pdf` over the support of GEV(mu, sigma, xi).
template <class F>
double integrate_over_support(F pdf, double mu, double sigma, double xi) {
  if (xi == 0.0) {
    boost::math::quadrature::sinh_sinh<double> q;
    return q.integrate(pdf, 1e-13);
  }
  boost::math::quadrature::exp_sinh<double> q;
  const double edge = mu - sigma / xi;
  if (xi > 0.0) return q.integrate(pdf, edge, std::numeric_limits<double>::infinity(), 1e-13);
  return q.integrate(pdf, -std::numeric_limits<double>::infinity(), edge, 1e-13);
}

// sup |F_n - F| over the sample.
template <class Cdf>
double ks_statistic(std::vector<double> xs, Cdf cdf) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = cdf(xs[i]);
    d = std::max({d, f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f});
  }
  return d;
}

struct P {
  double x, y;
};

struct TimedPoint {
  double t, x, y;
};

struct Crossing {
  double x, y;
  double t_a, t_b;  // interpolated times on polyline a and b
};

// Every pair of segments, solved by Cramer's rule in long double. Parallel
// pairs are skipped (random inputs never overlap collinearly).
inline std::vector<Crossing> all_pairs_crossings(const std::vector<TimedPoint>& a, const std::vector<TimedPoint>& b) {
  std::vector<Crossing> out;
  for (std::size_t i = 0; i + 1 < a.size(); ++i) {
    for (std::size_t j = 0; j + 1 < b.size(); ++j) {
      const long double ax = a[i].x, ay = a[i].y, bx = a[i + 1].x, by = a[i + 1].y;
      const long double cx = b[j].x, cy = b[j].y, dx = b[j + 1].x, dy = b[j + 1].y;
      // ax + s (bx - ax) = cx + u (dx - cx), same for y
      const long double m11 = bx - ax, m12 = -(dx - cx), m21 = by - ay, m22 = -(dy - cy);
      const long double det = m11 * m22 - m12 * m21;
      if (std::fabs(det) < 1e-15L) continue;
      const long double r1 = cx - ax, r2 = cy - ay;
      const long double s = (r1 * m22 - m12 * r2) / det;
      const long double u = (m11 * r2 - r1 * m21) / det;
      if (s < 0 || s > 1 || u < 0 || u > 1) continue;
      Crossing c;
      c.x = static_cast<double>(ax + s * m11);
      c.y = static_cast<double>(ay + s * m21);
      c.t_a = static_cast<double>(a[i].t + s * (a[i + 1].t - a[i].t));
      c.t_b = static_cast<double>(b[j].t + u * (b[j + 1].t - b[j].t));
      out.push_back(c);
    }
  }
  return out;
}

// Linear search for the bracketing segment.
inline P interpolate(const std::vector<TimedPoint>& s, double t) {
  for (std::size_t i = 0; i + 1 < s.size(); ++i) {
    if (t >= s[i].t && t <= s[i + 1].t) {
      const double w = (t - s[i].t) / (s[i + 1].t - s[i].t);
      return {s[i].x + w * (s[i + 1].x - s[i].x), s[i].y + w * (s[i + 1].y - s[i].y)};
    }
  }
  return {std::nan(""), std::nan("")};
}

inline double mean(const std::vector<double>& v) {
  long double s = 0;
  for (double x : v) s += x;
  return static_cast<double>(s / v.size());
}

inline double sample_sd(const std::vector<double>& v) {
  const double m = mean(v);
  long double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return static_cast<double>(std::sqrt(s / (v.size() - 1)));
}

// Pearson r from the covariance definition.
inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double ma = mean(a), mb = mean(b);
  long double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return static_cast<double>(sab / std::sqrt(saa * sbb));
}

}  // namespace oracle
