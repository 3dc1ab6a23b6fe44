#ifndef EFMCA_TESTS_ORACLES_HPP
#define EFMCA_TESTS_ORACLES_HPP

// Reference computations written from textbook formulas, kept apart from the
// library code paths they check.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include "efmca/efmca.hpp"

namespace oracle {

using efmca::DistKind;

inline double integrate(auto f, double a, double b) {
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, a, b, 15, 1e-13);
}

/// Shape alpha solving log(w) - v = 1/(2a) + 1/(12a^2), by bisection.
inline double series_shape(double w, double v) {
  const double gap = std::log(w) - v;
  double lo = 1e-12, hi = 1e12;
  for (int i = 0; i < 400; ++i) {
    const double mid = std::sqrt(lo * hi);
    const double g = 1.0 / (2.0 * mid) + 1.0 / (12.0 * mid * mid);
    (g > gap ? lo : hi) = mid;
  }
  return std::sqrt(lo * hi);
}

/// Exact Gamma shape for (mean w, <log y> = v): psi(a) - log(a) = v - log(w).
inline double exact_gamma_shape(double w, double v) {
  const double target = v - std::log(w);
  double lo = 1e-8, hi = 1e8;
  for (int i = 0; i < 300; ++i) {
    const double mid = std::sqrt(lo * hi);
    const double g = boost::math::digamma(mid) - std::log(mid);  // increasing in a
    (g < target ? lo : hi) = mid;
  }
  return std::sqrt(lo * hi);
}

/// Density parameters a distribution uses for mean parameters w.
struct Standard {
  double a = 0.0, b = 0.0;  // Bernoulli p; Poisson lambda; Exponential mean; Gaussian (mu, var); Gamma (shape, rate)
};

inline Standard standard_from_mean(DistKind k, double w1, double w2) {
  switch (k) {
    case DistKind::Bernoulli:
    case DistKind::Poisson:
    case DistKind::Exponential:
      return {w1, 0.0};
    case DistKind::Gaussian:
      return {w1, w2 - w1 * w1};
    case DistKind::Gamma: {
      const double a = series_shape(w1, w2);
      return {a, a / w1};
    }
  }
  return {};
}

/// log density / mass of y under the standard parameters.
inline double log_density(DistKind k, double y, const Standard& s) {
  switch (k) {
    case DistKind::Bernoulli:
      return y == 1.0 ? std::log(s.a) : std::log(1.0 - s.a);
    case DistKind::Poisson:
      return y * std::log(s.a) - s.a - std::lgamma(y + 1.0);
    case DistKind::Exponential:
      return -std::log(s.a) - y / s.a;
    case DistKind::Gaussian:
      return -0.5 * std::log(2.0 * std::numbers::pi * s.b) - (y - s.a) * (y - s.a) / (2.0 * s.b);
    case DistKind::Gamma:
      return s.a * std::log(s.b) - std::lgamma(s.a) + (s.a - 1.0) * std::log(y) - s.b * y;
  }
  return 0.0;
}

/// <T(y)> under the standard parameters, by quadrature or summation.
inline std::array<double, 2> expected_stats(DistKind k, const Standard& s) {
  switch (k) {
    case DistKind::Bernoulli:
      return {s.a, 0.0};
    case DistKind::Poisson: {
      double m = 0.0, mass = 0.0;
      const double upper = s.a + 40.0 * std::sqrt(s.a) + 50.0;
      for (double y = 0.0; y <= upper; y += 1.0) {
        const double p = std::exp(log_density(k, y, s));
        m += p * y;
        mass += p;
      }
      return {m / mass, 0.0};
    }
    case DistKind::Exponential: {
      const double m = integrate([&](double y) { return y * std::exp(log_density(k, y, s)); }, 0.0,
                                 80.0 * s.a);
      return {m, 0.0};
    }
    case DistKind::Gaussian: {
      const double sd = std::sqrt(s.b);
      const double lo = s.a - 12.0 * sd, hi = s.a + 12.0 * sd;
      const double m1 = integrate([&](double y) { return y * std::exp(log_density(k, y, s)); }, lo, hi);
      const double m2 =
          integrate([&](double y) { return y * y * std::exp(log_density(k, y, s)); }, lo, hi);
      return {m1, m2};
    }
    case DistKind::Gamma: {
      boost::math::quadrature::tanh_sinh<double> ts;
      auto pdf = [&](double y) { return std::exp(log_density(k, y, s)); };
      const double m1 = ts.integrate([&](double y) { return y * pdf(y); }, 0.0,
                                     std::numeric_limits<double>::infinity());
      const double m2 = ts.integrate([&](double y) { return std::log(y) * pdf(y); }, 0.0,
                                     std::numeric_limits<double>::infinity());
      return {m1, m2};
    }
  }
  return {};
}

/// Independent ModelParams view: per (d,h) standard parameters and mean.
struct Model {
  DistKind kind;
  std::size_t D, H;
  std::vector<double> pi;
  std::vector<Standard> par;  // d*H + h
  std::vector<double> mean;   // d*H + h

  explicit Model(const efmca::ModelParams& p)
      : kind(p.distribution), D(p.D()), H(p.H()), par(D * H), mean(D * H) {
    for (std::size_t h = 0; h < H; ++h) pi.push_back(p.pi[static_cast<Eigen::Index>(h)]);
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t h = 0; h < H; ++h) {
        const auto di = static_cast<Eigen::Index>(d), hi = static_cast<Eigen::Index>(h);
        const double w1 = p.W[0](di, hi);
        const double w2 = p.W.size() > 1 ? p.W[1](di, hi) : 0.0;
        par[d * H + h] = standard_from_mean(kind, w1, w2);
        mean[d * H + h] = w1;
      }
  }

  /// Winner of observable d among the set bits of mask: largest mean, first index on ties.
  std::size_t winner(std::size_t d, std::uint64_t mask) const {
    std::size_t best = H;
    for (std::size_t h = 0; h < H; ++h) {
      if (!((mask >> h) & 1u)) continue;
      if (best == H || mean[d * H + h] > mean[d * H + best]) best = h;
    }
    return best;
  }

  double log_prior(std::uint64_t mask) const {
    double lp = 0.0;
    for (std::size_t h = 0; h < H; ++h) lp += ((mask >> h) & 1u) ? std::log(pi[h]) : std::log(1.0 - pi[h]);
    return lp;
  }

  double log_joint(std::uint64_t mask, const double* y) const {
    double lj = log_prior(mask);
    for (std::size_t d = 0; d < D; ++d) lj += log_density(kind, y[d], par[d * H + winner(d, mask)]);
    return lj;
  }

  /// Normalized posterior over masks 1 .. 2^H - 1.
  std::vector<double> posterior(const double* y) const {
    const std::uint64_t S = (std::uint64_t{1} << H) - 1;
    std::vector<double> lj(S);
    double m = -std::numeric_limits<double>::infinity();
    for (std::uint64_t s = 1; s <= S; ++s) m = std::max(m, lj[s - 1] = log_joint(s, y));
    double z = 0.0;
    for (auto& v : lj) z += (v = std::exp(v - m));
    for (auto& v : lj) v /= z;
    return lj;
  }

  double loglik(const efmca::Dataset& Y) const {
    const std::uint64_t S = (std::uint64_t{1} << H) - 1;
    double total = 0.0;
    for (Eigen::Index n = 0; n < Y.rows(); ++n) {
      std::vector<double> lj(S);
      for (std::uint64_t s = 1; s <= S; ++s) lj[s - 1] = log_joint(s, Y.row(n).data());
      const double m = *std::max_element(lj.begin(), lj.end());
      double z = 0.0;
      for (double v : lj) z += std::exp(v - m);
      total += m + std::log(z);
    }
    return total;
  }
};

/// Sufficient statistics written out per family.
inline std::array<double, 2> stats(DistKind k, double y) {
  if (k == DistKind::Gaussian) return {y, y * y};
  if (k == DistKind::Gamma) return {y, std::log(y)};
  return {y, 0.0};
}

/// One exact EM update computed from its definition: expectations of the
/// winner indicators and activations under the brute-force posterior.
inline efmca::ModelParams em_step(const efmca::ModelParams& p, const efmca::Dataset& Y) {
  const Model m(p);
  const std::size_t L = p.L();
  const std::uint64_t S = (std::uint64_t{1} << m.H) - 1;
  std::vector<double> num(L * m.D * m.H, 0.0), den(m.D * m.H, 0.0), ps(m.H, 0.0);
  for (Eigen::Index n = 0; n < Y.rows(); ++n) {
    const double* y = Y.row(n).data();
    const auto q = m.posterior(y);
    for (std::uint64_t s = 1; s <= S; ++s) {
      const double w = q[s - 1];
      for (std::size_t h = 0; h < m.H; ++h)
        if ((s >> h) & 1u) ps[h] += w;
      for (std::size_t d = 0; d < m.D; ++d) {
        const std::size_t h = m.winner(d, s);
        den[d * m.H + h] += w;
        const auto t = stats(m.kind, y[d]);
        for (std::size_t l = 0; l < L; ++l) num[(l * m.D + d) * m.H + h] += w * t[l];
      }
    }
  }
  efmca::ModelParams out = p;
  for (std::size_t h = 0; h < m.H; ++h)
    out.pi[static_cast<Eigen::Index>(h)] =
        std::clamp(ps[h] / static_cast<double>(Y.rows()), efmca::kPiFloor, efmca::kPiCeil);
  for (std::size_t d = 0; d < m.D; ++d)
    for (std::size_t h = 0; h < m.H; ++h) {
      const double dn = den[d * m.H + h];
      if (dn < efmca::kDenominatorGuard) continue;
      for (std::size_t l = 0; l < L; ++l)
        out.W[l](static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(h)) =
            num[(l * m.D + d) * m.H + h] / dn;
    }
  return out;
}

}  // namespace oracle

#endif  // EFMCA_TESTS_ORACLES_HPP
