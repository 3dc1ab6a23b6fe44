#ifndef EFMCA_EXPFAM_HPP
#define EFMCA_EXPFAM_HPP

// Exponential-family observables in natural form
//
//   p(y; eta) = h(y) exp(eta^T T(y) - A(eta)),
//
// together with the mean-value parameterization w = <T(y)> and its inverse
// Phi: w -> eta. Each distribution is a stateless struct with static members;
// the ExponentialFamily concept below lists what an implementation has to
// provide. Algorithms are templated on the distribution and reached at
// runtime through visit_distribution().

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <numbers>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>

#include "efmca/errors.hpp"
#include "efmca/numeric.hpp"

namespace efmca {

enum class DistKind { Bernoulli, Poisson, Exponential, Gaussian, Gamma };

enum class Support { Binary, NonNegInteger, NonNegReal, PositiveReal, Real };

/// Natural parameters eta (length L).
template <std::size_t L>
struct NaturalParams {
  std::array<double, L> eta{};
  double operator[](std::size_t i) const { return eta[i]; }
  double& operator[](std::size_t i) { return eta[i]; }
  friend bool operator==(const NaturalParams&, const NaturalParams&) = default;
};

/// Mean-value parameters w = <T(y)> (length L).
template <std::size_t L>
struct MeanParams {
  std::array<double, L> w{};
  double operator[](std::size_t i) const { return w[i]; }
  double& operator[](std::size_t i) { return w[i]; }
  friend bool operator==(const MeanParams&, const MeanParams&) = default;
};

// Parameter-domain clamps applied whenever dictionaries are written.
inline constexpr double kMeanFloor = 1e-4;
inline constexpr double kBernoulliCeil = 1.0 - 1e-4;
inline constexpr double kGaussianMinVariance = 1e-6;
// Smallest admissible log(W) - V for Gamma columns (caps the shape near 5e5).
inline constexpr double kGammaMinLogGap = 1e-6;

template <class D>
concept ExponentialFamily = requires(double y, const NaturalParams<D::L>& eta,
                                     const MeanParams<D::L>& w, std::mt19937_64& rng) {
  { D::kind } -> std::convertible_to<DistKind>;
  { D::name } -> std::convertible_to<std::string_view>;
  { D::support } -> std::convertible_to<Support>;
  { D::in_domain(y) } -> std::same_as<bool>;
  { D::stats(y) } -> std::same_as<std::array<double, D::L>>;
  { D::log_base(y) } -> std::same_as<double>;
  { D::valid_natural(eta) } -> std::same_as<bool>;
  { D::log_partition(eta) } -> std::same_as<double>;
  { D::valid_mean(w) } -> std::same_as<bool>;
  { D::phi(w) } -> std::same_as<NaturalParams<D::L>>;
  { D::mean(w) } -> std::same_as<double>;
  { D::variance(w) } -> std::same_as<double>;
  { D::from_moments(y, y) } -> std::same_as<MeanParams<D::L>>;
  { D::clamp(w) } -> std::same_as<MeanParams<D::L>>;
  { D::draw(eta, rng) } -> std::same_as<double>;
};

// The members below skip argument validation; the checked entry points are
// the free functions further down.

struct Bernoulli {
  static constexpr DistKind kind = DistKind::Bernoulli;
  static constexpr std::size_t L = 1;
  static constexpr std::string_view name = "bernoulli";
  static constexpr Support support = Support::Binary;

  static bool in_domain(double y) { return y == 0.0 || y == 1.0; }
  static std::array<double, 1> stats(double y) { return {y}; }
  static double log_base(double) { return 0.0; }
  static bool valid_natural(const NaturalParams<1>& e) { return std::isfinite(e[0]); }
  static double log_partition(const NaturalParams<1>& e) { return softplus(e[0]); }
  static bool valid_mean(const MeanParams<1>& w) { return w[0] > 0.0 && w[0] < 1.0; }
  static NaturalParams<1> phi(const MeanParams<1>& w) {
    return {{std::log(w[0]) - std::log1p(-w[0])}};
  }
  static double mean(const MeanParams<1>& w) { return w[0]; }
  static double variance(const MeanParams<1>& w) { return w[0] * (1.0 - w[0]); }
  static MeanParams<1> from_moments(double m, double) { return clamp({{m}}); }
  static MeanParams<1> clamp(const MeanParams<1>& w) {
    return {{std::clamp(w[0], kMeanFloor, kBernoulliCeil)}};
  }
  template <class Rng>
  static double draw(const NaturalParams<1>& e, Rng& rng) {
    const double p = 1.0 / (1.0 + std::exp(-e[0]));
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p ? 1.0 : 0.0;
  }
};

struct Poisson {
  static constexpr DistKind kind = DistKind::Poisson;
  static constexpr std::size_t L = 1;
  static constexpr std::string_view name = "poisson";
  static constexpr Support support = Support::NonNegInteger;

  static bool in_domain(double y) { return y >= 0.0 && std::isfinite(y) && std::floor(y) == y; }
  static std::array<double, 1> stats(double y) { return {y}; }
  static double log_base(double y) { return -std::lgamma(y + 1.0); }
  static bool valid_natural(const NaturalParams<1>& e) { return std::isfinite(e[0]); }
  static double log_partition(const NaturalParams<1>& e) { return std::exp(e[0]); }
  static bool valid_mean(const MeanParams<1>& w) { return w[0] > 0.0 && std::isfinite(w[0]); }
  static NaturalParams<1> phi(const MeanParams<1>& w) { return {{std::log(w[0])}}; }
  static double mean(const MeanParams<1>& w) { return w[0]; }
  static double variance(const MeanParams<1>& w) { return w[0]; }
  static MeanParams<1> from_moments(double m, double) { return clamp({{m}}); }
  static MeanParams<1> clamp(const MeanParams<1>& w) { return {{std::max(w[0], kMeanFloor)}}; }
  template <class Rng>
  static double draw(const NaturalParams<1>& e, Rng& rng) {
    return static_cast<double>(std::poisson_distribution<long long>(std::exp(e[0]))(rng));
  }
};

struct Exponential {
  static constexpr DistKind kind = DistKind::Exponential;
  static constexpr std::size_t L = 1;
  static constexpr std::string_view name = "exponential";
  static constexpr Support support = Support::NonNegReal;

  static bool in_domain(double y) { return y >= 0.0 && std::isfinite(y); }
  static std::array<double, 1> stats(double y) { return {y}; }
  static double log_base(double) { return 0.0; }
  static bool valid_natural(const NaturalParams<1>& e) { return e[0] < 0.0 && std::isfinite(e[0]); }
  static double log_partition(const NaturalParams<1>& e) { return -std::log(-e[0]); }
  static bool valid_mean(const MeanParams<1>& w) { return w[0] > 0.0 && std::isfinite(w[0]); }
  static NaturalParams<1> phi(const MeanParams<1>& w) { return {{-1.0 / w[0]}}; }
  static double mean(const MeanParams<1>& w) { return w[0]; }
  static double variance(const MeanParams<1>& w) { return w[0] * w[0]; }
  static MeanParams<1> from_moments(double m, double) { return clamp({{m}}); }
  static MeanParams<1> clamp(const MeanParams<1>& w) { return {{std::max(w[0], kMeanFloor)}}; }
  template <class Rng>
  static double draw(const NaturalParams<1>& e, Rng& rng) {
    return std::exponential_distribution<double>(-e[0])(rng);
  }
};

/// Gaussian with T(y) = (y, y^2); w = (mu, mu^2 + sigma^2).
struct Gaussian {
  static constexpr DistKind kind = DistKind::Gaussian;
  static constexpr std::size_t L = 2;
  static constexpr std::string_view name = "gaussian";
  static constexpr Support support = Support::Real;

  static bool in_domain(double y) { return std::isfinite(y); }
  static std::array<double, 2> stats(double y) { return {y, y * y}; }
  static double log_base(double) { return -0.5 * std::log(2.0 * std::numbers::pi); }
  static bool valid_natural(const NaturalParams<2>& e) {
    return std::isfinite(e[0]) && e[1] < 0.0 && std::isfinite(e[1]);
  }
  static double log_partition(const NaturalParams<2>& e) {
    return -e[0] * e[0] / (4.0 * e[1]) - 0.5 * std::log(-2.0 * e[1]);
  }
  static bool valid_mean(const MeanParams<2>& w) {
    return std::isfinite(w[0]) && std::isfinite(w[1]) && w[1] - w[0] * w[0] > 0.0;
  }
  static NaturalParams<2> phi(const MeanParams<2>& w) {
    const double inv = 1.0 / (2.0 * (w[1] - w[0] * w[0]));
    return {{2.0 * w[0] * inv, -inv}};
  }
  static double mean(const MeanParams<2>& w) { return w[0]; }
  static double variance(const MeanParams<2>& w) { return w[1] - w[0] * w[0]; }
  static MeanParams<2> from_moments(double m, double var) {
    return clamp({{m, m * m + std::max(var, kGaussianMinVariance)}});
  }
  static MeanParams<2> clamp(const MeanParams<2>& w) {
    return {{w[0], std::max(w[1], w[0] * w[0] + kGaussianMinVariance)}};
  }
  template <class Rng>
  static double draw(const NaturalParams<2>& e, Rng& rng) {
    const double var = -0.5 / e[1];
    return std::normal_distribution<double>(e[0] * var, std::sqrt(var))(rng);
  }
};

/// Gamma with T(y) = (y, log y); eta = (alpha - 1, -beta). The two lists
/// are ordered differently: alpha - 1 multiplies log y and -beta multiplies
/// y, which kNaturalOrder records.
///
/// Phi has no closed form because <log y> = psi(alpha) - log(beta). The
/// digamma function is replaced by its series log x - 1/(2x) - 1/(12x^2),
/// which turns the inversion into a quadratic in alpha whose positive root
/// is taken. The mean component is reproduced exactly; the log-moment is
/// off by O(1/(120 alpha^4)).
struct Gamma {
  static constexpr DistKind kind = DistKind::Gamma;
  static constexpr std::size_t L = 2;
  static constexpr std::string_view name = "gamma";
  static constexpr Support support = Support::PositiveReal;
  static constexpr std::array<std::size_t, 2> kNaturalOrder = {1, 0};

  static bool in_domain(double y) { return y > 0.0 && std::isfinite(y); }
  static std::array<double, 2> stats(double y) { return {y, std::log(y)}; }
  static double log_base(double) { return 0.0; }
  static bool valid_natural(const NaturalParams<2>& e) {
    return e[0] > -1.0 && std::isfinite(e[0]) && e[1] < 0.0 && std::isfinite(e[1]);
  }
  static double log_partition(const NaturalParams<2>& e) {
    const double a = e[0] + 1.0;
    return std::lgamma(a) - a * std::log(-e[1]);
  }
  static bool valid_mean(const MeanParams<2>& w) {
    return w[0] > 0.0 && std::isfinite(w[0]) && std::isfinite(w[1]) && w[1] < std::log(w[0]);
  }
  /// Shape alpha solving log(w) - v = 1/(2 alpha) + 1/(12 alpha^2).
  static double shape(const MeanParams<2>& w) {
    const double gap = std::log(w[0]) - w[1];
    return (6.0 + std::sqrt(36.0 + 48.0 * gap)) / (24.0 * gap);
  }
  static NaturalParams<2> phi(const MeanParams<2>& w) {
    const double a = shape(w);
    return {{a - 1.0, -a / w[0]}};
  }
  static double mean(const MeanParams<2>& w) { return w[0]; }
  static double variance(const MeanParams<2>& w) { return w[0] * w[0] / shape(w); }
  static MeanParams<2> from_moments(double m, double var) {
    m = std::max(m, kMeanFloor);
    const double a = m * m / std::max(var, 1e-300);
    return clamp({{m, std::log(m) - 1.0 / (2.0 * a) - 1.0 / (12.0 * a * a)}});
  }
  static MeanParams<2> clamp(const MeanParams<2>& w) {
    const double m = std::max(w[0], kMeanFloor);
    return {{m, std::min(w[1], std::log(m) - kGammaMinLogGap)}};
  }
  template <class Rng>
  static double draw(const NaturalParams<2>& e, Rng& rng) {
    double y = std::gamma_distribution<double>(e[0] + 1.0, -1.0 / e[1])(rng);
    return y > 0.0 ? y : std::numeric_limits<double>::min();
  }
};

static_assert(ExponentialFamily<Bernoulli>);
static_assert(ExponentialFamily<Poisson>);
static_assert(ExponentialFamily<Exponential>);
static_assert(ExponentialFamily<Gaussian>);
static_assert(ExponentialFamily<Gamma>);

/// Index of the natural parameter paired with T_l(y); the identity unless
/// the distribution declares kNaturalOrder.
template <class D>
constexpr std::size_t natural_index(std::size_t l) {
  if constexpr (requires { D::kNaturalOrder; })
    return D::kNaturalOrder[l];
  else
    return l;
}

/// eta^T T(y) with each statistic matched to its own natural parameter.
template <class D>
double natural_dot(const NaturalParams<D::L>& eta, const std::array<double, D::L>& T) {
  double dot = 0.0;
  for (std::size_t l = 0; l < D::L; ++l) dot += eta[natural_index<D>(l)] * T[l];
  return dot;
}

/// Runtime descriptor of a distribution.
struct DistributionSpec {
  DistKind kind;
  std::string_view name;
  std::size_t L;
  Support support;
};

template <class F>
decltype(auto) visit_distribution(DistKind kind, F&& f) {
  switch (kind) {
    case DistKind::Bernoulli: return std::forward<F>(f)(std::type_identity<Bernoulli>{});
    case DistKind::Poisson: return std::forward<F>(f)(std::type_identity<Poisson>{});
    case DistKind::Exponential: return std::forward<F>(f)(std::type_identity<Exponential>{});
    case DistKind::Gaussian: return std::forward<F>(f)(std::type_identity<Gaussian>{});
    case DistKind::Gamma: return std::forward<F>(f)(std::type_identity<Gamma>{});
  }
  throw ParameterError("unknown distribution kind");
}

inline DistributionSpec describe(DistKind kind) {
  return visit_distribution(kind, []<class D>(std::type_identity<D>) {
    return DistributionSpec{D::kind, D::name, D::L, D::support};
  });
}

inline std::string_view to_string(DistKind kind) { return describe(kind).name; }

inline std::optional<DistKind> parse_dist_kind(std::string_view s) {
  for (DistKind k : {DistKind::Bernoulli, DistKind::Poisson, DistKind::Exponential,
                     DistKind::Gaussian, DistKind::Gamma}) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

namespace detail {
template <std::size_t L>
std::string fmt_vec(const std::array<double, L>& v) {
  std::ostringstream os;
  os.precision(17);
  os << '(';
  for (std::size_t i = 0; i < L; ++i) os << (i ? ", " : "") << v[i];
  os << ')';
  return os.str();
}
}  // namespace detail

// Checked entry points.

template <ExponentialFamily D>
void require_domain(double y) {
  if (!D::in_domain(y)) {
    std::ostringstream os;
    os.precision(17);
    os << "observable " << y << " outside the support of " << D::name;
    throw DomainError(os.str());
  }
}

template <ExponentialFamily D>
void require_natural(const NaturalParams<D::L>& eta) {
  if (!D::valid_natural(eta))
    throw ParameterError("invalid natural parameters " + detail::fmt_vec(eta.eta) + " for " +
                         std::string(D::name));
}

template <ExponentialFamily D>
void require_mean(const MeanParams<D::L>& w) {
  if (!D::valid_mean(w))
    throw ParameterError("invalid mean-value parameters " + detail::fmt_vec(w.w) + " for " +
                         std::string(D::name));
}

template <ExponentialFamily D>
std::array<double, D::L> sufficient_statistics(double y) {
  require_domain<D>(y);
  return D::stats(y);
}

template <ExponentialFamily D>
double log_pdf(double y, const NaturalParams<D::L>& eta) {
  require_domain<D>(y);
  require_natural<D>(eta);
  return D::log_base(y) + natural_dot<D>(eta, D::stats(y)) - D::log_partition(eta);
}

template <ExponentialFamily D>
NaturalParams<D::L> phi(const MeanParams<D::L>& w) {
  require_mean<D>(w);
  return D::phi(w);
}

/// F(w) = <y> under p(y; Phi(w)).
template <ExponentialFamily D>
double mean_function(const MeanParams<D::L>& w) {
  require_mean<D>(w);
  return D::mean(w);
}

template <ExponentialFamily D, class Rng>
double sample(const NaturalParams<D::L>& eta, Rng& rng) {
  require_natural<D>(eta);
  return D::draw(eta, rng);
}

}  // namespace efmca

#endif  // EFMCA_EXPFAM_HPP
