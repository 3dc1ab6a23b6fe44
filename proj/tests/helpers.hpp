#ifndef EFMCA_TESTS_HELPERS_HPP
#define EFMCA_TESTS_HELPERS_HPP

#include <random>
#include <vector>

#include "efmca/efmca.hpp"

namespace testing_helpers {

using namespace efmca;

inline const std::vector<DistKind>& all_kinds() {
  static const std::vector<DistKind> k = {DistKind::Bernoulli, DistKind::Poisson,
                                          DistKind::Exponential, DistKind::Gaussian,
                                          DistKind::Gamma};
  return k;
}

/// Random mean parameter of family Dist with moderate values.
template <ExponentialFamily Dist, class Rng>
MeanParams<Dist::L> random_mean(Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  MeanParams<Dist::L> w{};
  if constexpr (Dist::kind == DistKind::Bernoulli) {
    w[0] = 0.05 + 0.9 * u(rng);
  } else if constexpr (Dist::kind == DistKind::Gaussian) {
    w = Dist::from_moments(-5.0 + 10.0 * u(rng), 0.2 + 3.0 * u(rng));
  } else if constexpr (Dist::kind == DistKind::Gamma) {
    w = Dist::from_moments(0.5 + 8.0 * u(rng), 0.0);
    const double a = 1.0 + 20.0 * u(rng);
    w[1] = std::log(w[0]) - 1.0 / (2.0 * a) - 1.0 / (12.0 * a * a);
  } else {
    w[0] = 0.3 + 10.0 * u(rng);
  }
  return w;
}

template <class Rng>
ModelParams random_params(DistKind kind, std::size_t D, std::size_t H, Rng& rng) {
  ModelParams p = ModelParams::zeros(kind, D, H);
  std::uniform_real_distribution<double> u(0.1, 0.6);
  for (std::size_t h = 0; h < H; ++h) p.pi[static_cast<Eigen::Index>(h)] = u(rng);
  visit_distribution(kind, [&]<class Dist>(std::type_identity<Dist>) {
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t h = 0; h < H; ++h) p.set_column<Dist>(d, h, random_mean<Dist>(rng));
  });
  return p;
}

template <class Rng>
Dataset sample_dataset(const ModelParams& p, std::size_t N, Rng& rng) {
  Dataset Y(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(p.D()));
  visit_distribution(p.distribution, [&]<class Dist>(std::type_identity<Dist>) {
    for (std::size_t n = 0; n < N; ++n) {
      auto [s, y] = sample_datapoint<Dist>(p, rng);
      for (std::size_t d = 0; d < p.D(); ++d)
        Y(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d)) = y[d];
    }
  });
  return Y;
}

inline double max_abs_diff(const ModelParams& a, const ModelParams& b) {
  double m = (a.pi - b.pi).cwiseAbs().maxCoeff();
  for (std::size_t l = 0; l < a.W.size(); ++l) m = std::max(m, (a.W[l] - b.W[l]).cwiseAbs().maxCoeff());
  return m;
}

struct StationarityReport {
  double worst_ratio = 0.0;  // max |dF/dW| / tolerance over checked entries
  std::size_t checked = 0;
  std::size_t boundary = 0;
  std::size_t violations = 0;
};

/// Finite-difference gradient of F(q, Theta) in every dictionary entry at
/// Theta' = M-step(q), q the exact posteriors under `p`. Entries the M-step
/// had to clamp, or whose stencil reaches the edge of the admissible set,
/// are counted as boundary entries and skipped.
template <ExponentialFamily Dist>
StationarityReport fd_stationarity(const Dataset& Y, const ModelParams& p, ModelParams* next = nullptr) {
  std::vector<Posterior> qs;
  MStepAccumulator acc(Dist::L, p.D(), p.H());
  for (Eigen::Index n = 0; n < Y.rows(); ++n) {
    const std::span<const double> y(Y.row(n).data(), static_cast<std::size_t>(Y.cols()));
    qs.push_back(exact_posterior<Dist>(y, p));
    accumulate<Dist>(acc, y, qs.back(), p);
  }
  const ModelParams th = m_step<Dist>(acc, p);
  if (next) *next = th;
  const double F = lower_bound<Dist>(Y, qs, th);
  const double tol = 1e-3 * std::abs(F) / static_cast<double>(th.D() * th.H());
  StationarityReport rep;
  for (std::size_t d = 0; d < th.D(); ++d)
    for (std::size_t h = 0; h < th.H(); ++h) {
      const auto di = static_cast<Eigen::Index>(d), hi = static_cast<Eigen::Index>(h);
      const double den = acc.denominators(di, hi);
      if (den >= kDenominatorGuard) {
        MeanParams<Dist::L> raw;
        for (std::size_t l = 0; l < Dist::L; ++l) raw[l] = acc.numerators[l](di, hi) / den;
        if (Dist::clamp(raw) != raw) {
          rep.boundary += Dist::L;
          continue;
        }
      }
      const double var = Dist::variance(th.column<Dist>(d, h));
      for (std::size_t l = 0; l < Dist::L; ++l) {
        const double step = 1e-5 * (std::abs(th.W[l](di, hi)) + 1.0);
        // Stencil points must stay well inside the admissible set: their
        // variance within a factor of two of the centre's.
        bool inside = true;
        for (double sgn : {-1.0, 1.0}) {
          auto c = th.column<Dist>(d, h);
          c[l] += sgn * step;
          inside = inside && Dist::valid_mean(c) && Dist::variance(c) > 0.5 * var &&
                   Dist::variance(c) < 2.0 * var;
        }
        if (!inside) {
          ++rep.boundary;
          continue;
        }
        auto central = [&](double s) {
          auto up = th, dn = th;
          up.W[l](di, hi) += s;
          dn.W[l](di, hi) -= s;
          return (lower_bound<Dist>(Y, qs, up) - lower_bound<Dist>(Y, qs, dn)) / (2.0 * s);
        };
        // Richardson combination of steps h and h/2.
        const double grad = (4.0 * central(0.5 * step) - central(step)) / 3.0;
        rep.worst_ratio = std::max(rep.worst_ratio, std::abs(grad) / tol);
        rep.violations += std::abs(grad) > tol;
        ++rep.checked;
      }
    }
  return rep;
}

}  // namespace testing_helpers

#endif  // EFMCA_TESTS_HELPERS_HPP
