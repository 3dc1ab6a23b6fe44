#ifndef EFMCA_MODEL_HPP
#define EFMCA_MODEL_HPP

// The generative model: independent Bernoulli causes, and for each observable
// d the single active cause with the largest mean M[d][h] sets all L
// mean-value parameters of p(y_d).

#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "efmca/errors.hpp"
#include "efmca/expfam.hpp"
#include "efmca/latent.hpp"
#include "efmca/params.hpp"

namespace efmca {

/// M[d][h] = F(W[1][d][h], ..., W[L][d][h]), the mean of p(y) under column (d,h).
template <ExponentialFamily Dist>
Eigen::MatrixXd compute_M(const ModelParams& p) {
  Eigen::MatrixXd M(static_cast<Eigen::Index>(p.D()), static_cast<Eigen::Index>(p.H()));
  for (std::size_t d = 0; d < p.D(); ++d)
    for (std::size_t h = 0; h < p.H(); ++h)
      M(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(h)) =
          mean_function<Dist>(p.column<Dist>(d, h));
  return M;
}

inline Eigen::MatrixXd compute_M(const ModelParams& p) {
  return visit_distribution(p.distribution, [&]<class Dist>(std::type_identity<Dist>) {
    return compute_M<Dist>(p);
  });
}

inline double link_key(double m, LinkMode mode) {
  return mode == LinkMode::Max ? m : std::abs(m);
}

/// Active cause maximizing M[d][h] (or |M[d][h]|); lowest index wins ties.
inline std::size_t select_latent(std::size_t d, const LatentState& s, const Eigen::MatrixXd& M,
                                 LinkMode mode) {
  std::size_t best = 0;
  double best_key = 0.0;
  bool found = false;
  s.for_each_active([&](std::size_t h) {
    const double k = link_key(M(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(h)), mode);
    if (!found || k > best_key) {
      best = h;
      best_key = k;
      found = true;
    }
  });
  if (!found) throw DegenerateStateError("latent state has no active cause");
  return best;
}

/// A_dh(s): 1 iff h is the selected cause of observable d.
inline int selection_indicator(std::size_t d, std::size_t h, const LatentState& s,
                               const Eigen::MatrixXd& M, LinkMode mode) {
  return select_latent(d, s, M, mode) == h ? 1 : 0;
}

template <std::size_t L>
struct LinkResult {
  std::vector<std::size_t> selected_h;
  std::vector<NaturalParams<L>> eta;
};

template <ExponentialFamily Dist>
LinkResult<Dist::L> link_eta(const LatentState& s, const ModelParams& p) {
  if (s.none()) throw DegenerateStateError("latent state has no active cause");
  const Eigen::MatrixXd M = compute_M<Dist>(p);
  LinkResult<Dist::L> out;
  out.selected_h.resize(p.D());
  out.eta.resize(p.D());
  for (std::size_t d = 0; d < p.D(); ++d) {
    const std::size_t h = select_latent(d, s, M, p.link_mode);
    out.selected_h[d] = h;
    out.eta[d] = phi<Dist>(p.column<Dist>(d, h));
  }
  return out;
}

inline double log_prior(const LatentState& s, const Eigen::VectorXd& pi) {
  double lp = 0.0;
  for (Eigen::Index h = 0; h < pi.size(); ++h)
    lp += s.test(static_cast<std::size_t>(h)) ? std::log(pi[h]) : std::log1p(-pi[h]);
  return lp;
}

/// log p(s, y | Theta).
template <ExponentialFamily Dist>
double log_joint(const LatentState& s, std::span<const double> y, const ModelParams& p) {
  if (y.size() != p.D()) throw ParameterError("log_joint: observation length differs from D");
  const auto link = link_eta<Dist>(s, p);
  double lj = log_prior(s, p.pi);
  for (std::size_t d = 0; d < p.D(); ++d) lj += log_pdf<Dist>(y[d], link.eta[d]);
  return lj;
}

inline double log_joint(const LatentState& s, std::span<const double> y, const ModelParams& p) {
  return visit_distribution(p.distribution, [&]<class Dist>(std::type_identity<Dist>) {
    return log_joint<Dist>(s, y, p);
  });
}

/// Ancestral sample; the all-zero state is rejected and redrawn.
template <ExponentialFamily Dist, class Rng>
std::pair<LatentState, std::vector<double>> sample_datapoint(const ModelParams& p, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  LatentState s(p.H());
  do {
    for (std::size_t h = 0; h < p.H(); ++h) s.set(h, u(rng) < p.pi[static_cast<Eigen::Index>(h)]);
  } while (s.none());
  const auto link = link_eta<Dist>(s, p);
  std::vector<double> y(p.D());
  for (std::size_t d = 0; d < p.D(); ++d) y[d] = Dist::draw(link.eta[d], rng);
  return {std::move(s), std::move(y)};
}

/// Per-datapoint sufficient statistics and log base measure.
template <ExponentialFamily Dist>
struct DatumStats {
  std::vector<std::array<double, Dist::L>> T;
  std::vector<double> log_base;

  DatumStats() = default;
  explicit DatumStats(std::span<const double> y) : T(y.size()), log_base(y.size()) {
    for (std::size_t d = 0; d < y.size(); ++d) {
      T[d] = sufficient_statistics<Dist>(y[d]);
      log_base[d] = Dist::log_base(y[d]);
    }
  }
};

/// Quantities that depend only on Theta, computed once per parameter update
/// and shared read-only by all datapoints.
template <ExponentialFamily Dist>
class ModelTables {
 public:
  static constexpr std::size_t L = Dist::L;

  explicit ModelTables(const ModelParams& p)
      : D_(p.D()), H_(p.H()), mode_(p.link_mode), key_(D_ * H_), eta_(D_ * H_),
        log_partition_(D_ * H_), log_odds_(H_) {
    for (std::size_t d = 0; d < D_; ++d) {
      for (std::size_t h = 0; h < H_; ++h) {
        const auto w = p.column<Dist>(d, h);
        require_mean<Dist>(w);
        const std::size_t i = d * H_ + h;
        key_[i] = link_key(Dist::mean(w), mode_);
        eta_[i] = Dist::phi(w);
        log_partition_[i] = Dist::log_partition(eta_[i]);
      }
    }
    prior_base_ = 0.0;
    for (std::size_t h = 0; h < H_; ++h) {
      const double pi = p.pi[static_cast<Eigen::Index>(h)];
      prior_base_ += std::log1p(-pi);
      log_odds_[h] = std::log(pi) - std::log1p(-pi);
    }
  }

  std::size_t D() const { return D_; }
  std::size_t H() const { return H_; }
  LinkMode mode() const { return mode_; }
  double key(std::size_t d, std::size_t h) const { return key_[d * H_ + h]; }
  double log_odds(std::size_t h) const { return log_odds_[h]; }
  double prior_base() const { return prior_base_; }

  /// log p(y_d | column (d,h)).
  double log_pdf(std::size_t d, std::size_t h, const DatumStats<Dist>& ds) const {
    const std::size_t i = d * H_ + h;
    return ds.log_base[d] + natural_dot<Dist>(eta_[i], ds.T[d]) - log_partition_[i];
  }

  /// Selected cause among `active` (ascending indices, non-empty).
  std::size_t select(std::size_t d, std::span<const std::size_t> active) const {
    const double* row = key_.data() + d * H_;
    std::size_t best = active[0];
    double best_key = row[best];
    for (std::size_t i = 1; i < active.size(); ++i) {
      if (row[active[i]] > best_key) {
        best = active[i];
        best_key = row[best];
      }
    }
    return best;
  }

  double log_prior(std::span<const std::size_t> active) const {
    double lp = prior_base_;
    for (auto h : active) lp += log_odds_[h];
    return lp;
  }

  double log_joint(std::span<const std::size_t> active, const DatumStats<Dist>& ds) const {
    double lj = log_prior(active);
    for (std::size_t d = 0; d < D_; ++d) lj += log_pdf(d, select(d, active), ds);
    return lj;
  }

 private:
  std::size_t D_, H_;
  LinkMode mode_;
  std::vector<double> key_;
  std::vector<NaturalParams<L>> eta_;
  std::vector<double> log_partition_;
  std::vector<double> log_odds_;
  double prior_base_ = 0.0;
};

}  // namespace efmca

#endif  // EFMCA_MODEL_HPP
