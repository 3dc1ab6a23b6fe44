#ifndef EFMCA_EM_HPP
#define EFMCA_EM_HPP

// Exact EM for ef-MCA. The E-step enumerates all 2^H - 1 nonzero latent
// states; the M-step applies the fixed-point updates
//
//   W[l][d][h] <- sum_n <A_dh>_q T_l(y_d) / sum_n <A_dh>_q,
//   pi_h       <- (1/N) sum_n <s_h>_q,
//
// where A_dh(s) indicates that cause h wins observable d under state s.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "efmca/errors.hpp"
#include "efmca/expfam.hpp"
#include "efmca/latent.hpp"
#include "efmca/model.hpp"
#include "efmca/numeric.hpp"
#include "efmca/params.hpp"
#include "efmca/trace.hpp"

namespace efmca {

inline constexpr double kDenominatorGuard = 1e-12;
inline constexpr double kPiFloor = 1e-4;
inline constexpr double kPiCeil = 1.0 - 1e-4;
inline constexpr double kGaussianSigmaFloor = 1e-6;
inline constexpr double kGammaSigmaFloor = 1e-8;
inline constexpr std::size_t kDefaultMaxExactH = 20;
// Hard ceiling: exact state indices are 32-bit masks.
inline constexpr std::size_t kMaxEnumerableH = 30;
// Inside the EM drivers, states whose log joint trails the best by more than
// this (relative weight < 1e-13) are dropped from normalizers and M-step sums.
// The public exact_posterior/exact_loglik never prune.
inline constexpr double kPruneLogGap = 30.0;

/// A normalized distribution over a finite list of latent states. Used both
/// for exact posteriors (all nonzero states) and truncated ones.
struct Posterior {
  std::vector<LatentState> states;
  std::vector<double> log_weights;

  std::size_t size() const { return states.size(); }
};

using ExactPosterior = Posterior;

/// <s_h>_q and <A_dh>_q for a single datapoint.
struct Expectations {
  Eigen::VectorXd s;
  Eigen::MatrixXd A;
};

/// Sufficient sums for the M-step, reduced over datapoints.
struct MStepAccumulator {
  std::vector<Eigen::MatrixXd> numerators;  // L x (D x H)
  Eigen::MatrixXd denominators;             // D x H
  Eigen::VectorXd pi_sums;                  // H
  std::size_t count = 0;

  MStepAccumulator() = default;
  MStepAccumulator(std::size_t L, std::size_t D, std::size_t H)
      : numerators(L, Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(D),
                                            static_cast<Eigen::Index>(H))),
        denominators(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(D),
                                           static_cast<Eigen::Index>(H))),
        pi_sums(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(H))) {}

  void merge(const MStepAccumulator& o) {
    for (std::size_t l = 0; l < numerators.size(); ++l) numerators[l] += o.numerators[l];
    denominators += o.denominators;
    pi_sums += o.pi_sums;
    count += o.count;
  }
};

/// Computes sufficient statistics for every row, reporting the first
/// observable outside the support with its position.
template <ExponentialFamily Dist>
std::vector<DatumStats<Dist>> dataset_stats(const Dataset& Y) {
  std::vector<DatumStats<Dist>> out(static_cast<std::size_t>(Y.rows()));
  for (Eigen::Index n = 0; n < Y.rows(); ++n) {
    for (Eigen::Index d = 0; d < Y.cols(); ++d) {
      if (!Dist::in_domain(Y(n, d))) {
        throw DomainError("row " + std::to_string(n) + ", column " + std::to_string(d) +
                          ": value " + format_double(Y(n, d)) + " outside the support of " +
                          std::string(Dist::name));
      }
    }
    out[static_cast<std::size_t>(n)] =
        DatumStats<Dist>(std::span<const double>(Y.row(n).data(), static_cast<std::size_t>(Y.cols())));
  }
  return out;
}

template <ExponentialFamily Dist>
Expectations posterior_expectations(const Posterior& q, const ModelParams& p) {
  const ModelTables<Dist> t(p);
  Expectations e{Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p.H())),
                 Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p.D()),
                                       static_cast<Eigen::Index>(p.H()))};
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double w = std::exp(q.log_weights[i]);
    const auto active = q.states[i].active();
    if (active.empty()) throw DegenerateStateError("posterior contains the all-zero state");
    for (auto h : active) e.s[static_cast<Eigen::Index>(h)] += w;
    for (std::size_t d = 0; d < p.D(); ++d)
      e.A(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(t.select(d, active))) += w;
  }
  return e;
}

/// Adds one datapoint's expectations to the accumulator.
template <ExponentialFamily Dist>
void accumulate(MStepAccumulator& acc, std::span<const double> y, const Posterior& q,
                const ModelParams& p) {
  const auto e = posterior_expectations<Dist>(q, p);
  for (std::size_t d = 0; d < p.D(); ++d) {
    const auto T = sufficient_statistics<Dist>(y[d]);
    for (std::size_t h = 0; h < p.H(); ++h) {
      const auto di = static_cast<Eigen::Index>(d), hi = static_cast<Eigen::Index>(h);
      acc.denominators(di, hi) += e.A(di, hi);
      for (std::size_t l = 0; l < Dist::L; ++l) acc.numerators[l](di, hi) += e.A(di, hi) * T[l];
    }
  }
  acc.pi_sums += e.s;
  ++acc.count;
}

/// Fixed-point dictionary update. Entries whose expected selection count is
/// below kDenominatorGuard keep their old value; every column is clamped to
/// the distribution's admissible mean-parameter set afterwards.
template <ExponentialFamily Dist>
std::vector<Eigen::MatrixXd> m_step_dictionaries(const MStepAccumulator& acc,
                                                 const ModelParams& old) {
  std::vector<Eigen::MatrixXd> W = old.W;
  const auto D = old.D(), H = old.H();
  for (std::size_t d = 0; d < D; ++d) {
    for (std::size_t h = 0; h < H; ++h) {
      const auto di = static_cast<Eigen::Index>(d), hi = static_cast<Eigen::Index>(h);
      const double den = acc.denominators(di, hi);
      MeanParams<Dist::L> w;
      for (std::size_t l = 0; l < Dist::L; ++l)
        w[l] = den >= kDenominatorGuard ? acc.numerators[l](di, hi) / den : old.W[l](di, hi);
      w = Dist::clamp(w);
      for (std::size_t l = 0; l < Dist::L; ++l) W[l](di, hi) = w[l];
    }
  }
  return W;
}

inline Eigen::VectorXd m_step_pi(const MStepAccumulator& acc) {
  if (acc.count == 0) throw ParameterError("m_step_pi: empty accumulator");
  return (acc.pi_sums / static_cast<double>(acc.count)).cwiseMax(kPiFloor).cwiseMin(kPiCeil);
}

template <ExponentialFamily Dist>
ModelParams m_step(const MStepAccumulator& acc, const ModelParams& old) {
  ModelParams next = old;
  next.W = m_step_dictionaries<Dist>(acc, old);
  next.pi = m_step_pi(acc);
  return next;
}

/// F(q, Theta) = sum_n sum_s q(s) log p(s, y^(n) | Theta) + sum_n H(q^(n)).
template <ExponentialFamily Dist>
double lower_bound(const Dataset& Y, std::span<const Posterior> qs, const ModelParams& p) {
  if (qs.size() != static_cast<std::size_t>(Y.rows()))
    throw ParameterError("lower_bound: one posterior per datapoint required");
  const ModelTables<Dist> t(p);
  const auto stats = dataset_stats<Dist>(Y);
  double F = 0.0;
  for (std::size_t n = 0; n < qs.size(); ++n) {
    for (std::size_t i = 0; i < qs[n].size(); ++i) {
      const double lw = qs[n].log_weights[i];
      const double w = std::exp(lw);
      if (w == 0.0) continue;
      const auto active = qs[n].states[i].active();
      F += w * (t.log_joint(active, stats[n]) - lw);
    }
  }
  return F;
}

namespace detail {

struct WeightedMask {
  std::uint32_t mask;
  double weight;
};

/// Adds one datapoint's expected selections `loc` (D x H, column-major) and
/// expected activations `s_loc` to the accumulator.
template <ExponentialFamily Dist>
void add_expectations(const std::vector<double>& loc, const std::vector<double>& s_loc,
                      const DatumStats<Dist>& ds, MStepAccumulator& acc) {
  const std::size_t D = ds.T.size();
  const std::size_t H = s_loc.size();
  double* den = acc.denominators.data();
  for (std::size_t l = 0; l < Dist::L; ++l) {
    double* num = acc.numerators[l].data();
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t d = 0; d < D; ++d) num[d + h * D] += loc[d + h * D] * ds.T[d][l];
  }
  for (std::size_t i = 0; i < D * H; ++i) den[i] += loc[i];
  for (std::size_t h = 0; h < H; ++h) acc.pi_sums[static_cast<Eigen::Index>(h)] += s_loc[h];
  ++acc.count;
}

/// Selected cause and log prior for every nonzero state of a small latent
/// space, built from one ModelTables snapshot.
template <ExponentialFamily Dist>
class ExactStateTable {
 public:
  explicit ExactStateTable(const ModelTables<Dist>& t)
      : D_(t.D()), H_(t.H()), S_((std::size_t{1} << H_) - 1), S4_((S_ + 3) / 4 * 4),
        sel_(D_ * S4_, 0), prior_(S4_, 0.0) {
    // Highest bit last, so the sum runs in ascending unit order like
    // ModelTables::log_prior.
    for (std::size_t m = 1; m <= S_; ++m) {
      const auto high = static_cast<std::size_t>(std::bit_width(m) - 1);
      const std::size_t rest = m ^ (std::size_t{1} << high);
      prior_[m - 1] = (rest ? prior_[rest - 1] : t.prior_base()) + t.log_odds(high);
    }
    std::vector<std::uint8_t> row(S_);
    for (std::size_t d = 0; d < D_; ++d) {
      for (std::size_t m = 1; m <= S_; ++m) {
        const auto low = static_cast<std::size_t>(std::countr_zero(m));
        const std::size_t rest = m & (m - 1);
        if (!rest) {
          row[m - 1] = static_cast<std::uint8_t>(low);
        } else {
          // low is the smallest active index, so it wins ties.
          const std::uint8_t other = row[rest - 1];
          row[m - 1] = t.key(d, low) >= t.key(d, other) ? static_cast<std::uint8_t>(low) : other;
        }
      }
      for (std::size_t i = 0; i < S_; ++i) sel_[slot(i, d)] = row[i];
    }
  }

  std::size_t states() const { return S_; }
  std::size_t selected(std::size_t d, std::uint32_t mask) const { return sel_[slot(mask - 1, d)]; }

  /// Log joints of all nonzero states (index mask - 1).
  void log_joints(const ModelTables<Dist>& t, const DatumStats<Dist>& ds,
                  std::vector<double>& logp, std::vector<double>& out) const {
    logp.resize(D_ * H_);
    for (std::size_t d = 0; d < D_; ++d)
      for (std::size_t h = 0; h < H_; ++h) logp[d * H_ + h] = t.log_pdf(d, h, ds);
    out.resize(S4_);
    // Four states per pass; each state's sum still runs over d in order.
    for (std::size_t i = 0; i < S4_; i += 4) {
      double t0 = prior_[i], t1 = prior_[i + 1], t2 = prior_[i + 2], t3 = prior_[i + 3];
      const std::uint8_t* p = sel_.data() + i * D_;
      const double* lp = logp.data();
      for (std::size_t d = 0; d < D_; ++d, p += 4, lp += H_) {
        t0 += lp[p[0]];
        t1 += lp[p[1]];
        t2 += lp[p[2]];
        t3 += lp[p[3]];
      }
      out[i] = t0;
      out[i + 1] = t1;
      out[i + 2] = t2;
      out[i + 3] = t3;
    }
    out.resize(S_);
  }

  void accumulate(std::span<const WeightedMask> post, const DatumStats<Dist>& ds,
                  std::vector<double>& loc, std::vector<double>& s_loc, MStepAccumulator& acc) const {
    loc.assign(D_ * H_, 0.0);
    s_loc.assign(H_, 0.0);
    for (const auto& [mask, q] : post) {
      const std::uint8_t* p = sel_.data() + slot(mask - 1, 0);
      for (std::size_t d = 0; d < D_; ++d) loc[d + p[4 * d] * D_] += q;
      for (std::uint32_t m = mask; m; m &= m - 1) s_loc[static_cast<std::size_t>(std::countr_zero(m))] += q;
    }
    add_expectations(loc, s_loc, ds, acc);
  }

 private:
  // Selections are stored in blocks of four states, d-major inside a block.
  std::size_t slot(std::size_t i, std::size_t d) const { return (i / 4) * 4 * D_ + 4 * d + i % 4; }

  std::size_t D_, H_, S_, S4_;
  std::vector<std::uint8_t> sel_;
  std::vector<double> prior_;
};

inline void require_enumerable(std::size_t H, std::size_t max_H) {
  if (H > std::min(max_H, kMaxEnumerableH))
    throw CapacityError("exact E-step over 2^" + std::to_string(H) +
                        " states exceeds the enumeration guard (H <= " +
                        std::to_string(std::min(max_H, kMaxEnumerableH)) +
                        "); use the truncated E-step instead");
}

/// Exact posterior of one datapoint restricted to non-negligible states,
/// stored in `out`. Returns its contribution to the
/// free energy, sum_s q(s) (log p(s, y) - log q(s)).
template <ExponentialFamily Dist>
double exact_estep(const ExactStateTable<Dist>& table, const ModelTables<Dist>& t,
                   const DatumStats<Dist>& ds, std::vector<double>& logp,
                   std::vector<double>& lj, std::vector<WeightedMask>& out) {
  table.log_joints(t, ds, logp, lj);
  const double m = *std::max_element(lj.begin(), lj.end());
  const double cut = m - kPruneLogGap;
  double sum = 0.0;
  out.clear();
  for (std::size_t i = 0; i < lj.size(); ++i) {
    if (lj[i] < cut) continue;
    const double e = std::exp(lj[i] - m);
    sum += e;
    out.push_back({static_cast<std::uint32_t>(i + 1), e});
  }
  const double log_sum = std::log(sum);
  double F = 0.0;
  for (auto& [mask, w] : out) {
    const double lw = (lj[mask - 1] - m) - log_sum;
    w /= sum;
    F += w * (lj[mask - 1] - lw);
  }
  return F;
}

}  // namespace detail

/// Full posterior over all nonzero states, ordered by state mask.
template <ExponentialFamily Dist>
ExactPosterior exact_posterior(std::span<const double> y, const ModelParams& p,
                               std::size_t max_H = kDefaultMaxExactH) {
  detail::require_enumerable(p.H(), max_H);
  if (y.size() != p.D()) throw ParameterError("exact_posterior: observation length differs from D");
  const ModelTables<Dist> t(p);
  const detail::ExactStateTable<Dist> table(t);
  const DatumStats<Dist> ds(y);
  std::vector<double> logp, lj;
  table.log_joints(t, ds, logp, lj);
  const double lse = log_sum_exp(lj);
  ExactPosterior q;
  q.states.reserve(lj.size());
  q.log_weights.reserve(lj.size());
  for (std::size_t i = 0; i < lj.size(); ++i) {
    q.states.push_back(LatentState::from_mask(i + 1, p.H()));
    q.log_weights.push_back(lj[i] - lse);
  }
  return q;
}

/// sum_n log sum_{s != 0} p(s, y^(n) | Theta), without pruning.
template <ExponentialFamily Dist>
double exact_loglik(const Dataset& Y, const ModelParams& p, std::size_t max_H = kDefaultMaxExactH,
                    unsigned workers = 1) {
  detail::require_enumerable(p.H(), max_H);
  const auto stats = dataset_stats<Dist>(Y);
  const ModelTables<Dist> t(p);
  const detail::ExactStateTable<Dist> table(t);
  const ChunkPlan plan(stats.size());
  std::vector<double> partial(plan.chunks, 0.0);
  parallel_for(plan.chunks, resolve_workers(workers), [&](std::size_t c) {
    std::vector<double> logp, lj;
    double acc = 0.0;
    for (std::size_t n = plan.begin(c); n < plan.end(c); ++n) {
      table.log_joints(t, stats[n], logp, lj);
      acc += log_sum_exp(lj);
    }
    partial[c] = acc;
  });
  return std::accumulate(partial.begin(), partial.end(), 0.0);
}

/// sigma^2_dh = sum_n <A_dh> (y_d - W_dh)^2 / sum_n <A_dh>, floored at 1e-6.
/// `exp_A` holds one D x H expectation matrix per datapoint.
inline Eigen::MatrixXd gaussian_sigma_update(const Dataset& Y, std::span<const Eigen::MatrixXd> exp_A,
                                             const Eigen::MatrixXd& W_new) {
  Eigen::MatrixXd num = Eigen::MatrixXd::Zero(W_new.rows(), W_new.cols());
  Eigen::MatrixXd den = num;
  for (Eigen::Index n = 0; n < Y.rows(); ++n) {
    const auto& A = exp_A[static_cast<std::size_t>(n)];
    for (Eigen::Index d = 0; d < W_new.rows(); ++d)
      for (Eigen::Index h = 0; h < W_new.cols(); ++h) {
        const double dev = Y(n, d) - W_new(d, h);
        num(d, h) += A(d, h) * dev * dev;
        den(d, h) += A(d, h);
      }
  }
  Eigen::MatrixXd out(W_new.rows(), W_new.cols());
  for (Eigen::Index i = 0; i < out.size(); ++i)
    out(i) = std::max(den(i) > 0.0 ? num(i) / den(i) : 0.0, kGaussianSigmaFloor);
  return out;
}

/// sigma^2_dh = 2 sum_n <A_dh> W^2 (log W - log y_d) / sum_n <A_dh>, floored
/// at 1e-8. Requires positive observations.
inline Eigen::MatrixXd gamma_sigma_update(const Dataset& Y, std::span<const Eigen::MatrixXd> exp_A,
                                          const Eigen::MatrixXd& W_new) {
  Eigen::MatrixXd num = Eigen::MatrixXd::Zero(W_new.rows(), W_new.cols());
  Eigen::MatrixXd den = num;
  for (Eigen::Index n = 0; n < Y.rows(); ++n) {
    const auto& A = exp_A[static_cast<std::size_t>(n)];
    for (Eigen::Index d = 0; d < W_new.rows(); ++d) {
      if (!(Y(n, d) > 0.0)) throw DomainError("gamma_sigma_update: non-positive observation");
      const double logy = std::log(Y(n, d));
      for (Eigen::Index h = 0; h < W_new.cols(); ++h) {
        const double w = W_new(d, h);
        num(d, h) += A(d, h) * w * w * (std::log(w) - logy);
        den(d, h) += A(d, h);
      }
    }
  }
  Eigen::MatrixXd out(W_new.rows(), W_new.cols());
  for (Eigen::Index i = 0; i < out.size(); ++i)
    out(i) = std::max(den(i) > 0.0 ? 2.0 * num(i) / den(i) : 0.0, kGammaSigmaFloor);
  return out;
}

/// Same update from accumulated sums: Gaussian numerators hold sum <A> y and
/// sum <A> y^2.
inline Eigen::MatrixXd gaussian_sigma_update(const MStepAccumulator& acc, const Eigen::MatrixXd& W_new) {
  if (acc.numerators.size() != 2) throw ParameterError("gaussian_sigma_update: expected L = 2 sums");
  Eigen::MatrixXd out(W_new.rows(), W_new.cols());
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    const double den = acc.denominators(i), w = W_new(i);
    const double num = acc.numerators[1](i) - 2.0 * w * acc.numerators[0](i) + w * w * den;
    out(i) = std::max(den > 0.0 ? num / den : 0.0, kGaussianSigmaFloor);
  }
  return out;
}

/// Gamma numerators hold sum <A> y and sum <A> log y.
inline Eigen::MatrixXd gamma_sigma_update(const MStepAccumulator& acc, const Eigen::MatrixXd& W_new) {
  if (acc.numerators.size() != 2) throw ParameterError("gamma_sigma_update: expected L = 2 sums");
  Eigen::MatrixXd out(W_new.rows(), W_new.cols());
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    const double den = acc.denominators(i), w = W_new(i);
    const double num = w * w * (std::log(w) * den - acc.numerators[1](i));
    out(i) = std::max(den > 0.0 ? 2.0 * num / den : 0.0, kGammaSigmaFloor);
  }
  return out;
}

/// Gaussian variances from the generic (W, V) dictionaries.
inline Eigen::MatrixXd gaussian_sigma_from_dictionaries(const Eigen::MatrixXd& W,
                                                        const Eigen::MatrixXd& V) {
  return (V - W.cwiseProduct(W)).cwiseMax(kGaussianSigmaFloor);
}

// ---------------------------------------------------------------------------
// Initialization

struct InitConfig {
  std::optional<double> pi;  // default min(0.5, 3/H)
  double jitter_low = 0.95;
  double jitter_high = 1.05;
  std::optional<ModelParams> warm_start;
};

inline double default_pi(std::size_t H) { return std::min(0.5, 3.0 / static_cast<double>(H)); }

/// Moves parameters trained under one distribution onto another by matching
/// each column's mean and variance; pi is copied.
template <ExponentialFamily Dst>
ModelParams transfer_params(const ModelParams& src) {
  ModelParams out = ModelParams::zeros(Dst::kind, src.D(), src.H(),
                                       Dst::support == Support::Real ? src.link_mode : LinkMode::Max);
  out.pi = src.pi.cwiseMax(kPiFloor).cwiseMin(kPiCeil);
  visit_distribution(src.distribution, [&]<class Src>(std::type_identity<Src>) {
    for (std::size_t d = 0; d < src.D(); ++d) {
      for (std::size_t h = 0; h < src.H(); ++h) {
        const auto col = src.column<Src>(d, h);
        if constexpr (std::is_same_v<Src, Dst>) {
          out.set_column<Dst>(d, h, Dst::clamp(col));
        } else {
          out.set_column<Dst>(d, h, Dst::from_moments(Src::mean(col), Src::variance(col)));
        }
      }
    }
  });
  return out;
}

/// W columns from H distinct datapoints with multiplicative jitter; second
/// and higher statistics from each observable's sample variance.
template <ExponentialFamily Dist, class Rng>
ModelParams initialize_params(const Dataset& Y, std::size_t H, const InitConfig& init,
                              LinkMode mode, Rng& rng) {
  const auto N = static_cast<std::size_t>(Y.rows());
  const auto D = static_cast<std::size_t>(Y.cols());
  if (N == 0 || D == 0) throw ParameterError("initialize_params: empty dataset");
  if (init.warm_start) {
    if (init.warm_start->H() != H || init.warm_start->D() != D)
      throw ParameterError("warm start parameters have shape D=" +
                           std::to_string(init.warm_start->D()) + ", H=" +
                           std::to_string(init.warm_start->H()) + "; expected D=" +
                           std::to_string(D) + ", H=" + std::to_string(H));
    auto p = transfer_params<Dist>(*init.warm_start);
    if (init.pi) p.pi.setConstant(*init.pi);
    validate(p);
    return p;
  }
  std::vector<std::size_t> pick(N);
  std::iota(pick.begin(), pick.end(), std::size_t{0});
  for (std::size_t h = 0; h < std::min(H, N); ++h) {
    std::uniform_int_distribution<std::size_t> u(h, N - 1);
    std::swap(pick[h], pick[u(rng)]);
  }
  pick.resize(std::min(H, N));
  while (pick.size() < H) pick.push_back(std::uniform_int_distribution<std::size_t>(0, N - 1)(rng));

  const Eigen::RowVectorXd mean = Y.colwise().mean();
  const Eigen::RowVectorXd var = (Y.rowwise() - mean).array().square().colwise().mean();
  std::uniform_real_distribution<double> jitter(init.jitter_low, init.jitter_high);

  ModelParams p = ModelParams::zeros(Dist::kind, D, H, mode);
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t d = 0; d < D; ++d) {
      const auto di = static_cast<Eigen::Index>(d);
      const double y = Y(static_cast<Eigen::Index>(pick[h]), di) * jitter(rng);
      p.set_column<Dist>(d, h, Dist::from_moments(y, var[di]));
    }
  p.pi.setConstant(std::clamp(init.pi.value_or(default_pi(H)), kPiFloor, kPiCeil));
  validate(p);
  return p;
}

// ---------------------------------------------------------------------------
// Exact EM driver

struct EmConfig {
  std::size_t H = 10;
  std::size_t iterations = 50;
  std::uint64_t seed = 0;
  LinkMode link_mode = LinkMode::Max;
  InitConfig init;
  std::size_t fixed_point_passes = 1;
  double tol = 1e-8;  // relative lower-bound change; 0 disables early stopping
  std::size_t patience = 5;
  std::size_t max_exact_H = kDefaultMaxExactH;
  bool record_exact_loglik = false;
  unsigned workers = 0;  // 0: EFMCA_WORKERS or 1
  std::function<void(const IterationRecord&)> on_iteration;
};

inline nlohmann::json to_json(const InitConfig& c) {
  nlohmann::json j = {{"jitter", {c.jitter_low, c.jitter_high}},
                      {"warm_start", c.warm_start.has_value()}};
  if (c.pi) j["pi"] = *c.pi;
  if (c.warm_start) j["warm_start_distribution"] = std::string(to_string(c.warm_start->distribution));
  return j;
}

inline nlohmann::json to_json(const EmConfig& c) {
  return {{"mode", "exact"},
          {"H", c.H},
          {"iterations", c.iterations},
          {"seed", c.seed},
          {"link_mode", std::string(to_string(c.link_mode))},
          {"init", to_json(c.init)},
          {"fixed_point_passes", c.fixed_point_passes},
          {"tol", c.tol},
          {"patience", c.patience},
          {"max_exact_H", c.max_exact_H}};
}

struct EmResult {
  ModelParams params;
  RunTrace trace;
};

namespace detail {

/// Tracks the relative-change stopping rule.
class ConvergenceMonitor {
 public:
  ConvergenceMonitor(double tol, std::size_t patience) : tol_(tol), patience_(patience) {}

  bool update(double F) {
    if (tol_ > 0.0 && have_prev_) {
      const double rel = std::abs(F - prev_) / std::max(std::abs(F), 1e-300);
      streak_ = rel < tol_ ? streak_ + 1 : 0;
    }
    prev_ = F;
    have_prev_ = true;
    return tol_ > 0.0 && streak_ >= patience_;
  }

 private:
  double tol_;
  std::size_t patience_;
  std::size_t streak_ = 0;
  double prev_ = 0.0;
  bool have_prev_ = false;
};

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

template <ExponentialFamily Dist>
EmResult run_em(const Dataset& Y, const EmConfig& cfg) {
  if (Y.rows() == 0) throw ParameterError("run_em: empty dataset");
  detail::require_enumerable(cfg.H, cfg.max_exact_H);
  if (cfg.fixed_point_passes == 0) throw ParameterError("run_em: fixed_point_passes must be >= 1");
  const auto t0 = std::chrono::steady_clock::now();
  const auto stats = dataset_stats<Dist>(Y);
  const unsigned workers = resolve_workers(cfg.workers);

  std::mt19937_64 rng(derive_seed(cfg.seed, 0x696e6974));
  ModelParams params = initialize_params<Dist>(Y, cfg.H, cfg.init, cfg.link_mode, rng);

  EmResult result;
  result.trace.seed = cfg.seed;
  result.trace.config = to_json(cfg);
  result.trace.config["distribution"] = std::string(Dist::name);

  const std::size_t N = stats.size();
  const ChunkPlan plan(N);
  std::vector<std::vector<detail::WeightedMask>> posts(N);
  detail::ConvergenceMonitor monitor(cfg.tol, cfg.patience);

  for (std::size_t it = 0;; ++it) {
    const ModelTables<Dist> tables(params);
    const detail::ExactStateTable<Dist> table(tables);

    std::vector<double> chunk_F(plan.chunks, 0.0);
    parallel_for(plan.chunks, workers, [&](std::size_t c) {
      std::vector<double> logp, lj;
      double F = 0.0;
      for (std::size_t n = plan.begin(c); n < plan.end(c); ++n)
        F += detail::exact_estep(table, tables, stats[n], logp, lj, posts[n]);
      chunk_F[c] = F;
    });

    IterationRecord rec;
    rec.iter = it;
    rec.lower_bound = std::accumulate(chunk_F.begin(), chunk_F.end(), 0.0);
    if (cfg.record_exact_loglik) rec.exact_loglik = exact_loglik<Dist>(Y, params, cfg.max_exact_H, workers);
    rec.pi_hash = hash_vector(params.pi);
    if (!result.trace.records.empty())
      rec.decreased = rec.lower_bound < result.trace.records.back().lower_bound;
    rec.wall_time = detail::seconds_since(t0);
    result.trace.records.push_back(rec);
    if (cfg.on_iteration) cfg.on_iteration(rec);

    if (monitor.update(rec.lower_bound)) {
      result.trace.converged = true;
      break;
    }
    if (it >= cfg.iterations) break;

    for (std::size_t pass = 0; pass < cfg.fixed_point_passes; ++pass) {
      // Later passes keep q fixed and re-evaluate selections under the
      // updated dictionaries.
      std::optional<ModelTables<Dist>> pass_tables;
      std::optional<detail::ExactStateTable<Dist>> pass_table;
      if (pass > 0) {
        pass_tables.emplace(params);
        pass_table.emplace(*pass_tables);
      }
      const auto& sel = pass > 0 ? *pass_table : table;
      std::vector<MStepAccumulator> chunk_acc(plan.chunks,
                                              MStepAccumulator(Dist::L, params.D(), params.H()));
      parallel_for(plan.chunks, workers, [&](std::size_t c) {
        std::vector<double> loc, s_loc;
        for (std::size_t n = plan.begin(c); n < plan.end(c); ++n)
          sel.accumulate(posts[n], stats[n], loc, s_loc, chunk_acc[c]);
      });
      MStepAccumulator acc(Dist::L, params.D(), params.H());
      for (const auto& a : chunk_acc) acc.merge(a);
      params = m_step<Dist>(acc, params);
    }
  }
  result.params = std::move(params);
  return result;
}

inline EmResult run_em(const Dataset& Y, DistKind dist, const EmConfig& cfg) {
  return visit_distribution(dist, [&]<class Dist>(std::type_identity<Dist>) {
    return run_em<Dist>(Y, cfg);
  });
}

}  // namespace efmca

#endif  // EFMCA_EM_HPP
