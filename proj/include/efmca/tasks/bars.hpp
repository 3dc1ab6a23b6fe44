#ifndef EFMCA_TASKS_BARS_HPP
#define EFMCA_TASKS_BARS_HPP

// Bars test: H = 2R causes on an R x R grid, one per horizontal and vertical
// line of pixels.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "efmca/em.hpp"

namespace efmca::tasks {

struct BarsConfig {
  std::size_t R = 5;
  double pi_gen = 0.2;
  std::size_t N = 1000;
  DistKind noise = DistKind::Exponential;
  double bar_value = 10.0;
  double background_value = 1.0;
  // Per-entry second parameter of two-statistic noise, drawn uniformly:
  // variance for Gaussian, shape for Gamma.
  double second_low = 1.0;
  double second_high = 1.0;

  std::size_t H() const { return 2 * R; }
  std::size_t D() const { return R * R; }

  void validate() const {
    if (R == 0 || N == 0) throw ParameterError("BarsConfig: R and N must be positive");
    if (!(pi_gen > 0.0 && pi_gen < 1.0)) throw ParameterError("BarsConfig: pi_gen outside (0,1)");
    if (!(second_low > 0.0 && second_low <= second_high))
      throw ParameterError("BarsConfig: need 0 < second_low <= second_high");
    visit_distribution(noise, [&]<class Dist>(std::type_identity<Dist>) {
      for (double v : {bar_value, background_value}) {
        MeanParams<Dist::L> w{};
        w[0] = v;
        if constexpr (Dist::L == 2) w = Dist::from_moments(v, second_low);
        if (!Dist::valid_mean(w) || Dist::clamp(w)[0] != v)
          throw ParameterError("BarsConfig: value " + format_double(v) + " is not a valid " +
                               std::string(Dist::name) + " mean");
      }
    });
  }
};

/// Appendix-style defaults for each noise model.
inline BarsConfig bars_defaults(DistKind noise) {
  BarsConfig c;
  c.noise = noise;
  switch (noise) {
    case DistKind::Bernoulli:
      c.bar_value = 0.99;
      c.background_value = 0.01;
      break;
    case DistKind::Gaussian:
      c.bar_value = 12.0;
      c.background_value = 6.0;
      c.second_low = 0.5;
      c.second_high = 1.5;
      break;
    case DistKind::Gamma:
      c.second_low = 2.0;
      c.second_high = 6.0;
      break;
    default:
      break;
  }
  return c;
}

inline nlohmann::json to_json(const BarsConfig& c) {
  return {{"R", c.R},
          {"H", c.H()},
          {"D", c.D()},
          {"pi_gen", c.pi_gen},
          {"N", c.N},
          {"noise", std::string(to_string(c.noise))},
          {"bar_value", c.bar_value},
          {"background_value", c.background_value},
          {"second_low", c.second_low},
          {"second_high", c.second_high}};
}

/// Pixel set of bar h: rows first, then columns.
inline std::vector<std::size_t> bar_pixels(std::size_t R, std::size_t h) {
  std::vector<std::size_t> px;
  for (std::size_t i = 0; i < R; ++i) px.push_back(h < R ? h * R + i : i * R + (h - R));
  return px;
}

struct BarsData {
  Dataset Y;
  ModelParams truth;
  std::vector<LatentState> latents;
};

template <class Rng>
ModelParams bars_truth(const BarsConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t R = cfg.R, H = cfg.H(), D = cfg.D();
  ModelParams p = ModelParams::zeros(cfg.noise, D, H);
  p.pi.setConstant(cfg.pi_gen);
  std::uniform_real_distribution<double> second(cfg.second_low, cfg.second_high);
  visit_distribution(cfg.noise, [&]<class Dist>(std::type_identity<Dist>) {
    for (std::size_t h = 0; h < H; ++h) {
      std::vector<bool> on(D, false);
      for (auto d : bar_pixels(R, h)) on[d] = true;
      for (std::size_t d = 0; d < D; ++d) {
        const double m = on[d] ? cfg.bar_value : cfg.background_value;
        MeanParams<Dist::L> w{};
        if constexpr (Dist::kind == DistKind::Gaussian) {
          w = Dist::from_moments(m, second(rng));
        } else if constexpr (Dist::kind == DistKind::Gamma) {
          w = Dist::from_moments(m, m * m / second(rng));
        } else {
          w[0] = m;
        }
        p.set_column<Dist>(d, h, w);
      }
    }
  });
  validate(p);
  return p;
}

/// N iid datapoints from the ground-truth bars model.
template <class Rng>
BarsData gen_bars(const BarsConfig& cfg, Rng& rng) {
  BarsData out;
  out.truth = bars_truth(cfg, rng);
  out.Y.resize(static_cast<Eigen::Index>(cfg.N), static_cast<Eigen::Index>(cfg.D()));
  out.latents.reserve(cfg.N);
  visit_distribution(cfg.noise, [&]<class Dist>(std::type_identity<Dist>) {
    for (std::size_t n = 0; n < cfg.N; ++n) {
      auto [s, y] = sample_datapoint<Dist>(out.truth, rng);
      for (std::size_t d = 0; d < y.size(); ++d)
        out.Y(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d)) = y[d];
      out.latents.push_back(std::move(s));
    }
  });
  return out;
}

struct BarsReport {
  std::size_t bars_recovered = 0;
  std::size_t bars_total = 0;
  std::vector<std::size_t> matching;  // truth column -> trained column
  std::vector<bool> recovered;
  std::optional<double> trained_loglik;
  std::optional<double> truth_loglik;
  std::optional<double> loglik_gap;  // trained - truth

  bool all_recovered() const { return bars_total > 0 && bars_recovered == bars_total; }
};

inline nlohmann::json to_json(const BarsReport& r) {
  nlohmann::json j = {{"bars_recovered", r.bars_recovered},
                      {"bars_total", r.bars_total},
                      {"matching", r.matching},
                      {"recovered", r.recovered}};
  if (r.loglik_gap) {
    j["trained_loglik"] = *r.trained_loglik;
    j["truth_loglik"] = *r.truth_loglik;
    j["loglik_gap"] = *r.loglik_gap;
  }
  return j;
}

/// Pixels of column h above the midpoint of that column's range.
inline std::vector<bool> on_pixels(const Eigen::MatrixXd& M, Eigen::Index h) {
  const auto col = M.col(h);
  const double mid = 0.5 * (col.maxCoeff() + col.minCoeff());
  std::vector<bool> on(static_cast<std::size_t>(M.rows()));
  for (Eigen::Index d = 0; d < M.rows(); ++d) on[static_cast<std::size_t>(d)] = col[d] > mid;
  return on;
}

/// Greedy one-to-one matching of trained to truth columns of M by L2
/// distance; a truth bar is recovered when its matched column, split at its
/// own midpoint, has exactly the bar's pixels on. With data Y, also reports
/// the log-likelihood gap trained - truth.
inline BarsReport evaluate_bars_run(const ModelParams& trained, const ModelParams& truth,
                                    const Dataset* Y = nullptr,
                                    std::size_t max_exact_H = kDefaultMaxExactH) {
  if (trained.D() != truth.D())
    throw ParameterError("evaluate_bars_run: trained D=" + std::to_string(trained.D()) +
                         " differs from truth D=" + std::to_string(truth.D()));
  if (trained.H() < truth.H())
    throw ParameterError("evaluate_bars_run: trained model has fewer causes than truth");
  const Eigen::MatrixXd Mt = compute_M(trained);
  const Eigen::MatrixXd Mg = compute_M(truth);
  const auto Ht = Mt.cols(), Hg = Mg.cols();

  BarsReport r;
  r.bars_total = static_cast<std::size_t>(Hg);
  r.matching.assign(r.bars_total, 0);
  r.recovered.assign(r.bars_total, false);
  std::vector<bool> used_t(static_cast<std::size_t>(Ht), false), used_g(r.bars_total, false);
  for (Eigen::Index k = 0; k < Hg; ++k) {
    double best = std::numeric_limits<double>::infinity();
    Eigen::Index bg = -1, bt = -1;
    for (Eigen::Index g = 0; g < Hg; ++g) {
      if (used_g[static_cast<std::size_t>(g)]) continue;
      for (Eigen::Index t = 0; t < Ht; ++t) {
        if (used_t[static_cast<std::size_t>(t)]) continue;
        const double dist = (Mt.col(t) - Mg.col(g)).squaredNorm();
        if (dist < best) {
          best = dist;
          bg = g;
          bt = t;
        }
      }
    }
    used_g[static_cast<std::size_t>(bg)] = true;
    used_t[static_cast<std::size_t>(bt)] = true;
    r.matching[static_cast<std::size_t>(bg)] = static_cast<std::size_t>(bt);
  }
  for (std::size_t g = 0; g < r.bars_total; ++g) {
    const auto t = static_cast<Eigen::Index>(r.matching[g]);
    const bool ok = on_pixels(Mt, t) == on_pixels(Mg, static_cast<Eigen::Index>(g));
    r.recovered[g] = ok;
    r.bars_recovered += ok ? 1 : 0;
  }
  if (Y) {
    visit_distribution(truth.distribution, [&]<class Dist>(std::type_identity<Dist>) {
      if (trained.distribution != truth.distribution)
        throw ParameterError("evaluate_bars_run: log-likelihood gap needs matching distributions");
      r.trained_loglik = exact_loglik<Dist>(*Y, trained, max_exact_H);
      r.truth_loglik = exact_loglik<Dist>(*Y, truth, max_exact_H);
      r.loglik_gap = *r.trained_loglik - *r.truth_loglik;
    });
  }
  return r;
}

}  // namespace efmca::tasks

#endif  // EFMCA_TASKS_BARS_HPP
