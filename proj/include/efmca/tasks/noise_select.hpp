#ifndef EFMCA_TASKS_NOISE_SELECT_HPP
#define EFMCA_TASKS_NOISE_SELECT_HPP

// Noise-type selection: train one model per candidate distribution with
// identical budgets and compare free energies per datapoint.

#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "efmca/tvem.hpp"

namespace efmca::tasks {

struct NoiseSelectConfig {
  std::size_t H = 10;
  std::size_t restarts = 5;
  std::size_t iterations = 50;
  std::uint64_t seed = 0;
  // Exact E-step when H <= max_exact_H, truncated otherwise.
  std::size_t max_exact_H = kDefaultMaxExactH;
  EvoConfig evo;
  // Initialize each Gamma restart from the Gaussian model of the same
  // restart when Gaussian is also a candidate.
  bool gamma_warm_start = false;
  unsigned workers = 0;
};

inline nlohmann::json to_json(const NoiseSelectConfig& c) {
  return {{"H", c.H},
          {"restarts", c.restarts},
          {"iterations", c.iterations},
          {"seed", c.seed},
          {"max_exact_H", c.max_exact_H},
          {"evo", to_json(c.evo)},
          {"gamma_warm_start", c.gamma_warm_start}};
}

struct CandidateResult {
  DistKind dist = DistKind::Gaussian;
  bool skipped = false;
  std::string reason;
  std::vector<double> restart_free_energy;  // per datapoint
  double free_energy_per_datapoint = -std::numeric_limits<double>::infinity();
  std::size_t best_restart = 0;
  std::optional<ModelParams> best_params;
};

struct NoiseSelectReport {
  std::vector<CandidateResult> candidates;
  std::optional<DistKind> winner;
};

inline nlohmann::json to_json(const NoiseSelectReport& r) {
  nlohmann::json j;
  j["candidates"] = nlohmann::json::array();
  for (const auto& c : r.candidates) {
    nlohmann::json cj = {{"distribution", std::string(to_string(c.dist))}, {"skipped", c.skipped}};
    if (c.skipped) {
      cj["reason"] = c.reason;
    } else {
      cj["free_energy_per_datapoint"] = c.free_energy_per_datapoint;
      cj["restart_free_energy"] = c.restart_free_energy;
      cj["best_restart"] = c.best_restart;
    }
    j["candidates"].push_back(std::move(cj));
  }
  j["winner"] = r.winner ? nlohmann::json(std::string(to_string(*r.winner))) : nlohmann::json(nullptr);
  return j;
}

namespace detail {

/// First observable outside Dist's support, as a message; empty if none.
template <ExponentialFamily Dist>
std::string domain_violation(const Dataset& Y) {
  for (Eigen::Index n = 0; n < Y.rows(); ++n)
    for (Eigen::Index d = 0; d < Y.cols(); ++d)
      if (!Dist::in_domain(Y(n, d)))
        return "row " + std::to_string(n) + ", column " + std::to_string(d) + ": value " +
               format_double(Y(n, d)) + " outside the support of " + std::string(Dist::name);
  return {};
}

template <ExponentialFamily Dist>
std::pair<ModelParams, double> train_once(const Dataset& Y, const NoiseSelectConfig& cfg,
                                          std::uint64_t seed, const std::optional<ModelParams>& warm) {
  InitConfig init;
  init.warm_start = warm;
  if (cfg.H <= std::min(cfg.max_exact_H, kMaxEnumerableH)) {
    EmConfig c;
    c.H = cfg.H;
    c.iterations = cfg.iterations;
    c.seed = seed;
    c.init = init;
    c.max_exact_H = cfg.max_exact_H;
    c.workers = cfg.workers;
    auto r = run_em<Dist>(Y, c);
    return {std::move(r.params), r.trace.final_lower_bound()};
  }
  TvemConfig c;
  c.H = cfg.H;
  c.iterations = cfg.iterations;
  c.seed = seed;
  c.init = init;
  c.evo = cfg.evo;
  c.workers = cfg.workers;
  auto r = run_tvem<Dist>(Y, c);
  return {std::move(r.params), r.trace.final_lower_bound()};
}

}  // namespace detail

/// Best-of-R free energy per datapoint for each candidate; the winner is the
/// largest. Candidates whose support excludes some observation are skipped.
inline NoiseSelectReport select_noise_model(const Dataset& Y, const std::vector<DistKind>& candidates,
                                            const NoiseSelectConfig& cfg) {
  if (candidates.empty()) throw ParameterError("select_noise_model: no candidates");
  if (cfg.restarts == 0) throw ParameterError("select_noise_model: restarts must be positive");
  const double N = static_cast<double>(Y.rows());
  NoiseSelectReport report;
  std::vector<std::optional<ModelParams>> gaussian_runs(cfg.restarts);

  // Gaussian first so its runs can seed Gamma restarts.
  std::vector<DistKind> order = candidates;
  std::stable_partition(order.begin(), order.end(), [](DistKind k) { return k == DistKind::Gaussian; });

  for (DistKind kind : order) {
    CandidateResult cr;
    cr.dist = kind;
    visit_distribution(kind, [&]<class Dist>(std::type_identity<Dist>) {
      cr.reason = detail::domain_violation<Dist>(Y);
      if (!cr.reason.empty()) {
        cr.skipped = true;
        return;
      }
      for (std::size_t r = 0; r < cfg.restarts; ++r) {
        std::optional<ModelParams> warm;
        if (kind == DistKind::Gamma && cfg.gamma_warm_start) warm = gaussian_runs[r];
        auto [params, F] = detail::train_once<Dist>(Y, cfg, derive_seed(cfg.seed, r), warm);
        const double f = F / N;
        cr.restart_free_energy.push_back(f);
        if (f > cr.free_energy_per_datapoint) {
          cr.free_energy_per_datapoint = f;
          cr.best_restart = r;
          cr.best_params = params;
        }
        if (kind == DistKind::Gaussian) gaussian_runs[r] = std::move(params);
      }
    });
    report.candidates.push_back(std::move(cr));
  }
  // Report in the caller's order.
  std::vector<CandidateResult> ordered;
  for (DistKind k : candidates)
    for (auto& c : report.candidates)
      if (c.dist == k && (ordered.empty() || ordered.back().dist != k)) {
        ordered.push_back(c);
        break;
      }
  report.candidates = std::move(ordered);
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& c : report.candidates)
    if (!c.skipped && c.free_energy_per_datapoint > best) {
      best = c.free_energy_per_datapoint;
      report.winner = c.dist;
    }
  return report;
}

}  // namespace efmca::tasks

#endif  // EFMCA_TASKS_NOISE_SELECT_HPP
