#ifndef EFMCA_TASKS_DENOISE_HPP
#define EFMCA_TASKS_DENOISE_HPP

// Zero-shot denoising: train on the noisy image's own patches, then replace
// every patch pixel by its posterior-mean estimate
//
//   y_est_d = sum_{s in K} q(s) M[d][h(d, s)].

#include <vector>

#include <nlohmann/json.hpp>

#include "efmca/tasks/image.hpp"
#include "efmca/tvem.hpp"

namespace efmca::tasks {

struct DenoiseConfig {
  std::size_t patch_side = 8;
  std::size_t stride = 4;
  TvemConfig model;
  // Train a Gaussian-noise model on 2 sqrt(z + 3/8) and invert afterwards.
  bool anscombe = false;
};

inline nlohmann::json to_json(const DenoiseConfig& c) {
  return {{"patch_side", c.patch_side},
          {"stride", c.stride},
          {"anscombe", c.anscombe},
          {"model", to_json(c.model)}};
}

/// Posterior-mean estimate of every datapoint under its (truncated or
/// exact) posterior.
template <ExponentialFamily Dist>
Dataset posterior_mean_estimates(const std::vector<Posterior>& qs, const ModelParams& p) {
  const ModelTables<Dist> t(p);
  const Eigen::MatrixXd M = compute_M<Dist>(p);
  Dataset est = Dataset::Zero(static_cast<Eigen::Index>(qs.size()), static_cast<Eigen::Index>(p.D()));
  std::vector<std::size_t> active;
  for (std::size_t n = 0; n < qs.size(); ++n) {
    for (std::size_t i = 0; i < qs[n].size(); ++i) {
      const double w = std::exp(qs[n].log_weights[i]);
      if (w == 0.0) continue;
      active = qs[n].states[i].active();
      for (std::size_t d = 0; d < p.D(); ++d)
        est(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d)) +=
            w * M(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(t.select(d, active)));
    }
  }
  return est;
}

struct DenoiseResult {
  ImageTensor estimate;
  TvemResult run;
  std::size_t patches = 0;
};

template <ExponentialFamily Dist>
DenoiseResult denoise(const ImageTensor& noisy, const DenoiseConfig& cfg) {
  ImageTensor input = cfg.anscombe ? anscombe(noisy) : noisy;
  if constexpr (Dist::support == Support::PositiveReal)
    input.px = input.px.cwiseMax(kPositiveFloor);
  const PatchGrid grid = extract_patches(input, cfg.patch_side, cfg.stride);
  DenoiseResult out;
  out.patches = grid.origins.size();
  out.run = run_tvem<Dist>(grid.patches, cfg.model);
  out.run.trace.config["denoise"] = {{"patch_side", cfg.patch_side},
                                     {"stride", cfg.stride},
                                     {"anscombe", cfg.anscombe}};
  const Dataset est = posterior_mean_estimates<Dist>(out.run.posteriors, out.run.params);
  out.estimate = reassemble(grid, est, input.peak);
  if (cfg.anscombe) out.estimate = inverse_anscombe(out.estimate);
  out.estimate.peak = noisy.peak;
  return out;
}

inline DenoiseResult denoise(const ImageTensor& noisy, DistKind dist, const DenoiseConfig& cfg) {
  return visit_distribution(dist, [&]<class Dist>(std::type_identity<Dist>) {
    return denoise<Dist>(noisy, cfg);
  });
}

}  // namespace efmca::tasks

#endif  // EFMCA_TASKS_DENOISE_HPP
