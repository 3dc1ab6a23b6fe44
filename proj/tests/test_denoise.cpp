#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "efmca/efmca.hpp"
#include "helpers.hpp"

using namespace efmca;
using namespace efmca::tasks;

namespace {

// Piecewise-constant blocks: a few repeating patch types that a small
// dictionary can represent.
ImageTensor blocks(Eigen::Index side, double lo, double hi) {
  ImageTensor img;
  img.px.resize(side, side);
  for (Eigen::Index r = 0; r < side; ++r)
    for (Eigen::Index c = 0; c < side; ++c) img.px(r, c) = ((r / 4 + c / 4) % 3 == 0) ? hi : lo;
  img.peak = hi;
  return img;
}

DenoiseConfig small_config() {
  DenoiseConfig c;
  c.patch_side = 4;
  c.stride = 2;
  c.model.H = 6;
  c.model.iterations = 25;
  c.model.evo.S = 12;
  c.model.seed = 3;
  c.model.workers = 1;
  return c;
}

}  // namespace

TEST(PosteriorMeanEstimates, DegeneratePosteriorReturnsSelectedMeans) {
  std::mt19937_64 rng(1);
  const auto p = testing_helpers::random_params(DistKind::Poisson, 5, 3, rng);
  const Eigen::MatrixXd M = compute_M(p);
  Posterior q;
  q.states = {LatentState({1, 0, 1})};
  q.log_weights = {0.0};
  const Dataset est = posterior_mean_estimates<Poisson>({q}, p);
  for (Eigen::Index d = 0; d < 5; ++d) EXPECT_EQ(est(0, d), std::max(M(d, 0), M(d, 2)));
}

TEST(PosteriorMeanEstimates, MixesStatesByWeight) {
  auto p = ModelParams::zeros(DistKind::Exponential, 1, 2);
  p.W[0] << 2.0, 8.0;
  p.pi.setConstant(0.5);
  Posterior q;
  q.states = {LatentState({1, 0}), LatentState({0, 1}), LatentState({1, 1})};
  q.log_weights = {std::log(0.5), std::log(0.25), std::log(0.25)};
  EXPECT_NEAR(posterior_mean_estimates<Exponential>({q}, p)(0, 0), 0.5 * 2 + 0.25 * 8 + 0.25 * 8, 1e-12);
}

TEST(Denoise, ImprovesPsnrOnPoissonNoise) {
  const auto clean = blocks(32, 2.0, 12.0);
  std::mt19937_64 rng(2);
  const auto noisy = add_noise(clean, DistKind::Poisson, rng);
  const auto r = denoise(noisy, DistKind::Poisson, small_config());
  EXPECT_EQ(r.patches, 15u * 15u);
  EXPECT_EQ(r.estimate.px.rows(), 32);
  EXPECT_GT(psnr(clean, r.estimate), psnr(clean, noisy) + 3.0);
}

TEST(Denoise, AnscombePathProducesIntensityScaleEstimate) {
  const auto clean = blocks(24, 3.0, 15.0);
  std::mt19937_64 rng(4);
  const auto noisy = add_noise(clean, DistKind::Poisson, rng);
  auto cfg = small_config();
  cfg.anscombe = true;
  const auto r = denoise(noisy, DistKind::Gaussian, cfg);
  EXPECT_NEAR(r.estimate.px.mean(), clean.px.mean(), 1.0);
  EXPECT_EQ(r.estimate.peak, noisy.peak);
  EXPECT_TRUE(r.run.trace.config["denoise"]["anscombe"].get<bool>());
}

TEST(Denoise, DeterministicForFixedSeed) {
  const auto clean = blocks(16, 1.0, 6.0);
  std::mt19937_64 rng(5);
  const auto noisy = add_noise(clean, DistKind::Poisson, rng);
  auto cfg = small_config();
  cfg.model.iterations = 5;
  const auto a = denoise(noisy, DistKind::Poisson, cfg);
  cfg.model.workers = 3;
  const auto b = denoise(noisy, DistKind::Poisson, cfg);
  EXPECT_EQ(a.estimate.px, b.estimate.px);
}

TEST(Denoise, PositiveFamiliesAcceptZeroPixels) {
  ImageTensor img{Eigen::MatrixXd::Zero(8, 8), 1.0};
  img.px(3, 3) = 5.0;
  auto cfg = small_config();
  cfg.model.H = 2;
  cfg.model.iterations = 2;
  EXPECT_NO_THROW(denoise(img, DistKind::Gamma, cfg));
  cfg.patch_side = 9;
  EXPECT_THROW(denoise(img, DistKind::Poisson, cfg), ParameterError);
}
