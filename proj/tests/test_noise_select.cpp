#include <random>

#include <gtest/gtest.h>

#include "efmca/efmca.hpp"

using namespace efmca;
using namespace efmca::tasks;

namespace {

NoiseSelectConfig quick() {
  NoiseSelectConfig c;
  c.H = 4;
  c.restarts = 2;
  c.iterations = 15;
  c.workers = 1;
  return c;
}

Dataset small_bars(DistKind k, std::uint64_t seed, std::size_t N = 300) {
  auto cfg = bars_defaults(k);
  cfg.R = 2;
  cfg.N = N;
  std::mt19937_64 rng(seed);
  return gen_bars(cfg, rng).Y;
}

}  // namespace

TEST(SelectNoiseModel, SingleCandidateWins) {
  const auto Y = small_bars(DistKind::Poisson, 1);
  const auto r = select_noise_model(Y, {DistKind::Poisson}, quick());
  ASSERT_TRUE(r.winner.has_value());
  EXPECT_EQ(*r.winner, DistKind::Poisson);
  ASSERT_EQ(r.candidates.size(), 1u);
  EXPECT_EQ(r.candidates[0].restart_free_energy.size(), 2u);
  EXPECT_TRUE(r.candidates[0].best_params.has_value());
}

TEST(SelectNoiseModel, DomainIncompatibleCandidateIsSkipped) {
  Dataset Y = small_bars(DistKind::Poisson, 2);
  Y(0, 0) = 0.0;
  const auto r = select_noise_model(Y, {DistKind::Gamma, DistKind::Poisson}, quick());
  ASSERT_EQ(r.candidates.size(), 2u);
  EXPECT_EQ(r.candidates[0].dist, DistKind::Gamma);
  EXPECT_TRUE(r.candidates[0].skipped);
  EXPECT_NE(r.candidates[0].reason.find("gamma"), std::string::npos);
  EXPECT_EQ(*r.winner, DistKind::Poisson);
  const auto j = to_json(r);
  EXPECT_EQ(j["candidates"][0]["skipped"], true);
  EXPECT_EQ(j["winner"], "poisson");
}

TEST(SelectNoiseModel, AllSkippedHasNoWinner) {
  Dataset Y = small_bars(DistKind::Gaussian, 3);
  Y(0, 0) = -1.0;
  const auto r = select_noise_model(Y, {DistKind::Gamma, DistKind::Exponential}, quick());
  EXPECT_FALSE(r.winner.has_value());
  EXPECT_TRUE(to_json(r)["winner"].is_null());
}

TEST(SelectNoiseModel, PicksGeneratingFamily) {
  for (auto gen : {DistKind::Gaussian, DistKind::Gamma}) {
    const auto Y = small_bars(gen, 4, 500);
    auto c = quick();
    c.iterations = 30;
    c.gamma_warm_start = true;
    const auto r = select_noise_model(Y, {DistKind::Gaussian, DistKind::Gamma}, c);
    ASSERT_TRUE(r.winner.has_value());
    EXPECT_EQ(*r.winner, gen) << to_string(gen);
  }
}

TEST(SelectNoiseModel, Errors) {
  const auto Y = small_bars(DistKind::Poisson, 5);
  EXPECT_THROW(select_noise_model(Y, {}, quick()), ParameterError);
  auto c = quick();
  c.restarts = 0;
  EXPECT_THROW(select_noise_model(Y, {DistKind::Poisson}, c), ParameterError);
}
